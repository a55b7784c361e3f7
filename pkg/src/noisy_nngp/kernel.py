"""Scalar mathematics of the noisy ReLU NNGP kernel.

The kernel is built layer by layer from three tracked numbers per input
pair: the two variances ``k(x, x)``, ``k(y, y)`` and the covariance
``k(x, y)``.  Injected noise only enters through its second moment
``mu2 = E[eps^2]`` and only touches the variance recursion; the covariance
recursion is the ReLU arc-cosine map.

All functions accept scalars; the ``*_update`` helpers also broadcast over
numpy arrays so :mod:`noisy_nngp.gram` can run the recursion on whole
matrices at once.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DatasetError, InvariantError, KernelParamError

__all__ = [
    "NoiseMode",
    "NoiseSpec",
    "KernelParams",
    "KernelState",
    "Regime",
    "TableCase",
    "RegimeLabel",
    "g_rho",
    "rho_g",
    "base_kernel",
    "step_diag",
    "step_offdiag",
    "step_state",
    "diag_update",
    "offdiag_update",
    "closed_form_diag",
    "classify_regime",
    "critical_params",
    "is_critical",
    "CRITICAL_RTOL",
]

#: relative tolerance used for the exact-criticality comparison sigma_w2 * mu2 == 2
CRITICAL_RTOL = 1e-12
#: |rho| up to 1 + RHO_CLAMP_TOL is clamped silently, beyond that it is a bug
RHO_CLAMP_TOL = 1e-9
#: absolute slack on the Cauchy-Schwarz check of a KernelState
CS_TOL = 1e-12


class NoiseMode(str, enum.Enum):
    NONE = "none"
    ADDITIVE = "add"
    MULTIPLICATIVE = "mult"

    @classmethod
    def parse(cls, value) -> "NoiseMode":
        if isinstance(value, cls):
            return value
        aliases = {
            "none": cls.NONE,
            "add": cls.ADDITIVE,
            "additive": cls.ADDITIVE,
            "mult": cls.MULTIPLICATIVE,
            "multiplicative": cls.MULTIPLICATIVE,
        }
        try:
            return aliases[str(value).strip().lower()]
        except KeyError:
            raise KernelParamError(f"unknown noise mode {value!r}") from None


@dataclass(frozen=True)
class NoiseSpec:
    """How noise is combined with a layer input, and its second moment."""

    mode: NoiseMode = NoiseMode.NONE
    mu2: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", NoiseMode.parse(self.mode))
        mu2 = float(self.mu2)
        object.__setattr__(self, "mu2", mu2)
        if not math.isfinite(mu2) or mu2 < 0:
            raise KernelParamError(f"mu2 must be finite and >= 0, got {mu2}")
        if self.mode is NoiseMode.MULTIPLICATIVE and mu2 < 1:
            # mean-one noise: E[eps^2] = 1 + Var[eps]
            raise KernelParamError(f"multiplicative noise needs mu2 >= 1, got {mu2}")

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls(NoiseMode.NONE, 1.0)

    @classmethod
    def multiplicative(cls, mu2: float) -> "NoiseSpec":
        return cls(NoiseMode.MULTIPLICATIVE, mu2)

    @classmethod
    def additive(cls, mu2: float) -> "NoiseSpec":
        return cls(NoiseMode.ADDITIVE, mu2)

    @classmethod
    def dropout(cls, keep_prob: float) -> "NoiseSpec":
        """Bernoulli dropout rescaled by 1/p has mu2 = 1/p."""
        if not 0 < keep_prob <= 1:
            raise KernelParamError(f"keep probability must be in (0, 1], got {keep_prob}")
        return cls(NoiseMode.MULTIPLICATIVE, 1.0 / keep_prob)

    @property
    def effective_mu2(self) -> float:
        """Multiplicative factor on the variance recursion (1 unless multiplicative)."""
        return self.mu2 if self.mode is NoiseMode.MULTIPLICATIVE else 1.0

    @property
    def is_noiseless(self) -> bool:
        if self.mode is NoiseMode.NONE:
            return True
        if self.mode is NoiseMode.MULTIPLICATIVE:
            return self.mu2 == 1.0
        return self.mu2 == 0.0


@dataclass(frozen=True)
class KernelParams:
    sigma_w2: float
    sigma_b2: float = 0.0
    noise: NoiseSpec = NoiseSpec()
    depth: int = 1

    def __post_init__(self):
        sw, sb = float(self.sigma_w2), float(self.sigma_b2)
        if not (math.isfinite(sw) and sw > 0):
            raise KernelParamError(f"sigma_w2 must be > 0, got {self.sigma_w2}")
        if not (math.isfinite(sb) and sb >= 0):
            raise KernelParamError(f"sigma_b2 must be >= 0, got {self.sigma_b2}")
        if int(self.depth) != self.depth or self.depth < 1:
            raise KernelParamError(f"depth must be a positive integer, got {self.depth}")
        object.__setattr__(self, "sigma_w2", sw)
        object.__setattr__(self, "sigma_b2", sb)
        object.__setattr__(self, "depth", int(self.depth))

    @classmethod
    def critical(cls, noise: NoiseSpec, depth: int = 1, sigma_b2: float = 0.0) -> "KernelParams":
        sw, _ = critical_params(noise)
        return cls(sw, sigma_b2, noise, depth)

    def with_depth(self, depth: int) -> "KernelParams":
        return KernelParams(self.sigma_w2, self.sigma_b2, self.noise, depth)


@dataclass(frozen=True)
class KernelState:
    """Variances and covariance of one input pair at layer ``layer``."""

    k_xx: float
    k_yy: float
    k_xy: float
    layer: int = 0

    def check(self, tol: float = CS_TOL) -> None:
        if self.k_xx < 0 or self.k_yy < 0:
            raise InvariantError(f"negative variance in {self}")
        bound = math.sqrt(self.k_xx) * math.sqrt(self.k_yy)
        # absolute slack near unit scale, relative once variances are large
        if abs(self.k_xy) > bound + tol * max(1.0, bound):
            raise InvariantError(f"Cauchy-Schwarz violated in {self}")

    @property
    def rho(self) -> float:
        denom = math.sqrt(self.k_xx) * math.sqrt(self.k_yy)
        return self.k_xy / denom if denom > 0 else 0.0


class Regime(str, enum.Enum):
    VANISHING = "Vanishing"
    CONSTANT = "ConstantLimit"
    DIVERGENT = "Divergent"
    FIXED = "FixedPreserving"


class TableCase(str, enum.Enum):
    A1 = "A1"
    A2 = "A2"
    M1 = "M1"
    M2 = "M2"
    M3 = "M3"
    M4 = "M4"
    M5 = "M5"
    NOISELESS_CRITICAL = "NoiselessCritical"
    NOISELESS_ORDERED = "NoiselessOrdered"
    NOISELESS_DIVERGENT = "NoiselessDivergent"


@dataclass(frozen=True)
class RegimeLabel:
    label: Regime
    table_case: TableCase
    value: Optional[float] = None  # limit of k^L(x, x), ConstantLimit only

    def __str__(self):
        if self.label is Regime.CONSTANT:
            return f"{self.table_case.value} {self.label.value}({self.value:.12g})"
        return f"{self.table_case.value} {self.label.value}"


# --------------------------------------------------------------------------
# arc-cosine correlation map
# --------------------------------------------------------------------------


def _clamp_rho(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(np.abs(rho) > 1 + RHO_CLAMP_TOL):
        worst = float(np.max(np.abs(rho)))
        raise InvariantError(f"correlation {worst!r} outside [-1, 1] beyond rounding slack")
    return np.clip(rho, -1.0, 1.0)


def rho_g(rho):
    """``rho * g(rho) = (rho * arcsin(rho) + sqrt(1 - rho^2)) / pi``.

    Continuous on [-1, 1] (equals 1/pi at 0); this is the only form the
    covariance recursion needs.  Broadcasts over arrays.
    """
    r = _clamp_rho(rho)
    out = (r * np.arcsin(r) + np.sqrt(1.0 - r * r)) / np.pi
    return float(out) if out.ndim == 0 else out


def g_rho(rho):
    """The ReLU correlation function g; undefined at rho = 0 (use :func:`rho_g`)."""
    r = _clamp_rho(rho)
    if np.any(r == 0):
        raise ValueError("g(rho) is singular at rho = 0; use rho_g")
    out = (r * np.arcsin(r) + np.sqrt(1.0 - r * r)) / (np.pi * r)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# recursion
# --------------------------------------------------------------------------


def base_kernel(x, y, noise: NoiseSpec, same_point: Optional[bool] = None) -> float:
    """Input-layer kernel, normalised by the input dimension.

    Distinct inputs get independent noise draws, so only ``same_point``
    pairs pick up the noise second moment.  When ``same_point`` is None it is
    inferred by comparing the vectors.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape or x.size == 0:
        raise DatasetError(f"input dimension mismatch: {x.shape} vs {y.shape}")
    d0 = x.size
    if same_point is None:
        same_point = bool(np.array_equal(x, y))
    inner = float(np.dot(x, y)) / d0
    if not same_point:
        return inner
    if noise.mode is NoiseMode.MULTIPLICATIVE:
        return noise.mu2 * inner
    if noise.mode is NoiseMode.ADDITIVE:
        return inner + noise.mu2
    return inner


def diag_update(k_prev, params: KernelParams):
    """One layer of the variance recursion; broadcasts over arrays."""
    half_w = params.sigma_w2 / 2.0
    noise = params.noise
    if noise.mode is NoiseMode.MULTIPLICATIVE:
        return half_w * k_prev * noise.mu2 + params.sigma_b2
    if noise.mode is NoiseMode.ADDITIVE:
        # noise second moment enters once per layer, outside the weight scale
        return half_w * k_prev + noise.mu2 + params.sigma_b2
    return half_w * k_prev + params.sigma_b2


def step_diag(k_prev: float, params: KernelParams) -> float:
    if k_prev < 0:
        raise InvariantError(f"negative variance {k_prev}")
    return float(diag_update(k_prev, params))


def offdiag_update(k_xx, k_yy, k_xy, params: KernelParams):
    """One layer of the covariance recursion for distinct inputs.

    rho is recomputed from the three tracked values on every call.  A zero
    variance means that pre-activation is identically zero, leaving only
    the bias term.
    """
    k_xx = np.asarray(k_xx, dtype=float)
    k_yy = np.asarray(k_yy, dtype=float)
    k_xy = np.asarray(k_xy, dtype=float)
    # product of roots: k_xx * k_yy itself can overflow long before either factor does
    scale = np.sqrt(k_xx) * np.sqrt(k_yy)
    positive = scale > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(positive, k_xy / np.where(positive, scale, 1.0), 0.0)
    rho = _clamp_rho(rho)
    body = (params.sigma_w2 / 2.0) * scale * (rho_g(rho) + rho / 2.0)
    out = np.where(positive, body, 0.0) + params.sigma_b2
    return float(out) if out.ndim == 0 else out


def step_offdiag(state: KernelState, params: KernelParams) -> float:
    state.check()
    return float(offdiag_update(state.k_xx, state.k_yy, state.k_xy, params))


def step_state(state: KernelState, params: KernelParams) -> KernelState:
    """Advance all three tracked values by one layer."""
    return KernelState(
        step_diag(state.k_xx, params),
        step_diag(state.k_yy, params),
        step_offdiag(state, params),
        state.layer + 1,
    )


def _geometric_sum(ratio: float, n: int) -> float:
    """sum_{l=0}^{n-1} ratio**l, accurate for ratio near 1."""
    if n == 0:
        return 0.0
    if ratio == 1.0:
        return float(n)
    if ratio <= 0.0:
        return (1.0 - ratio**n) / (1.0 - ratio)
    with np.errstate(over="ignore"):
        d = ratio - 1.0
        return float(np.expm1(n * np.log1p(d)) / d)


def closed_form_diag(k0: float, params: KernelParams) -> float:
    """Variance after ``params.depth`` layers without iterating.

    Additive: (sw/2)^L k0 + sum_l (sw/2)^l (mu2 + sb);
    multiplicative: (sw mu2/2)^L k0 + sum_l (sw mu2/2)^l sb.
    """
    if k0 < 0:
        raise InvariantError(f"negative variance {k0}")
    L = params.depth
    noise = params.noise
    if noise.mode is NoiseMode.ADDITIVE:
        ratio = params.sigma_w2 / 2.0
        per_layer = noise.mu2 + params.sigma_b2
    else:
        ratio = params.sigma_w2 * noise.effective_mu2 / 2.0
        per_layer = params.sigma_b2
    with np.errstate(over="ignore"):
        lead = float(np.float64(ratio) ** L) * k0
    return lead + _geometric_sum(ratio, L) * per_layer


# --------------------------------------------------------------------------
# limiting behaviour
# --------------------------------------------------------------------------


def is_critical(sigma_w2: float, mu2_eff: float, rtol: float = CRITICAL_RTOL) -> bool:
    return abs(sigma_w2 * mu2_eff - 2.0) <= rtol * 2.0


def classify_regime(params: KernelParams) -> RegimeLabel:
    """Depth-to-infinity behaviour of the variance recursion."""
    sw, sb = params.sigma_w2, params.sigma_b2
    noise = params.noise

    if noise.mode is NoiseMode.ADDITIVE and noise.mu2 > 0:
        if sw < 2.0 and not is_critical(sw, 1.0):
            return RegimeLabel(Regime.CONSTANT, TableCase.A1, (noise.mu2 + sb) / (1.0 - sw / 2.0))
        # sw == 2 grows linearly, still unbounded
        return RegimeLabel(Regime.DIVERGENT, TableCase.A2)

    noisy = noise.mode is NoiseMode.MULTIPLICATIVE and noise.mu2 > 1.0
    mu2 = noise.mu2 if noisy else 1.0
    if noisy:
        vanish, const, div, lin, fixed = (TableCase.M1, TableCase.M2, TableCase.M3,
                                          TableCase.M4, TableCase.M5)
    else:
        vanish = const = TableCase.NOISELESS_ORDERED
        div = TableCase.NOISELESS_DIVERGENT
        lin = fixed = TableCase.NOISELESS_CRITICAL

    if is_critical(sw, mu2):
        if sb == 0:
            return RegimeLabel(Regime.FIXED, fixed)
        return RegimeLabel(Regime.DIVERGENT, lin)
    if sw * mu2 > 2.0:
        return RegimeLabel(Regime.DIVERGENT, div)
    if sb == 0:
        return RegimeLabel(Regime.VANISHING, vanish)
    return RegimeLabel(Regime.CONSTANT, const, sb / (1.0 - sw * mu2 / 2.0))


def critical_params(noise: NoiseSpec) -> tuple[float, float]:
    """The (sigma_w2, sigma_b2) pair that keeps the variance fixed at any depth."""
    if noise.mode is NoiseMode.ADDITIVE:
        raise KernelParamError("additive noise has no critical parameters; every setting is degenerate")
    return 2.0 / noise.effective_mu2, 0.0
