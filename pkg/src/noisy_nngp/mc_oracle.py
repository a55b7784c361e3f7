"""Monte-Carlo checks of the analytic kernel.

Two independent routes:

* :func:`mc_layer_expectation` estimates one layer step
  ``sigma_w2 E[relu(u) relu(v)] + sigma_b2`` by sampling the bivariate
  Gaussian directly.
* :func:`mc_finite_network_gram` simulates finite-width noisy ReLU networks
  and measures the second moments of an output unit at two inputs.

The simulated network matches the kernel conventions of this package:
the input layer is ``h0 = W0 (x * eps)`` (multiplicative), ``W0 x + eps``
(additive) or ``W0 x`` with ``W0 ~ N(0, 1/D0)``; every later layer is
``h = W (relu(h_prev) * eps) + b`` or ``W relu(h_prev) + b + eps``, with
``W ~ N(0, sigma_w2 / width)`` and ``b ~ N(0, sigma_b2)``.  Noise is drawn
independently per input.

Weights are never materialised.  Given the previous layer's (noisy)
activations ``a_x, a_y`` of one network, the next layer's units are iid
bivariate normal with covariance ``sigma_w2/width * [a_x, a_y]^T [a_x, a_y]
+ sigma_b2``, which is exactly the distribution of ``W a + b``.  Masks and
ReLUs are still applied unit by unit at the finite width.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvariantError
from .gram import build_train_gram
from .kernel import (
    KernelParams,
    KernelState,
    NoiseMode,
    NoiseSpec,
    base_kernel,
    step_offdiag,
)

NOISE_LAWS = ("bernoulli", "gaussian")


@dataclass(frozen=True)
class FiniteNetworkSample:
    """Second moments of one output unit at two inputs, over many random networks."""

    gram: np.ndarray  # 2 x 2
    std_err: np.ndarray  # 2 x 2
    width: int
    params: KernelParams
    n_networks: int
    seed: Optional[int] = None
    estimator: str = "conditional"


@dataclass(frozen=True)
class OracleCheck:
    name: str
    analytic: float
    estimate: float
    std_err: float
    tolerance: float  # absolute half-width the estimate must fall within
    passed: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(abs(self.estimate - self.analytic) <= self.tolerance))

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] {self.name}: analytic={self.analytic:.6g} "
                f"estimate={self.estimate:.6g} +/- {self.std_err:.2g} (tol {self.tolerance:.2g})")


def mc_layer_expectation(k_xx, k_yy, k_xy, sigma_w2, sigma_b2, n_samples=10**6, seed=0,
                         batch=250_000):
    """Sample estimate and standard error of one covariance-recursion step."""
    if n_samples < 10**4:
        raise ValueError("n_samples must be at least 1e4")
    if k_xx < 0 or k_yy < 0 or k_xy * k_xy > k_xx * k_yy * (1 + 1e-12) + 1e-300:
        raise InvariantError(f"covariance [[{k_xx}, {k_xy}], [{k_xy}, {k_yy}]] is not PSD")
    rng = np.random.default_rng(seed)
    sx, sy = np.sqrt(k_xx), np.sqrt(k_yy)
    rho = k_xy / (sx * sy) if sx * sy > 0 else 0.0
    rho = min(1.0, max(-1.0, rho))
    comp = np.sqrt(max(0.0, 1.0 - rho * rho))
    total = total_sq = 0.0
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        z = rng.standard_normal((2, m))
        u = sx * z[0]
        v = sy * (rho * z[0] + comp * z[1])
        vals = sigma_w2 * np.maximum(u, 0) * np.maximum(v, 0) + sigma_b2
        total += vals.sum()
        total_sq += np.dot(vals, vals)
        done += m
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    return float(mean), float(np.sqrt(var / (n_samples - 1)))


def draw_noise(noise: NoiseSpec, shape, rng: np.random.Generator, law: str = "bernoulli"):
    """Injected noise with the right first two moments.

    Multiplicative: rescaled Bernoulli dropout (keep 1/mu2) or Gaussian
    N(1, mu2 - 1).  Additive: Gaussian N(0, mu2).  Returns None when the
    spec injects nothing.
    """
    if law not in NOISE_LAWS:
        raise ValueError(f"unknown noise law {law!r}")
    if noise.mode is NoiseMode.MULTIPLICATIVE and noise.mu2 > 1.0:
        if law == "bernoulli":
            keep = 1.0 / noise.mu2
            return (rng.random(shape) < keep) / keep
        return 1.0 + np.sqrt(noise.mu2 - 1.0) * rng.standard_normal(shape)
    if noise.mode is NoiseMode.ADDITIVE and noise.mu2 > 0.0:
        return np.sqrt(noise.mu2) * rng.standard_normal(shape)
    return None


def _pair_cov(ax, ay, scale, bias):
    """Per-network 2x2 covariance of the next layer's units; arrays of shape (B,)."""
    d = ax.shape[-1]
    cxx = scale * np.einsum("bi,bi->b", ax, ax) / d + bias
    cyy = scale * np.einsum("bi,bi->b", ay, ay) / d + bias
    cxy = scale * np.einsum("bi,bi->b", ax, ay) / d + bias
    return cxx, cyy, cxy


def _sample_pair(cxx, cyy, cxy, width, rng):
    """(B, width) draws of two jointly Gaussian units with the given per-row covariance."""
    l11 = np.sqrt(cxx)
    with np.errstate(divide="ignore", invalid="ignore"):
        l21 = np.where(l11 > 0, cxy / l11, 0.0)
    l22 = np.sqrt(np.maximum(cyy - l21 * l21, 0.0))
    z1 = rng.standard_normal((cxx.shape[0], width))
    z2 = rng.standard_normal((cxx.shape[0], width))
    return l11[:, None] * z1, l21[:, None] * z1 + l22[:, None] * z2


def _inject(a, noise, rng, law, mode):
    if noise.mode is not mode:
        return a
    eps = draw_noise(noise, a.shape, rng, law)
    if eps is None:
        return a
    return a * eps if mode is NoiseMode.MULTIPLICATIVE else a + eps


def mc_finite_network_gram(x_pair, width: int, params: KernelParams, n_networks: int = 1000,
                           seed: Optional[int] = 0, noise_law: str = "bernoulli",
                           estimator: str = "conditional", batch: int = 64) -> FiniteNetworkSample:
    """Empirical 2x2 output second moments of ``n_networks`` random finite networks.

    ``estimator="sample"`` draws one output unit per network and averages its
    outer product.  ``"conditional"`` averages the exact conditional second
    moment of that unit given the last hidden layer, which is unbiased for
    the same quantity with far less sampling noise.
    """
    if width < 1 or n_networks < 1:
        raise ValueError("width and n_networks must be positive")
    if estimator not in ("conditional", "sample"):
        raise ValueError(f"unknown estimator {estimator!r}")
    x, y = (np.asarray(v, dtype=float).ravel() for v in x_pair)
    if x.shape != y.shape:
        raise ValueError("inputs of the pair differ in dimension")
    d0 = x.size
    noise = params.noise
    mult, add = NoiseMode.MULTIPLICATIVE, NoiseMode.ADDITIVE
    rng = np.random.default_rng(seed)
    acc = np.zeros((n_networks, 3))
    done = 0
    while done < n_networks:
        b = min(batch, n_networks - done)
        # input layer: W0 ~ N(0, 1/D0), no bias
        xb = _inject(np.broadcast_to(x, (b, d0)), noise, rng, noise_law, mult)
        yb = _inject(np.broadcast_to(y, (b, d0)), noise, rng, noise_law, mult)
        cov = _pair_cov(xb, yb, 1.0, 0.0)
        for layer in range(1, params.depth + 1):
            hx, hy = _sample_pair(*cov, width, rng)
            hx = _inject(hx, noise, rng, noise_law, add)
            hy = _inject(hy, noise, rng, noise_law, add)
            ax = _inject(np.maximum(hx, 0.0), noise, rng, noise_law, mult)
            ay = _inject(np.maximum(hy, 0.0), noise, rng, noise_law, mult)
            cov = _pair_cov(ax, ay, params.sigma_w2, params.sigma_b2)
        cxx, cyy, cxy = cov
        if noise.mode is add:
            # output unit carries its own additive draw, independent per input
            cxx, cyy = cxx + noise.mu2, cyy + noise.mu2
        if estimator == "conditional":
            acc[done:done + b] = np.column_stack([cxx, cyy, cxy])
        else:
            ox, oy = _sample_pair(cov[0], cov[1], cov[2], 1, rng)
            if noise.mode is add:
                ox = ox + draw_noise(noise, ox.shape, rng)
                oy = oy + draw_noise(noise, oy.shape, rng)
            ox, oy = ox[:, 0], oy[:, 0]
            acc[done:done + b] = np.column_stack([ox * ox, oy * oy, ox * oy])
        done += b
    mean = acc.mean(axis=0)
    se = acc.std(axis=0, ddof=1) / np.sqrt(n_networks) if n_networks > 1 else np.full(3, np.inf)
    gram = np.array([[mean[0], mean[2]], [mean[2], mean[1]]])
    std_err = np.array([[se[0], se[2]], [se[2], se[1]]])
    return FiniteNetworkSample(gram, std_err, width, params, n_networks, seed, estimator)


def analytic_pair_gram(x_pair, params: KernelParams) -> np.ndarray:
    """Infinite-width 2x2 kernel for the same pair, from the Gram builder."""
    return build_train_gram(np.vstack([np.ravel(v) for v in x_pair]), params).values


# ---------------------------------------------------------------------------
# canned suite used by the CLI ``verify`` command
# ---------------------------------------------------------------------------


def random_step_configs(n: int, seed: int = 0):
    """Random (KernelState, sigma_w2, sigma_b2) configurations for bracketing checks."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        kxx, kyy = rng.uniform(0.1, 3.0, size=2)
        rho = rng.uniform(-0.99, 0.99)
        state = KernelState(kxx, kyy, rho * np.sqrt(kxx * kyy))
        out.append((state, float(rng.uniform(0.2, 3.0)), float(rng.uniform(0.0, 1.0))))
    return out


def layer_bracket_checks(n_configs=50, n_samples=10**6, seed=0, n_se=3.0):
    checks = []
    fixed = [
        ("identical inputs, sw2=2", KernelState(1.0, 1.0, 1.0), 2.0, 0.0),
        ("orthogonal, sw2=2", KernelState(1.0, 1.0, 0.0), 2.0, 0.0),
        ("rho=0.5, sw2=1, sb2=0.1", KernelState(1.0, 1.0, 0.5), 1.0, 0.1),
    ]
    configs = fixed + [(f"random step {i}", s, w, b)
                       for i, (s, w, b) in enumerate(random_step_configs(n_configs, seed))]
    for i, (name, state, sw, sb) in enumerate(configs):
        params = KernelParams(sw, sb)
        analytic = step_offdiag(state, params)
        est, se = mc_layer_expectation(state.k_xx, state.k_yy, state.k_xy, sw, sb, n_samples, seed + 1 + i)
        checks.append(OracleCheck(name, analytic, est, se, n_se * se))
    return checks


def base_kernel_check(n_samples=10**6, seed=0, n_se=3.0) -> OracleCheck:
    """Additive-noise input kernel E[(x + eps).(x + eps)] / D0 against its closed form."""
    x = np.array([2.0, 0.0])
    noise = NoiseSpec.additive(0.5)
    rng = np.random.default_rng(seed)
    eps = np.sqrt(noise.mu2) * rng.standard_normal((n_samples, x.size))
    vals = np.sum((x + eps) ** 2, axis=1) / x.size
    return OracleCheck("base kernel, additive mu2=0.5", base_kernel(x, x, noise), float(vals.mean()),
                       float(vals.std(ddof=1) / np.sqrt(n_samples)), n_se * float(vals.std(ddof=1) / np.sqrt(n_samples)))


def unit_pair(d0: int, rho: float, seed: int = 0):
    """Two inputs with <x, x>/D0 = <y, y>/D0 = 1 and <x, y>/D0 = rho."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d0, 2)))
    x = q[:, 0]
    y = rho * q[:, 0] + np.sqrt(1 - rho * rho) * q[:, 1]
    return x * np.sqrt(d0), y * np.sqrt(d0)


def finite_network_checks(width=4096, depth=3, mu2=1.5, n_networks=2000, seed=0, rel_tol=0.05, d0=256):
    """Finite-network Gram at critical parameters against the analytic kernel (relative)."""
    params = KernelParams.critical(NoiseSpec.multiplicative(mu2), depth)
    pair = unit_pair(d0, 0.6, seed)
    analytic = analytic_pair_gram(pair, params)
    sample = mc_finite_network_gram(pair, width, params, n_networks, seed)
    checks = []
    for (i, j), label in (((0, 0), "diag"), ((0, 1), "offdiag")):
        a = analytic[i, j]
        checks.append(OracleCheck(f"width {width} L={depth} mu2={mu2} {label}", a, sample.gram[i, j],
                                  sample.std_err[i, j], rel_tol * abs(a)))
    return checks


def run_oracle_suite(n_configs=50, n_samples=10**6, width=4096, n_networks=2000, seed=0):
    """All bracketing checks; used by ``noisy-nngp verify``."""
    checks = [base_kernel_check(n_samples, seed)]
    checks += layer_bracket_checks(n_configs, n_samples, seed)
    for depth in (1, 2, 3):
        checks += finite_network_checks(width, depth, n_networks=n_networks, seed=seed + depth)
    return checks


__all__ = [
    "FiniteNetworkSample",
    "OracleCheck",
    "mc_layer_expectation",
    "mc_finite_network_gram",
    "draw_noise",
    "analytic_pair_gram",
    "random_step_configs",
    "layer_bracket_checks",
    "base_kernel_check",
    "finite_network_checks",
    "unit_pair",
    "run_oracle_suite",
]
