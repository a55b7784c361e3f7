"""Experiment drivers: parameter sweeps, depth traces, uncertainty analysis, 1-D demo."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import gp
from .data import Dataset, load_split, make_sinusoid, normalize_inputs
from .errors import ExperimentError, FactorisationError, KernelOverflowError
from .gram import build_cross_matrix, build_train_gram, frobenius_norm, gram_snapshots
from .kernel import KernelParams, KernelState, NoiseMode, NoiseSpec, step_state
from .tasks import accuracy, decode_batch

CSV_COLUMNS = ("depth", "mu2", "sigma_w2", "sigma_b2", "status", "accuracy", "frob_norm", "mean_var", "dist_crit")


class CellStatus(str, enum.Enum):
    OK = "OK"
    OVERFLOW = "Overflow"
    FACTOR_FAIL = "FactorFail"


def _strictly_increasing(values) -> bool:
    return len(values) > 0 and all(b > a for a, b in zip(values, values[1:]))


@dataclass(frozen=True)
class SweepConfig:
    sigma_w2_grid: tuple
    mu2_grid: tuple
    depths: tuple = (20,)
    sigma_b2: float = 0.0
    noise: str = "mult"
    dataset: str = "mnist"
    data_dir: Optional[str] = None
    n_train: int = 1000
    n_test: int = 1000
    sigma_eps2: float = 1e-6
    normalize: str = "unit_norm"
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_w2_grid", "mu2_grid", "depths"):
            cast = int if name == "depths" else float
            vals = tuple(cast(v) for v in getattr(self, name))
            object.__setattr__(self, name, vals)
            if not _strictly_increasing(vals):
                raise ExperimentError(f"{name} must be non-empty and strictly increasing, got {vals}")
        if self.n_train < 1 or self.n_test < 1:
            raise ExperimentError("n_train and n_test must be >= 1")
        if min(self.depths) < 1:
            raise ExperimentError("depths must be >= 1")
        NoiseMode.parse(self.noise)

    def noise_spec(self, mu2: float) -> NoiseSpec:
        return NoiseSpec(NoiseMode.parse(self.noise), mu2)


@dataclass(frozen=True)
class SweepCell:
    sigma_w2: float
    mu2: float
    depth: int
    sigma_b2: float
    status: CellStatus
    accuracy: Optional[float] = None
    frobenius_norm: Optional[float] = None
    mean_pred_variance: Optional[float] = None
    distance_to_critical: float = float("nan")

    @property
    def ok(self) -> bool:
        return self.status is CellStatus.OK

    def as_row(self) -> list:
        def fmt(v):
            return "" if v is None else repr(float(v))

        return [str(self.depth), fmt(self.mu2), fmt(self.sigma_w2), fmt(self.sigma_b2), self.status.value,
                fmt(self.accuracy), fmt(self.frobenius_norm), fmt(self.mean_pred_variance),
                fmt(self.distance_to_critical)]


def distance_to_critical(sigma_w2: float, noise: NoiseSpec) -> float:
    return abs(sigma_w2 - 2.0 / noise.effective_mu2)


def load_sweep_data(cfg: SweepConfig):
    train = normalize_inputs(load_split(cfg.dataset, cfg.data_dir, "train", cfg.n_train), cfg.normalize)
    test = normalize_inputs(load_split(cfg.dataset, cfg.data_dir, "test", cfg.n_test), cfg.normalize)
    return train, test


def evaluate_classifier(gram, cross, psi0, train: Dataset, test: Dataset, sigma_eps2: float):
    """Fit on the train Gram, predict the test set; returns (accuracy, mean variance)."""
    post = gp.fit(gram, train.targets, sigma_eps2)
    mean, var = gp.predict_batch(post, cross, psi0)
    return accuracy(decode_batch(mean), test.labels), float(np.mean(var))


def _run_unit(cfg: SweepConfig, sigma_w2: float, mu2: float, train: Dataset, test: Dataset):
    noise = cfg.noise_spec(mu2)
    params = KernelParams(sigma_w2, cfg.sigma_b2, noise, max(cfg.depths))
    dist = distance_to_critical(sigma_w2, noise)
    cells = []

    def cell(depth, status, *metrics):
        cells.append(SweepCell(sigma_w2, mu2, depth, cfg.sigma_b2, status, *metrics, distance_to_critical=dist))

    try:
        snaps = gram_snapshots(train, test, params, cfg.depths)
    except KernelOverflowError as exc:
        snaps = exc.partial
    for depth in cfg.depths:
        if depth not in snaps:
            cell(depth, CellStatus.OVERFLOW)
            continue
        gram, cross, psi0 = snaps[depth]
        try:
            acc, mvar = evaluate_classifier(gram, cross, psi0, train, test, cfg.sigma_eps2)
        except FactorisationError:
            cell(depth, CellStatus.FACTOR_FAIL)
            continue
        cell(depth, CellStatus.OK, acc, frobenius_norm(gram), mvar)
    return cells


def run_sweep(cfg: SweepConfig, train: Optional[Dataset] = None, test: Optional[Dataset] = None):
    """One cell per (sigma_w2, mu2, depth), sorted by (depth, mu2, sigma_w2).

    Work units are (sigma_w2, mu2) pairs, each of which reuses its shallow
    layers for every requested depth.  Numeric failures are recorded in the
    cell status rather than raised.
    """
    if train is None or test is None:
        train, test = load_sweep_data(cfg)
    units = [(sw, mu) for mu in cfg.mu2_grid for sw in cfg.sigma_w2_grid]
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(lambda u: _run_unit(cfg, u[0], u[1], train, test), units))
    else:
        results = [_run_unit(cfg, sw, mu, train, test) for sw, mu in units]
    cells = [c for unit in results for c in unit]
    cells.sort(key=lambda c: (c.depth, c.mu2, c.sigma_w2))
    return cells


def band_size(cells, depth: int, delta: float = 0.02) -> int:
    """Number of OK cells at ``depth`` within ``delta`` of that depth's best accuracy."""
    accs = [c.accuracy for c in cells if c.ok and c.depth == depth]
    if not accs:
        return 0
    best = max(accs)
    return sum(a >= best - delta for a in accs)


def best_cell(cells, depth: Optional[int] = None) -> SweepCell:
    ok = [c for c in cells if c.ok and (depth is None or c.depth == depth)]
    if not ok:
        raise ExperimentError("no successful cells")
    # earliest cell in canonical order wins ties
    return max(ok, key=lambda c: c.accuracy)


# ---------------------------------------------------------------------------
# depth traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DepthTrace:
    params: KernelParams
    k_xx: np.ndarray  # layers 0..L (or up to the last finite layer)
    k_yy: np.ndarray
    k_xy: np.ndarray
    overflow_layer: Optional[int] = None


def depth_trace(pair_inputs, params_list: Sequence[KernelParams]):
    """Per-layer variance and covariance of one input pair for each parameter set.

    Runs the scalar recursion directly (not the Gram builder), stopping at the
    first non-finite layer.
    """
    x, y = (np.asarray(v, dtype=float).ravel() for v in pair_inputs)
    data = np.vstack([x, y])
    out = []
    for params in params_list:
        base = build_train_gram(data, params.with_depth(1), trace_pairs=[(0, 0), (1, 1), (0, 1)])
        state = KernelState(*(float(base.depth_trace[p][0]) for p in [(0, 0), (1, 1), (0, 1)]))
        series = [state]
        overflow = None
        with np.errstate(over="ignore", invalid="ignore"):
            for layer in range(1, params.depth + 1):
                nxt = step_state(state, params)
                if not all(math.isfinite(v) for v in (nxt.k_xx, nxt.k_yy, nxt.k_xy)):
                    overflow = layer
                    break
                series.append(nxt)
                state = nxt
        out.append(DepthTrace(
            params,
            np.array([s.k_xx for s in series]),
            np.array([s.k_yy for s in series]),
            np.array([s.k_xy for s in series]),
            overflow,
        ))
    return out


# ---------------------------------------------------------------------------
# uncertainty / accuracy correlation
# ---------------------------------------------------------------------------


def uncertainty_correlation(cells, near_threshold: float = 0.05):
    """Pearson correlation of (mean predictive variance, accuracy) near and far from criticality."""
    ok = [c for c in cells if c.ok]
    near = [c for c in ok if c.distance_to_critical <= near_threshold]
    far = [c for c in ok if c.distance_to_critical > near_threshold]

    def corr(group, label):
        if len(group) < 3:
            raise ExperimentError(f"need >= 3 OK cells {label} criticality, have {len(group)}")
        v = np.array([c.mean_pred_variance for c in group])
        a = np.array([c.accuracy for c in group])
        if np.ptp(v) == 0 or np.ptp(a) == 0:
            raise ExperimentError(f"correlation undefined {label} criticality: constant values")
        return float(np.corrcoef(v, a)[0, 1])

    return corr(near, "near"), corr(far, "far from")


# ---------------------------------------------------------------------------
# 1-D regression demo
# ---------------------------------------------------------------------------


@dataclass
class DemoBundle:
    mu2: float
    sigma_w2: float
    sigma_b2: float
    depth: int
    grid: np.ndarray
    prior_samples: np.ndarray  # (n_samples, M)
    gram: np.ndarray  # (M, M) prior covariance over the lattice
    fit_mean: np.ndarray
    fit_var: np.ndarray
    psi: np.ndarray  # prior predictive variance k(x*, x*) + sigma_eps2
    train_x: np.ndarray
    train_y: np.ndarray
    jitter_used: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def offdiag_ratio(self) -> float:
        """Mean off-diagonal entry over mean diagonal entry of the lattice Gram."""
        m = self.gram.shape[0]
        off = (self.gram.sum() - np.trace(self.gram)) / (m * (m - 1))
        return float(off / np.mean(np.diag(self.gram)))

    def to_dict(self) -> dict:
        return {
            "mu2": self.mu2,
            "sigma_w2": self.sigma_w2,
            "sigma_b2": self.sigma_b2,
            "depth": self.depth,
            "grid": self.grid.tolist(),
            "train_x": self.train_x.tolist(),
            "train_y": self.train_y.tolist(),
            "prior_samples": self.prior_samples.tolist(),
            "gram": self.gram.tolist(),
            "fit_mean": self.fit_mean.tolist(),
            "fit_var": self.fit_var.tolist(),
            "psi": self.psi.tolist(),
            "offdiag_ratio": self.offdiag_ratio,
            "jitter_used": self.jitter_used,
        }


DEFAULT_LATTICE = np.linspace(-1.0, 2.0, 121)


def run_1d_demo(mu2_list=(1.0, 1.001, 2.0), sigma_b2: float = 0.05, depth: int = 20, grid=None,
                seed: int = 0, n_train: int = 4, x_range=(0.0, 1.0), noise_sd: float = 0.1,
                sigma_eps2: float = 0.01, n_prior_samples: int = 5):
    """Prior samples, lattice covariance and posterior fit at critical sigma_w2 for each mu2."""
    grid = DEFAULT_LATTICE if grid is None else np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ExperimentError("empty test lattice")
    data = make_sinusoid(n_train, x_range, noise_sd, seed)
    lattice = grid[:, None]
    bundles = []
    for i, mu2 in enumerate(mu2_list):
        noise = NoiseSpec.multiplicative(mu2)
        params = KernelParams.critical(noise, depth, sigma_b2)
        prior = build_train_gram(lattice, params)
        samples = gp.sample_prior(prior, n_prior_samples, rng_seed=seed + 1000 + i)
        post = gp.fit(build_train_gram(data, params), data.targets, sigma_eps2)
        cross, psi0 = build_cross_matrix(data, lattice, params)
        mean, var = gp.predict_batch(post, cross, psi0)
        bundles.append(DemoBundle(mu2, params.sigma_w2, sigma_b2, depth, grid, samples, prior.values,
                                  mean[:, 0], var, psi0 + sigma_eps2, data.inputs[:, 0],
                                  data.targets[:, 0], post.jitter_used))
    return bundles
