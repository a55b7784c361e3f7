"""Lift the scalar recursion to train Grams and train/test cross-covariances.

Only the N x N block is ever stored: output units of the network are
independent, so the full covariance is this block Kronecker the identity.
Every entry follows its own pair recursion, which here runs vectorised over
whole matrices; the work per entry does not depend on any other entry, so
the result does not depend on evaluation order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DatasetError, KernelOverflowError
from .kernel import (
    KernelParams,
    NoiseMode,
    NoiseSpec,
    classify_regime,
    diag_update,
    offdiag_update,
)

GRAM_MAGIC = b"NNGPGRAM"
_MODE_CODES = {NoiseMode.NONE: 0, NoiseMode.ADDITIVE: 1, NoiseMode.MULTIPLICATIVE: 2}


@dataclass
class GramMatrix:
    values: np.ndarray
    params: KernelParams
    # (i, j) -> array of k^l for l = 0..L
    depth_trace: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _inputs(data) -> np.ndarray:
    x = getattr(data, "inputs", data)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise DatasetError(f"expected a non-empty N x D input matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DatasetError("inputs contain non-finite values")
    return x


def _base_diag(x: np.ndarray, params: KernelParams) -> np.ndarray:
    sq = np.einsum("ij,ij->i", x, x) / x.shape[1]
    noise = params.noise
    if noise.mode is NoiseMode.MULTIPLICATIVE:
        return noise.mu2 * sq
    if noise.mode is NoiseMode.ADDITIVE:
        return sq + noise.mu2
    return sq


def _mirror_upper(a: np.ndarray) -> np.ndarray:
    return np.triu(a) + np.triu(a, 1).T


def _check_finite(layer: int, params: KernelParams, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise KernelOverflowError(layer, classify_regime(params))


def _recurse(d_a, d_b, cross, params: KernelParams, depths: Sequence[int], on_layer=None):
    """Run the recursion to max(depths), yielding (depth, d_a, d_b, cross) snapshots."""
    want = set(depths)
    if 0 in want:
        yield 0, d_a, d_b, cross
    for layer in range(1, max(depths) + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            cross = offdiag_update(d_a[:, None], d_b[None, :], cross, params)
            d_a = diag_update(d_a, params)
            d_b = diag_update(d_b, params)
        _check_finite(layer, params, d_a, d_b, cross)
        if on_layer is not None:
            on_layer(layer, d_a, cross)
        if layer in want:
            yield layer, d_a, d_b, cross


def _train_recursion(x: np.ndarray, params: KernelParams, depths: Sequence[int], trace_pairs=()):
    d = _base_diag(x, params)
    cross = _mirror_upper(x @ x.T / x.shape[1])
    trace = {tuple(p): [] for p in trace_pairs}

    def record(layer, diag, mat):
        for (i, j), series in trace.items():
            series.append(diag[i] if i == j else mat[i, j])

    for i, j in trace:
        if not (0 <= i < len(d) and 0 <= j < len(d)):
            raise IndexError(f"trace pair {(i, j)} out of range for N={len(d)}")
    record(0, d, cross)
    # the train Gram is symmetric, so one diag vector serves both sides
    for layer, diag, _, mat in _recurse(d, d, cross, params, depths, on_layer=record):
        vals = _mirror_upper(mat)
        np.fill_diagonal(vals, diag)
        yield layer, vals, {k: np.array(v) for k, v in trace.items()}


def build_train_gram(data, params: KernelParams, trace_pairs: Iterable = ()) -> GramMatrix:
    """L-layer kernel over all pairs of training inputs."""
    x = _inputs(data)
    trace_pairs = [tuple(int(v) for v in p) for p in trace_pairs]
    (_, vals, trace), = _train_recursion(x, params, [params.depth], trace_pairs)
    return GramMatrix(vals, params, trace)


def build_cross_matrix(data, x_star, params: KernelParams):
    """Cross-covariances (M x N) between test and training inputs, plus test variances.

    The returned test variances are the kernel part only; observation noise
    is added by the GP engine.
    """
    x = _inputs(data)
    xs = _inputs(x_star)
    if xs.shape[1] != x.shape[1]:
        raise DatasetError(f"test dimension {xs.shape[1]} != training dimension {x.shape[1]}")
    (_, psi0, _, k), = _recurse(_base_diag(xs, params), _base_diag(x, params),
                                xs @ x.T / x.shape[1], params, [params.depth])
    return np.asarray(k, dtype=float), np.asarray(psi0, dtype=float)


def build_cross_vector(data, x_star, params: KernelParams):
    """Kernel vector between one test input and every training input, and k^L(x*, x*)."""
    xs = np.asarray(x_star, dtype=float).ravel()
    k, psi0 = build_cross_matrix(data, xs[None, :], params)
    return k[0], float(psi0[0])


def gram_snapshots(train, test, params: KernelParams, depths: Sequence[int]):
    """Train Gram, cross matrix and test variances at several depths in one pass.

    Returns ``{depth: (GramMatrix, cross (M x N), psi0 (M,))}``.  Equivalent
    to separate builds at each depth but shares the shallower layers.  On
    overflow the depths reached before the failing layer are kept and the
    error is re-raised with them attached as ``partial``.
    """
    x, xs = _inputs(train), _inputs(test)
    if xs.shape[1] != x.shape[1]:
        raise DatasetError(f"test dimension {xs.shape[1]} != training dimension {x.shape[1]}")
    depths = sorted(set(int(d) for d in depths))
    out = {}
    d_tr = _base_diag(x, params)
    train_it = _train_recursion(x, params, depths)
    test_it = _recurse(_base_diag(xs, params), d_tr, xs @ x.T / x.shape[1], params, depths)
    try:
        for (layer, vals, _), (_, psi0, _, k) in zip(train_it, test_it):
            out[layer] = (GramMatrix(vals, params.with_depth(layer)), k, psi0)
    except KernelOverflowError as exc:
        exc.partial = out
        raise
    return out


def frobenius_norm(gram) -> float:
    values = getattr(gram, "values", gram)
    return float(np.sqrt(np.sum(np.square(values))))


# ---------------------------------------------------------------------------
# binary cache format
#   magic "NNGPGRAM" | u32 N | u32 depth | u32 noise mode | f64 sigma_w2 |
#   f64 sigma_b2 | f64 mu2 | N(N+1)/2 f64 upper triangle, row-major
#   all little-endian
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<8sIII3d")


def save_gram(path, gram: GramMatrix) -> None:
    p = gram.params
    header = _HEADER.pack(GRAM_MAGIC, gram.n, p.depth, _MODE_CODES[p.noise.mode],
                          p.sigma_w2, p.sigma_b2, p.noise.mu2)
    upper = gram.values[np.triu_indices(gram.n)].astype("<f8")
    Path(path).write_bytes(header + upper.tobytes())


def load_gram(path) -> GramMatrix:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise DatasetError(f"{path}: truncated Gram header")
    magic, n, depth, mode, sw, sb, mu2 = _HEADER.unpack_from(buf)
    if magic != GRAM_MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}")
    count = n * (n + 1) // 2
    if len(buf) != _HEADER.size + 8 * count:
        raise DatasetError(f"{path}: expected {count} upper-triangle values")
    upper = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size, count=count)
    vals = np.zeros((n, n))
    vals[np.triu_indices(n)] = upper
    vals = _mirror_upper(vals)
    modes = {v: k for k, v in _MODE_CODES.items()}
    params = KernelParams(sw, sb, NoiseSpec(modes[mode], mu2), depth)
    return GramMatrix(vals, params)
