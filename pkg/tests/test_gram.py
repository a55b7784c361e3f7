import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisy_nngp.errors import DatasetError, KernelOverflowError
from noisy_nngp.gram import (
    build_cross_matrix,
    build_cross_vector,
    build_train_gram,
    frobenius_norm,
    gram_snapshots,
    load_gram,
    save_gram,
)
from noisy_nngp.kernel import KernelParams, KernelState, NoiseSpec, Regime, TableCase, base_kernel, step_state

SQRT2 = math.sqrt(2.0)


def pair_oracle(x, y, params):
    """Scalar recursion for one entry, seeded by base_kernel."""
    same = np.array_equal(x, y)
    s = KernelState(base_kernel(x, x, params.noise, True), base_kernel(y, y, params.noise, True),
                    base_kernel(x, y, params.noise, same))
    for _ in range(params.depth):
        s = step_state(s, params)
    return s.k_xx if same else s.k_xy


class TestBuildTrainGram:
    def test_single_point_critical(self):
        # <x, x> / D0 = 1
        g = build_train_gram(np.array([[SQRT2, 0.0]]), KernelParams.critical(NoiseSpec.none(), 20))
        np.testing.assert_allclose(g.values, [[1.0]], rtol=1e-14)

    def test_orthogonal_one_layer(self):
        x = np.array([[SQRT2, 0.0], [0.0, SQRT2]])
        g = build_train_gram(x, KernelParams(2.0, 0.0, NoiseSpec.none(), 1))
        np.testing.assert_allclose(np.diag(g.values), [1.0, 1.0], rtol=1e-14)
        assert g.values[0, 1] == pytest.approx(1 / math.pi, rel=1e-14)

    def test_divergent_overflow(self, rng):
        x = rng.normal(size=(3, 5))
        params = KernelParams(1.5, 0.0, NoiseSpec.multiplicative(1.5), 7000)
        with pytest.raises(KernelOverflowError) as info:
            build_train_gram(x, params)
        assert info.value.regime.table_case is TableCase.M3
        assert info.value.regime.label is Regime.DIVERGENT
        assert 5000 < info.value.layer < 7000

    def test_moderate_divergence_is_finite(self, rng):
        # 1.125^200 is about 1.7e10, well inside float range
        g = build_train_gram(rng.normal(size=(3, 5)), KernelParams(1.5, 0.0, NoiseSpec.multiplicative(1.5), 200))
        assert np.all(np.isfinite(g.values))

    @pytest.mark.parametrize("noise", [NoiseSpec.none(), NoiseSpec.multiplicative(1.7), NoiseSpec.additive(0.4)])
    def test_matches_scalar_oracle(self, rng, noise):
        x = rng.normal(size=(5, 3))
        params = KernelParams(1.3, 0.2, noise, 7)
        g = build_train_gram(x, params)
        for i in range(5):
            for j in range(5):
                assert g.values[i, j] == pytest.approx(pair_oracle(x[i], x[j], params), rel=1e-12)

    def test_exact_symmetry(self, rng):
        g = build_train_gram(rng.normal(size=(12, 4)), KernelParams(1.9, 0.1, NoiseSpec.multiplicative(1.1), 15))
        assert np.array_equal(g.values, g.values.T)

    def test_permutation_equivariance(self, rng):
        x = rng.normal(size=(8, 4))
        params = KernelParams(1.6, 0.05, NoiseSpec.multiplicative(1.25), 10)
        perm = rng.permutation(8)
        a = build_train_gram(x, params).values
        b = build_train_gram(x[perm], params).values
        np.testing.assert_allclose(b, a[np.ix_(perm, perm)], rtol=1e-13)

    def test_trace_endpoint(self, rng):
        x = rng.normal(size=(4, 3))
        pairs = [(0, 0), (0, 1), (2, 3)]
        g = build_train_gram(x, KernelParams(1.5, 0.1, NoiseSpec.multiplicative(1.2), 9), trace_pairs=pairs)
        for i, j in pairs:
            tr = g.depth_trace[(i, j)]
            assert len(tr) == 10
            assert tr[-1] == g.values[i, j]

    def test_positive_diagonal(self, rng):
        g = build_train_gram(rng.normal(size=(6, 3)), KernelParams(1.0, 0.0, NoiseSpec.multiplicative(2.0), 30))
        assert np.all(np.diag(g.values) > 0)

    def test_bad_inputs(self):
        with pytest.raises(DatasetError):
            build_train_gram(np.array([[np.nan, 1.0]]), KernelParams(1.0))
        with pytest.raises(DatasetError):
            build_train_gram(np.zeros((0, 3)), KernelParams(1.0))


class TestCross:
    def test_training_point(self, rng):
        x = rng.normal(size=(4, 3))
        params = KernelParams(1.7, 0.1, NoiseSpec.none(), 6)
        g = build_train_gram(x, params)
        k, psi0 = build_cross_vector(x, x[2], params)
        assert k[2] == pytest.approx(psi0, rel=1e-14)
        assert psi0 == pytest.approx(g.values[2, 2], rel=1e-14)
        np.testing.assert_allclose(k, g.values[2], rtol=1e-13)

    def test_orthogonal_test_point(self):
        x = np.array([[SQRT2, 0.0, 0.0], [0.0, SQRT2, 0.0]]) * math.sqrt(1.5)
        xs = np.array([0.0, 0.0, math.sqrt(3.0)])
        k, psi0 = build_cross_vector(x, xs, KernelParams(2.0, 0.0, NoiseSpec.none(), 1))
        np.testing.assert_allclose(k, [1 / math.pi] * 2, rtol=1e-14)
        assert psi0 == pytest.approx(1.0)

    def test_large_noise_damps_cross(self, rng):
        x = rng.normal(size=(6, 10))
        xs = rng.normal(size=10)
        k, psi0 = build_cross_vector(x, xs, KernelParams.critical(NoiseSpec.multiplicative(1e4), 20))
        assert np.max(np.abs(k)) < 1e-3 * psi0

    def test_matrix_matches_vectors(self, rng):
        x, xs = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
        params = KernelParams(1.4, 0.3, NoiseSpec.additive(0.2), 5)
        km, psim = build_cross_matrix(x, xs, params)
        for m in range(4):
            k, p = build_cross_vector(x, xs[m], params)
            np.testing.assert_array_equal(km[m], k)
            assert psim[m] == p

    def test_dimension_mismatch(self):
        with pytest.raises(DatasetError):
            build_cross_vector(np.ones((2, 3)), np.ones(4), KernelParams(1.0))


class TestSnapshots:
    def test_equal_to_separate_builds(self, rng):
        x, xs = rng.normal(size=(6, 4)), rng.normal(size=(3, 4))
        params = KernelParams(1.8, 0.0, NoiseSpec.multiplicative(1.1), 1)
        snaps = gram_snapshots(x, xs, params, [3, 10])
        for depth in (3, 10):
            p = params.with_depth(depth)
            gram, cross, psi0 = snaps[depth]
            np.testing.assert_array_equal(gram.values, build_train_gram(x, p).values)
            k, ps = build_cross_matrix(x, xs, p)
            np.testing.assert_array_equal(cross, k)
            np.testing.assert_array_equal(psi0, ps)

    def test_partial_on_overflow(self, rng):
        x = rng.normal(size=(3, 4))
        params = KernelParams(3.0, 0.0, NoiseSpec.multiplicative(2.0), 1)
        with pytest.raises(KernelOverflowError) as info:
            gram_snapshots(x, x, params, [10, 5000])
        assert set(info.value.partial) == {10}


class TestFrobenius:
    def test_identity(self):
        assert frobenius_norm(np.eye(2)) == pytest.approx(math.sqrt(2))

    def test_ones(self):
        assert frobenius_norm(np.ones((3, 3))) == 3.0

    def test_double_loop(self, rng):
        g = build_train_gram(rng.normal(size=(7, 3)), KernelParams(1.2, 0.1, NoiseSpec.multiplicative(1.5), 20))
        total = 0.0
        for i in range(7):
            for j in range(7):
                total += g.values[i, j] ** 2
        assert frobenius_norm(g) == pytest.approx(math.sqrt(total), rel=1e-14)


class TestCache:
    def test_round_trip(self, tmp_path, rng):
        g = build_train_gram(rng.normal(size=(5, 3)), KernelParams(1.2, 0.1, NoiseSpec.additive(0.3), 4))
        save_gram(tmp_path / "g.bin", g)
        back = load_gram(tmp_path / "g.bin")
        np.testing.assert_array_equal(back.values, g.values)
        assert back.params == g.params

    def test_bad_magic(self, tmp_path):
        (tmp_path / "g.bin").write_bytes(b"X" * 64)
        with pytest.raises(DatasetError):
            load_gram(tmp_path / "g.bin")


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(1, 30), st.floats(0.5, 2.5), st.floats(1.0, 3.0), st.integers(0, 10**6))
def test_psd_after_regularisation(n, depth, sw, mu2, seed):
    x = np.random.default_rng(seed).normal(size=(n, 3))
    g = build_train_gram(x, KernelParams(sw, 0.0, NoiseSpec.multiplicative(mu2), depth)).values
    eig = np.linalg.eigvalsh(g)
    assert eig.min() >= -1e-10 * max(1.0, eig.max())
