import math

import numpy as np
import pytest

from noisy_nngp.data import Dataset, normalize_inputs, RawImageSet, Source
from noisy_nngp.errors import ExperimentError
from noisy_nngp.experiments import (
    CellStatus,
    SweepCell,
    SweepConfig,
    band_size,
    best_cell,
    depth_trace,
    run_1d_demo,
    run_sweep,
    uncertainty_correlation,
)
from noisy_nngp.kernel import KernelParams, NoiseSpec, closed_form_diag
from noisy_nngp.mc_oracle import unit_pair


def toy_split(rng, n, d=6, classes=3):
    centres = rng.normal(size=(classes, d)) * 2
    labels = np.arange(n) % classes
    x = centres[labels] + rng.normal(size=(n, d))
    return normalize_inputs(RawImageSet(x, labels, Source.CSV), "unit_norm", classes)


@pytest.fixture
def toy(rng):
    return toy_split(rng, 30), toy_split(rng, 20)


class TestSweepConfig:
    @pytest.mark.parametrize("kw", [
        dict(sigma_w2_grid=(), mu2_grid=(1.0,)),
        dict(sigma_w2_grid=(1.0, 1.0), mu2_grid=(1.0,)),
        dict(sigma_w2_grid=(1.2, 1.0), mu2_grid=(1.0,)),
        dict(sigma_w2_grid=(1.0,), mu2_grid=(1.0,), n_train=0),
        dict(sigma_w2_grid=(1.0,), mu2_grid=(1.0,), depths=(20, 10)),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ExperimentError):
            SweepConfig(**kw)


class TestRunSweep:
    def test_cells_sorted_and_complete(self, toy):
        cfg = SweepConfig((1.0, 1.5, 2.0), (1.0, 2.0), depths=(3, 8))
        cells = run_sweep(cfg, *toy)
        assert len(cells) == 12
        keys = [(c.depth, c.mu2, c.sigma_w2) for c in cells]
        assert keys == sorted(keys)
        for c in cells:
            assert c.status is CellStatus.OK
            assert 0 <= c.accuracy <= 1
            assert c.distance_to_critical == pytest.approx(abs(c.sigma_w2 - 2 / c.mu2))

    def test_thread_independent(self, toy):
        cfg = SweepConfig((1.0, 1.5, 2.0), (1.0, 1.5, 2.0), depths=(5,))
        a = run_sweep(cfg, *toy)
        b = run_sweep(SweepConfig((1.0, 1.5, 2.0), (1.0, 1.5, 2.0), depths=(5,), threads=4), *toy)
        assert [c.as_row() for c in a] == [c.as_row() for c in b]

    def test_overflow_recorded(self, toy):
        cfg = SweepConfig((1.0, 3.0), (2.0,), depths=(10, 3000))
        cells = {(c.depth, c.sigma_w2): c for c in run_sweep(cfg, *toy)}
        assert cells[(10, 3.0)].status is CellStatus.OK
        bad = cells[(3000, 3.0)]
        assert bad.status is CellStatus.OVERFLOW
        assert bad.accuracy is None and bad.frobenius_norm is None and bad.mean_pred_variance is None
        assert cells[(3000, 1.0)].status is CellStatus.OK

    @pytest.mark.parametrize("mu2", [1.0, 1.7, 3.0])
    def test_critical_deep_cell(self, toy, mu2):
        cfg = SweepConfig((2.0 / mu2,), (mu2,), depths=(100,))
        (cell,) = run_sweep(cfg, *toy)
        assert cell.status is CellStatus.OK
        assert all(math.isfinite(v) for v in (cell.accuracy, cell.frobenius_norm, cell.mean_pred_variance))

    def test_additive_sweep(self, toy):
        cfg = SweepConfig((1.0, 1.5), (0.1, 0.5), depths=(5,), noise="add", sigma_b2=0.05)
        assert all(c.ok for c in run_sweep(cfg, *toy))

    def test_band_and_best(self):
        cells = [SweepCell(sw, 1.0, 10, 0.0, CellStatus.OK, acc) for sw, acc in
                 [(1.0, 0.5), (1.5, 0.90), (2.0, 0.91)]]
        cells.append(SweepCell(2.5, 1.0, 10, 0.0, CellStatus.OVERFLOW))
        assert band_size(cells, 10) == 2
        assert best_cell(cells, 10).sigma_w2 == 2.0
        with pytest.raises(ExperimentError):
            best_cell(cells, 99)


def cell(var, acc, dist):
    return SweepCell(1.0, 1.0, 10, 0.0, CellStatus.OK, acc, 1.0, var, dist)


class TestUncertaintyCorrelation:
    def test_perfect_anticorrelation(self):
        near = [cell(v, 1 - v, 0.0) for v in (0.1, 0.2, 0.4)]
        far = [cell(v, v, 1.0) for v in (0.1, 0.3, 0.5)]
        cn, cf = uncertainty_correlation(near + far, 0.05)
        assert cn == pytest.approx(-1.0)
        assert cf == pytest.approx(1.0)

    def test_constant_variance(self):
        near = [cell(0.2, a, 0.0) for a in (0.1, 0.2, 0.4)]
        far = [cell(v, v, 1.0) for v in (0.1, 0.3, 0.5)]
        with pytest.raises(ExperimentError, match="constant"):
            uncertainty_correlation(near + far, 0.05)

    def test_too_few(self):
        cells = [cell(v, v, 0.0) for v in (0.1, 0.2)] + [cell(v, v, 1.0) for v in (0.1, 0.2, 0.3)]
        with pytest.raises(ExperimentError, match=">= 3"):
            uncertainty_correlation(cells, 0.05)

    def test_failed_cells_ignored(self):
        cells = [cell(v, 1 - v, 0.0) for v in (0.1, 0.2, 0.4)] + [cell(v, v, 1.0) for v in (0.1, 0.3, 0.5)]
        cells.append(SweepCell(1.0, 1.0, 10, 0.0, CellStatus.FACTOR_FAIL, distance_to_critical=0.0))
        assert uncertainty_correlation(cells)[0] == pytest.approx(-1.0)


class TestDepthTrace:
    pair = unit_pair(64, 0.5, seed=0)

    def test_critical_flat(self):
        (tr,) = depth_trace(self.pair, [KernelParams.critical(NoiseSpec.multiplicative(1.5), 50)])
        np.testing.assert_allclose(tr.k_xx, tr.k_xx[1], rtol=1e-12)
        assert len(tr.k_xx) == 51
        assert tr.overflow_layer is None

    def test_offdiag_asymptote_decreases_with_noise(self):
        mus = (1.0, 1.25, 1.5, 2.0)
        traces = depth_trace(self.pair, [KernelParams.critical(NoiseSpec.multiplicative(m), 200) for m in mus])
        ends = [t.k_xy[-1] for t in traces]
        assert np.all(np.diff(ends) < 0)

    def test_subcritical_vanishes(self):
        (tr,) = depth_trace(self.pair, [KernelParams(1.0, 0.0, NoiseSpec.multiplicative(1.5), 200)])
        assert tr.k_xx[-1] < 1e-6 and abs(tr.k_xy[-1]) < 1e-6

    @pytest.mark.parametrize("mu2", [1.25, 1.5, 2.0])
    def test_supercritical_crossing_layer(self, mu2):
        params = KernelParams(2.0 / mu2 + 0.5, 0.0, NoiseSpec.multiplicative(mu2), 200)
        (tr,) = depth_trace(self.pair, [params])
        k0 = tr.k_xx[0]
        predicted = next(l for l in range(1, 201) if closed_form_diag(k0, params.with_depth(l)) > 1e6)
        crossed = int(np.argmax(tr.k_xx > 1e6))
        assert crossed == predicted < 200

    def test_overflow_reported(self):
        (tr,) = depth_trace(self.pair, [KernelParams(4.0, 0.0, NoiseSpec.multiplicative(2.0), 1000)])
        assert tr.overflow_layer is not None
        assert len(tr.k_xx) == tr.overflow_layer
        assert np.all(np.isfinite(tr.k_xx))


@pytest.fixture(scope="module")
def bundles():
    return run_1d_demo((1.0, 1.001, 2.0))


class TestDemo:
    def test_critical_params(self, bundles):
        assert [b.sigma_w2 for b in bundles] == pytest.approx([2.0, 2 / 1.001, 1.0])

    def test_banded_without_noise(self, bundles):
        g = bundles[0].gram
        assert np.all(np.diag(g, 1) > 0.5 * np.diag(g)[:-1])

    def test_ratio_decreasing(self, bundles):
        ratios = [b.offdiag_ratio for b in bundles]
        assert ratios[0] > ratios[1] > ratios[2]

    def test_far_points_noisy(self, bundles):
        b = bundles[2]
        far = np.min(np.abs(b.grid[:, None] - b.train_x[None, :]), axis=1) >= 0.5
        assert far.sum() > 0
        assert np.all(np.abs(b.fit_mean[far]) < 0.2)
        assert np.all(b.fit_var[far] > 0.8 * b.psi[far])

    def test_prior_samples_shape(self, bundles):
        assert bundles[0].prior_samples.shape == (5, bundles[0].grid.size)

    def test_empty_grid(self):
        with pytest.raises(ExperimentError):
            run_1d_demo((1.0,), grid=[])


class TestMnistVariance:
    def test_noise_increases_mean_variance(self, data_dir):
        cells = {}
        for mu2 in (1.0, 2.0):
            cfg = SweepConfig((2.0 / mu2,), (mu2,), depths=(20,), n_train=200, n_test=200, data_dir=data_dir)
            (cells[mu2],) = run_sweep(cfg)
        assert cells[2.0].mean_pred_variance > cells[1.0].mean_pred_variance
