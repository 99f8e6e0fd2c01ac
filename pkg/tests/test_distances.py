import math

import numpy as np
import pytest

from l2metrics import distances as D
from l2metrics import field as M
from l2metrics.errors import DomainError, InvalidPath
from l2metrics.fiber import clear_theta_cache
from l2metrics.samples import random_block_field, random_block_scalar
from oracles import theta_closed_form

SQRT2 = math.sqrt(2.0)


@pytest.fixture(autouse=True)
def _fresh_cache():
    clear_theta_cache()


class TestThetaY:
    def test_identity_vs_zero(self):
        d = M.make_grid(2, 16)
        assert D.theta_Y(M.MetricField.identity(d), M.zero_field(d)) == pytest.approx(4 * SQRT2, rel=1e-9)

    def test_conformal_pair(self):
        d = M.make_grid(2, 16)
        f = M.MetricField.identity(d)
        # per-cell cone value 3 sqrt(2) times the measure 4
        assert D.theta_Y(f, f.scaled(4.0)) == pytest.approx(12 * SQRT2, rel=1e-3)

    def test_mask_restricts_integral(self):
        d = M.make_grid(2, 16)
        mask = d.empty_mask()
        mask[:8] = True
        res = D.theta_Y_report(M.MetricField.identity(d), M.zero_field(d), mask)
        assert res.value == pytest.approx(2 * SQRT2, rel=1e-9)
        assert np.all(res.per_cell[~mask] == 0)

    def test_reference_metric_invariance(self):
        # Theta only depends on the field values, not on the chart reference
        rng = np.random.default_rng(42)
        d_flat = M.make_grid(2, 8)
        f0 = random_block_field(d_flat, rng, blocks=2)
        f1 = random_block_field(d_flat, rng, blocks=2)
        g = np.array([[2.0, 0.5], [0.5, 1.0]])
        d_ref = M.make_grid(2, 8, g)
        a = D.theta_Y(f0, f1)
        b = D.theta_Y(M.SemimetricField(d_ref, f0.cells), M.SemimetricField(d_ref, f1.cells))
        assert b == pytest.approx(a, rel=1e-6)

    def test_matches_cellwise_closed_form(self):
        rng = np.random.default_rng(42)
        d = M.make_grid(2, 8)
        f0 = random_block_field(d, rng, blocks=2)
        f1 = random_block_field(d, rng, blocks=2)
        ref = sum(theta_closed_form(f0.cells[i, j], f1.cells[i, j]) for i in range(8) for j in range(8))
        assert D.theta_Y(f0, f1) == pytest.approx(ref * float(d.cell_measure[0, 0]), rel=1e-3)

    def test_many_matches_single(self):
        rng = np.random.default_rng(42)
        d = M.make_grid(2, 8)
        fs = [random_block_field(d, rng, blocks=2) for _ in range(3)]
        many = D.theta_Y_many([(fs[0], fs[1]), (fs[1], fs[2])])
        assert many[0] == D.theta_Y(fs[0], fs[1])
        assert many[1] == D.theta_Y(fs[1], fs[2])


class TestPathLength:
    def test_conformal_deflation_is_exact(self):
        d = M.make_grid(2, 8)
        f = M.MetricField.identity(d)
        p = D.conformal_segment(f, 0.0, -2.0, 4)
        assert D.path_length_L2(p) == pytest.approx(4 * SQRT2, rel=1e-12)

    def test_constant_path(self):
        f = M.MetricField.identity(M.make_grid(2, 4))
        assert D.path_length_L2(D.FieldPath.from_fields([f, f, f])) == 0.0

    def test_second_order_on_linear_path(self):
        rng = np.random.default_rng(42)
        d = M.make_grid(2, 4)
        f0 = random_block_field(d, rng, blocks=2, log_scale=1.0)
        f1 = random_block_field(d, rng, blocks=2, log_scale=1.0)
        lens = [D.path_length_L2(D.linear_path(f0, f1, t)) for t in (8, 16, 32, 64)]
        diffs = np.abs(np.diff(lens))
        ratios = diffs[:-1] / diffs[1:]
        assert np.all(ratios > 3.5)

    def test_reversal(self):
        rng = np.random.default_rng(42)
        d = M.make_grid(2, 4)
        p = D.linear_path(random_block_field(d, rng, 2), random_block_field(d, rng, 2), 8)
        assert D.path_length_L2(p.reversed()) == pytest.approx(D.path_length_L2(p), rel=1e-13)

    def test_degenerate_moving_cell_rejected(self):
        d = M.make_grid(2, 4)
        t = np.zeros((3, 4, 4, 2, 2))
        for i, s in enumerate((1.0, 1.5, 2.0)):
            t[i, ..., 0, 0] = s
        with pytest.raises(InvalidPath):
            D.path_length_L2(D.FieldPath(d, t))

    def test_bad_shape(self):
        with pytest.raises(InvalidPath):
            D.FieldPath(M.make_grid(2, 4), np.zeros((1, 4, 4, 2, 2)))


class TestConformal:
    def test_geodesic_endpoints(self):
        d = M.make_grid(2, 4)
        f = M.MetricField.identity(d)
        g = D.conformal_geodesic(f, -2.0, 1.0)
        assert g.deflated_mask.all()
        np.testing.assert_allclose(D.conformal_geodesic(f, 2.0, 1.0).cells, 4 * f.cells)

    def test_psi_domain(self):
        f = M.MetricField.identity(M.make_grid(2, 4))
        with pytest.raises(DomainError):
            D.psi_map(f, -2.5)

    def test_lambda_from_ratio_inverts_psi(self):
        f = M.MetricField.identity(M.make_grid(3, 4))
        lam = D.lambda_from_ratio(5.0, 3)
        np.testing.assert_allclose(D.psi_map(f, lam).cells, 5.0 * f.cells, rtol=1e-12)


class TestBounds:
    def test_identity_vs_zero_is_tight(self):
        d = M.make_grid(2, 16)
        res = D.d_bounds(M.MetricField.identity(d), M.zero_field(d))
        assert res.upper == pytest.approx(4 * SQRT2, rel=1e-9)
        assert res.lower == pytest.approx(4 * SQRT2, rel=1e-9)

    def test_identity_vs_quarter(self):
        d = M.make_grid(2, 8)
        f = M.MetricField.identity(d)
        assert D.volume_lower_bound(f, f.scaled(0.25)) == pytest.approx(2 * SQRT2)
        res = D.d_bounds(f, f.scaled(0.25))
        # a conformal equality case: both bounds meet up to roundoff
        assert res.lower >= 2 * SQRT2 * (1 - 1e-12)
        assert res.upper == pytest.approx(res.lower, rel=1e-12)

    def test_identical(self):
        f = M.MetricField.identity(M.make_grid(2, 4))
        res = D.d_bounds(f, f)
        assert res.upper == 0.0 and res.lower == 0.0

    def test_upper_beats_seeds_and_dominates_lower(self):
        rng = np.random.default_rng(42)
        d = M.make_grid(2, 8)
        f0 = random_block_field(d, rng, blocks=2, log_scale=1.0)
        f1 = random_block_field(d, rng, blocks=2, log_scale=1.0)
        res = D.d_bounds(f0, f1)
        assert res.converged
        assert res.upper <= min(res.candidates["linear"], res.candidates["log-linear"])
        assert res.lower <= res.upper
        assert D.path_length_L2(res.witness_path) == pytest.approx(res.upper, rel=1e-12)

    def test_theta_inversion(self):
        # sqrt(n) d^2 + 2 sqrt(V) d = Theta at the returned root
        d = D.theta_lower_bound(3.0, 4.0, 5.0, 2)
        assert math.sqrt(2) * d * d + 2 * 2.0 * d == pytest.approx(3.0)


class TestInequalities:
    def test_pointwise_scaling_shrinks_theta(self):
        rng = np.random.default_rng(42)
        d = M.make_grid(2, 8)
        f0 = random_block_field(d, rng, blocks=2)
        f1 = random_block_field(d, rng, blocks=2)
        base = D.theta_Y(f0, f1)
        for _ in range(3):
            rho = random_block_scalar(d, rng, 2, 0.05, 1.0)
            assert D.theta_Y(f0.scaled(rho), f1.scaled(rho)) <= base * (1 + 1e-6)

    def test_conformal_segment_bound(self):
        rng = np.random.default_rng(42)
        d = M.make_grid(2, 8)
        f = random_block_field(d, rng, blocks=2)
        kappa = random_block_scalar(d, rng, 2, -1.5, 2.0)
        lam = random_block_scalar(d, rng, 2, -1.5, 2.0)
        bound = math.sqrt(2) * M.function_norm(f, lam - kappa)
        assert D.path_length_L2(D.conformal_segment(f, kappa, lam, 64)) <= bound * (1 + 1e-6)

    def test_conformal_path_is_critical(self):
        d = M.make_grid(2, 4)
        f = M.MetricField.identity(d)
        p = D.conformal_segment(f, 0.0, 2.0, 16)
        base = D.path_length_L2(p)
        rng = np.random.default_rng(42)
        for _ in range(10):
            t = p.tensors.copy()
            i = rng.integers(1, 16)
            bump = rng.normal(scale=1e-3, size=(2, 2))
            t[i] += bump + bump.T
            assert D.path_length_L2(D.FieldPath(d, t)) >= base * (1 - 1e-6)
