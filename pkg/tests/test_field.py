import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l2metrics import field as M
from l2metrics.errors import DomainMismatch, ResolutionError
from l2metrics.samples import random_block_field, random_spd


class TestGridDomain:
    def test_cell_measure_and_centers(self):
        d = M.make_grid(2, 8)
        assert d.total_measure == pytest.approx(4.0)
        x, y = d.centers()
        assert x[0, 0] == pytest.approx(-1 + 0.125)
        assert y[0, 3] == pytest.approx(-1 + 0.125 + 3 * 0.25)

    def test_cell_index_wraps(self):
        d = M.make_grid(2, 8)
        assert d.cell_index((-0.99, 0.99)) == (0, 7)
        assert d.cell_index((1.01, -1.01)) == (0, 7)

    def test_resolution_limits(self):
        with pytest.raises(ResolutionError):
            M.make_grid(2, 3)

    def test_scalar_reference_scales_measure(self):
        d = M.make_grid(2, 8, 4.0)
        assert d.total_measure == pytest.approx(16.0)

    def test_reference_must_be_definite(self):
        with pytest.raises(ValueError):
            M.make_grid(2, 4, np.diag([1.0, -1.0]))

    def test_mask_validation(self):
        d = M.make_grid(2, 4)
        with pytest.raises(DomainMismatch):
            d.check_mask(np.ones((4, 5), dtype=bool))
        with pytest.raises(DomainMismatch):
            d.check_mask(np.ones((4, 4)))

    def test_three_dimensional(self):
        d = M.make_grid(3, 4)
        assert d.n == 3 and d.total_measure == pytest.approx(8.0)


class TestFields:
    def test_deflation_by_min_eigenvalue(self):
        d = M.make_grid(2, 4)
        cells = np.broadcast_to(np.eye(2), (4, 4, 2, 2)).copy()
        cells[0, 0] = np.diag([1.0, 0.0])
        f = M.SemimetricField(d, cells)
        assert f.deflated_mask[0, 0] and f.deflated_mask.sum() == 1
        np.testing.assert_array_equal(f.cells[0, 0], np.zeros((2, 2)))

    def test_metric_rejects_deflation(self):
        d = M.make_grid(2, 4)
        with pytest.raises(ValueError):
            M.MetricField(d, np.zeros((4, 4, 2, 2)))

    def test_rejects_indefinite(self):
        d = M.make_grid(2, 4)
        with pytest.raises(ValueError):
            M.SemimetricField.constant(d, np.diag([1.0, -1.0]))

    def test_rejects_wrong_shape(self):
        with pytest.raises(DomainMismatch):
            M.SemimetricField(M.make_grid(2, 4), np.zeros((4, 4, 3, 3)))

    def test_domain_mismatch(self):
        a = M.MetricField.identity(M.make_grid(2, 4))
        b = M.MetricField.identity(M.make_grid(2, 8))
        with pytest.raises(DomainMismatch):
            M.l2_distance(a, b)

    def test_cells_are_read_only(self):
        f = M.MetricField.identity(M.make_grid(2, 4))
        with pytest.raises(ValueError):
            f.cells[0, 0, 0, 0] = 2.0


class TestMeasures:
    def test_volume_of_identity_and_scaled(self):
        d = M.make_grid(2, 16)
        f = M.MetricField.identity(d)
        assert M.volume(f) == pytest.approx(4.0)
        assert M.volume(f.scaled(0.25)) == pytest.approx(1.0)
        assert M.volume(M.zero_field(d)) == 0.0

    def test_volume_three_dimensional(self):
        d = M.make_grid(3, 4)
        assert M.volume(M.MetricField.identity(d).scaled(4.0)) == pytest.approx(8.0 * 8.0)

    def test_volume_with_reference_metric(self):
        # mu_f does not depend on the reference metric
        rng = np.random.default_rng(42)
        g = random_spd(rng, 2, (8, 8), 0.5)
        cells = random_spd(rng, 2, (8, 8), 0.5)
        f_flat = M.SemimetricField(M.make_grid(2, 8), cells)
        f_ref = M.SemimetricField(M.make_grid(2, 8, g), cells)
        assert M.volume(f_ref) == pytest.approx(M.volume(f_flat), rel=1e-12)

    def test_masked_volume(self):
        d = M.make_grid(2, 8)
        mask = d.empty_mask()
        mask[:4] = True
        assert M.volume(M.MetricField.identity(d), mask) == pytest.approx(2.0)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_volume_is_additive(self, seed):
        rng = np.random.default_rng(seed)
        d = M.make_grid(2, 8)
        f = random_block_field(d, rng, blocks=4, deflate_prob=0.2)
        mask = rng.random(d.dims) < 0.5
        assert M.volume(f, mask) + M.volume(f, ~mask) == pytest.approx(M.volume(f), rel=1e-12, abs=1e-14)


class TestNormsAndPredicates:
    def test_difference_norm(self):
        d = M.make_grid(2, 4)
        a = M.MetricField.identity(d)
        b = a.scaled(3.0)
        np.testing.assert_allclose(M.difference_norm(a, b), 2 * math.sqrt(2))
        assert M.l2_distance(a, b) == pytest.approx(2 * math.sqrt(2) * 2.0)

    def test_pointwise_norm_uses_reference(self):
        d = M.make_grid(2, 4, 2.0)
        h = np.broadcast_to(np.eye(2), (4, 4, 2, 2))
        np.testing.assert_allclose(M.pointwise_norm(M.MetricField.identity(d), h), math.sqrt(2) / 2)

    def test_amenability(self):
        d = M.make_grid(2, 4)
        f = M.SemimetricField.constant(d, np.diag([0.5, 3.0]))
        assert M.amenability_bounds(f) == (3.0, 0.5)
        assert M.is_amenable(f, 0.5, 3.0)
        assert not M.is_amenable(f, 0.6, 3.0)
        assert M.is_quasi_amenable(M.zero_field(d), 0.0)

    def test_semimetric_equiv(self):
        d = M.make_grid(2, 4)
        cells = np.broadcast_to(np.eye(2), (4, 4, 2, 2)).copy()
        a = M.SemimetricField(d, cells)
        cells[1, 1] = np.diag([1e-14, 1.0])
        b = M.SemimetricField(d, cells)
        cells[1, 1] = 0.0
        c = M.SemimetricField(d, cells)
        assert not M.semimetric_equiv(a, b)
        # both deflated representatives are identified
        assert M.semimetric_equiv(b, c)
        assert M.semimetric_equiv(a, a.scaled(1.0 + 1e-13), eps_eq=1e-12)

    def test_carrier(self):
        d = M.make_grid(2, 4)
        a = M.MetricField.identity(d)
        rho = np.ones(d.dims)
        rho[2, 3] = 2.0
        np.testing.assert_array_equal(M.carrier(a, a.scaled(rho)), rho != 1.0)

    def test_function_norm(self):
        d = M.make_grid(2, 8)
        f = M.MetricField.identity(d).scaled(4.0)
        assert M.function_norm(f, 0.5) == pytest.approx(math.sqrt(0.25 * 4.0 * 4.0))
