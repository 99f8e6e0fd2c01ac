import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l2metrics import _linalg as la
from l2metrics import _paths
from l2metrics.samples import random_spd
from oracles import central_gradient, spd_log, spd_sqrt


class TestLinalg:
    def test_eigh_2x2_matches_lapack(self):
        rng = np.random.default_rng(42)
        x = la.sym(rng.normal(size=(200, 2, 2)))
        w, v = la.eigh(x)
        np.testing.assert_allclose(w, np.linalg.eigvalsh(x), atol=1e-12)
        np.testing.assert_allclose(la.from_eig(w, v), x, atol=1e-12)
        np.testing.assert_allclose(np.swapaxes(v, -1, -2) @ v, np.broadcast_to(np.eye(2), x.shape), atol=1e-12)

    def test_eigh_diagonal_is_exact(self):
        x = np.array([[3.0, 0.0], [0.0, 0.5]])
        w, v = la.eigh(x)
        np.testing.assert_array_equal(la.from_eig(w, v), x)

    def test_matrix_functions_match_scipy(self):
        rng = np.random.default_rng(42)
        for n in (2, 3):
            a = random_spd(rng, n, log_scale=1.0)
            np.testing.assert_allclose(la.logm(a), spd_log(a), atol=1e-10)
            np.testing.assert_allclose(la.sqrtm(a), spd_sqrt(a), atol=1e-10)
            np.testing.assert_allclose(la.expm(la.logm(a)), a, rtol=1e-12)
            np.testing.assert_allclose(la.powm(a, 0.5), spd_sqrt(a), atol=1e-10)

    def test_dexpm_adjoint_against_central_differences(self):
        rng = np.random.default_rng(42)
        for n in (2, 3):
            s = la.sym(rng.normal(size=(n, n)))
            g = la.sym(rng.normal(size=(n, n)))
            w, v = la.eigh(s)
            analytic = la.dexpm_adjoint(w, v, g)

            def pairing(x):
                return float(np.sum(g * la.expm(la.sym(x.reshape(n, n)))))

            numeric = central_gradient(pairing, s.ravel()).reshape(n, n)
            np.testing.assert_allclose(la.sym(numeric), analytic, atol=1e-6)

    def test_divided_differences_repeated_eigenvalue(self):
        w = np.array([1.0, 1.0])
        dd = la.divided_differences(w, np.exp, np.exp)
        np.testing.assert_allclose(dd, np.full((2, 2), np.e))

    @given(st.integers(2, 4), st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_pack_roundtrip(self, n, seed):
        x = la.sym(np.random.default_rng(seed).normal(size=(3, n, n)))
        p = la.pack(x)
        assert p.shape == (3, la.packed_size(n))
        assert la.n_from_packed(p.shape[-1]) == n
        np.testing.assert_array_equal(la.unpack(p, n), x)

    def test_n_from_packed_rejects_non_triangular(self):
        with pytest.raises(ValueError):
            la.n_from_packed(4)


def _energy(nodes, rule):
    r = la.sqrtm(nodes)
    f, _ = _paths.segment_terms(nodes, r, rule)
    return float(f.sum())


class TestPathEnergy:
    @pytest.mark.parametrize("midpoint,det_power", [("arithmetic", 1.0), ("root", 0.5), ("root", 1.0)])
    @pytest.mark.parametrize("n", [2, 3])
    def test_gradient_matches_central_differences(self, midpoint, det_power, n):
        rng = np.random.default_rng(42)
        rule = _paths.Rule(midpoint, det_power)
        nodes = random_spd(rng, n, (1, 5), log_scale=0.6)
        r = la.sqrtm(nodes)
        _, grad_r = _paths._terms_and_grad(nodes, r, rule)

        def energy_of_roots(x):
            rr = la.sym(x.reshape(r.shape))
            f, _ = _paths._terms_and_grad(rr @ rr, rr, rule)
            return float(f.sum())

        numeric = central_gradient(energy_of_roots, r.ravel(), h=1e-6).reshape(r.shape)
        np.testing.assert_allclose(la.sym(numeric), la.sym(grad_r), rtol=1e-5, atol=1e-7)

    @pytest.mark.parametrize("midpoint,det_power", [("arithmetic", 1.0), ("root", 0.5)])
    def test_diagonal_gradient_matches_full(self, midpoint, det_power):
        rng = np.random.default_rng(42)
        rule = _paths.Rule(midpoint, det_power)
        d = np.exp(rng.normal(size=(2, 6, 3)))
        full = np.zeros(d.shape + (3,))
        idx = np.arange(3)
        full[..., idx, idx] = d
        rf = np.zeros_like(full)
        rf[..., idx, idx] = np.sqrt(d)
        f_full, g_full = _paths._terms_and_grad(full, rf, rule)
        f_diag, g_diag = _paths._diag_terms_and_grad(d, np.sqrt(d), rule)
        np.testing.assert_allclose(f_diag, f_full, rtol=1e-12)
        np.testing.assert_allclose(g_diag, np.diagonal(g_full, axis1=-2, axis2=-1), rtol=1e-10)

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            _paths.Rule("geometric")

    def test_singular_midpoint_flagged(self):
        nodes = np.zeros((1, 2, 2, 2))
        nodes[0, 1] = np.diag([1.0, 0.0])
        f, bad = _paths.segment_terms(nodes, la.sqrtm(nodes), _paths.Rule())
        assert bad[0, 0] and np.isinf(f[0, 0])

    def test_still_segment_at_boundary_is_zero(self):
        nodes = np.zeros((1, 3, 2, 2))
        f, bad = _paths.segment_terms(nodes, nodes, _paths.Rule("root", 0.5))
        assert not bad.any() and np.all(f == 0)

    def test_root_midpoint_exact_on_surface_conformal_path(self):
        # (1-t)^2 I in n=2 has constant speed 2 sqrt(2) per unit measure
        t = np.linspace(0.0, 1.0, 5)
        nodes = ((1.0 - t) ** 2)[None, :, None, None] * np.eye(2)
        f, _ = _paths.segment_terms(nodes, la.sqrtm(nodes), _paths.Rule("root", 0.5))
        np.testing.assert_allclose(np.sqrt(f).sum(), 2.0 * np.sqrt(2.0), rtol=1e-14)


class TestOptimizer:
    def test_energy_decreases_and_endpoints_fixed(self):
        rng = np.random.default_rng(42)
        a0 = random_spd(rng, 2, (3,), 1.0)
        a1 = random_spd(rng, 2, (3,), 1.0)
        t = np.linspace(0, 1, 9)[None, :, None, None]
        seed = (1 - t) * a0[:, None] + t * a1[:, None]
        rule = _paths.Rule()
        res = _paths.optimize_paths(seed, rule)
        assert res.converged
        np.testing.assert_array_equal(res.nodes[:, 0], a0)
        np.testing.assert_array_equal(res.nodes[:, -1], a1)
        assert res.terms.sum() <= _energy(seed, rule) + 1e-12
        assert np.all(np.linalg.eigvalsh(res.nodes[:, 1:-1])[..., 0] > 0)

    def test_weights_do_not_change_independent_minimizers(self):
        rng = np.random.default_rng(42)
        a0 = random_spd(rng, 2, (2,), 1.0)
        a1 = random_spd(rng, 2, (2,), 1.0)
        t = np.linspace(0, 1, 9)[None, :, None, None]
        seed = (1 - t) * a0[:, None] + t * a1[:, None]
        r1 = _paths.optimize_paths(seed, _paths.Rule(), rtol=1e-12)
        r2 = _paths.optimize_paths(seed, _paths.Rule(), weights=np.array([1.0, 10.0]), rtol=1e-12)
        np.testing.assert_allclose(np.sqrt(r1.terms).sum(1), np.sqrt(r2.terms).sum(1), rtol=1e-6)

    def test_refine_preserves_endpoints_and_definiteness(self):
        t = np.linspace(0, 1, 5)
        nodes = ((1 - t) ** 2)[None, :, None, None] * np.diag([2.0, 3.0])
        out = _paths.refine(nodes, 16)
        assert out.shape == (1, 17, 2, 2)
        np.testing.assert_array_equal(out[:, 0], nodes[:, 0])
        np.testing.assert_array_equal(out[:, -1], nodes[:, -1])
        assert np.all(np.linalg.eigvalsh(out[:, 1:-1])[..., 0] > 0)

    def test_single_segment_is_returned_as_is(self):
        nodes = np.stack([np.eye(2), 2 * np.eye(2)])[None]
        res = _paths.optimize_paths(nodes, _paths.Rule())
        assert res.iterations == 0
        np.testing.assert_array_equal(res.nodes, nodes)
