"""Discrete path energies on the SPD cone and a batched quasi-Newton optimizer.

Every path problem is a chain of nodes ``a_0, ..., a_K`` in the cone of
symmetric positive semi-definite n x n matrices (g-orthonormal frame, so the
reference metric is the identity).  A segment contributes

    f(m, D) = tr(m^-1 D m^-1 D) * det(m)**det_power,   D = a_{i+1} - a_i,

evaluated at a segment midpoint ``m``.  With ``det_power = 1`` this is the
squared fiber norm; with ``det_power = 1/2`` it is the pointwise integrand of
the L2 metric.  Two midpoint rules are supported:

* ``"arithmetic"``: m = (a_i + a_{i+1}) / 2;
* ``"root"``: m = ((a_i^(1/2) + a_{i+1}^(1/2)) / 2)^2, which integrates
  conformal paths of the two-dimensional L2 metric exactly and keeps the
  rule second order elsewhere.

Interior nodes are optimized in log coordinates ``a = exp(S)``; the
gradient is analytic (Daleckii-Krein for the exponential).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import _linalg as la

MIDPOINTS = ("arithmetic", "root")


@dataclass
class Rule:
    midpoint: str = "arithmetic"
    det_power: float = 1.0

    def __post_init__(self):
        if self.midpoint not in MIDPOINTS:
            raise ValueError(f"unknown midpoint rule {self.midpoint!r}")


def _inv_det(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = m.shape[-1]
    if n == 2:
        det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
        adj = np.empty_like(m)
        adj[..., 0, 0] = m[..., 1, 1]
        adj[..., 1, 1] = m[..., 0, 0]
        adj[..., 0, 1] = -m[..., 0, 1]
        adj[..., 1, 0] = -m[..., 1, 0]
        safe = np.where(det > 0, det, 1.0)
        return adj / safe[..., None, None], det
    det = np.linalg.det(m)
    eye = np.broadcast_to(np.eye(n), m.shape)
    safe = np.where((det > 0)[..., None, None], m, eye)
    return np.linalg.inv(safe), det


def segment_terms(a: np.ndarray, r: np.ndarray | None, rule: Rule, eps: float = 0.0):
    """Per-segment integrand for node stacks ``a`` of shape (..., K+1, n, n).

    ``r`` holds the matrix square roots of the nodes (required for the root
    midpoint).  Returns ``(f, bad)`` where ``bad`` flags segments whose
    midpoint is singular while the difference is nonzero.
    """
    d = a[..., 1:, :, :] - a[..., :-1, :, :]
    if rule.midpoint == "arithmetic":
        m = 0.5 * (a[..., 1:, :, :] + a[..., :-1, :, :])
    else:
        q = 0.5 * (r[..., 1:, :, :] + r[..., :-1, :, :])
        m = q @ q
    minv, det = _inv_det(m)
    p = minv @ d
    quad = np.einsum("...ij,...ji->...", p, p)
    scale = np.clip(det, 0.0, None) ** rule.det_power
    still = ~np.any(d != 0, axis=(-2, -1))
    singular = det <= eps * np.maximum(1.0, np.abs(m).max(axis=(-2, -1))) ** m.shape[-1]
    f = np.where(still, 0.0, quad * scale)
    bad = singular & ~still
    return np.where(bad, np.inf, f), bad


def _terms_and_grad(a: np.ndarray, r: np.ndarray, rule: Rule):
    """Segment integrand and its gradient w.r.t. the node square roots ``r``."""
    d = a[:, 1:] - a[:, :-1]
    if rule.midpoint == "arithmetic":
        m = 0.5 * (a[:, 1:] + a[:, :-1])
        q = None
    else:
        q = 0.5 * (r[:, 1:] + r[:, :-1])
        m = q @ q
    minv, det = _inv_det(m)
    det = np.clip(det, 1e-300, None)
    p = minv @ d
    quad = np.einsum("...ij,...ji->...", p, p)
    scale = det ** rule.det_power
    f = quad * scale

    pm = p @ minv  # m^-1 D m^-1
    g_d = 2.0 * scale[..., None, None] * pm
    g_m = scale[..., None, None] * (
        -2.0 * (p @ pm) + (rule.det_power * quad)[..., None, None] * minv
    )
    g_d = la.sym(g_d)
    g_m = la.sym(g_m)

    grad_a = np.zeros_like(a)
    grad_a[:, 1:] += g_d
    grad_a[:, :-1] -= g_d
    if q is None:
        grad_a[:, 1:] += 0.5 * g_m
        grad_a[:, :-1] += 0.5 * g_m
        grad_r = grad_a @ r + r @ grad_a
    else:
        grad_r = grad_a @ r + r @ grad_a
        g_q = g_m @ q + q @ g_m
        grad_r[:, 1:] += 0.5 * g_q
        grad_r[:, :-1] += 0.5 * g_q
    return f, grad_r


def _diag_terms_and_grad(d_a: np.ndarray, d_r: np.ndarray, rule: Rule):
    """Diagonal specialization of :func:`_terms_and_grad` (nodes as (B, K+1, n))."""
    d = d_a[:, 1:] - d_a[:, :-1]
    if rule.midpoint == "arithmetic":
        m = 0.5 * (d_a[:, 1:] + d_a[:, :-1])
        q = None
    else:
        q = 0.5 * (d_r[:, 1:] + d_r[:, :-1])
        m = q * q
    ratio = d / m
    quad = np.sum(ratio * ratio, axis=-1)
    scale = np.prod(m, axis=-1) ** rule.det_power
    f = quad * scale
    g_d = 2.0 * scale[..., None] * ratio / m
    g_m = scale[..., None] * (-2.0 * ratio * ratio / m + (rule.det_power * quad)[..., None] / m)
    grad_a = np.zeros_like(d_a)
    grad_a[:, 1:] += g_d
    grad_a[:, :-1] -= g_d
    if q is None:
        grad_a[:, 1:] += 0.5 * g_m
        grad_a[:, :-1] += 0.5 * g_m
        grad_r = 2.0 * grad_a * d_r
    else:
        grad_r = 2.0 * grad_a * d_r
        g_q = 2.0 * g_m * q
        grad_r[:, 1:] += 0.5 * g_q
        grad_r[:, :-1] += 0.5 * g_q
    return f, grad_r


def is_diagonal(nodes: np.ndarray) -> bool:
    n = nodes.shape[-1]
    off = ~np.eye(n, dtype=bool)
    return not np.any(nodes[..., off])


@dataclass
class OptimizeResult:
    nodes: np.ndarray  # (B, K+1, n, n)
    terms: np.ndarray  # (B, K) segment integrands
    converged: bool
    iterations: int


def optimize_paths(
    nodes: np.ndarray,
    rule: Rule,
    weights: np.ndarray | None = None,
    max_iter: int = 500,
    rtol: float = 1e-8,
) -> OptimizeResult:
    """Minimize the weighted discrete energy over interior nodes.

    ``nodes`` is a (B, K+1, n, n) stack; the first and last node of every
    problem stay fixed and interior nodes must be positive definite.  The
    energy ``K * sum_i f_i`` is minimized rather than the length: its
    minimizers are the constant-speed discrete geodesics and it has no
    reparametrization null space.
    """
    nodes = np.asarray(nodes, dtype=float)
    bsz, kp1, n, _ = nodes.shape
    k = kp1 - 1
    if weights is None:
        weights = np.ones(bsz)
    weights = np.asarray(weights, dtype=float)
    if k < 2 or bsz == 0:
        r = la.sqrtm(nodes)
        f, _ = segment_terms(nodes, r, rule)
        return OptimizeResult(nodes, f, True, 0)

    if is_diagonal(nodes):
        return _optimize_diagonal(nodes, rule, weights, max_iter, rtol)

    ends_r = la.sqrtm(nodes[:, [0, -1]])
    s0 = la.logm(nodes[:, 1:-1])
    x0 = la.pack(s0).ravel()
    npk = la.packed_size(n)

    def assemble(x):
        s = la.unpack(x.reshape(bsz, k - 1, npk), n)
        w, v = la.eigh(0.5 * s)
        r_int = la.from_eig(np.exp(w), v)
        r = np.concatenate([ends_r[:, :1], r_int, ends_r[:, 1:]], axis=1)
        return r, w, v

    def energy_of(x):
        r, w, v = assemble(x)
        a = r @ r
        f, grad_r = _terms_and_grad(a, r, rule)
        per = k * f.sum(axis=1)
        total = float(np.dot(weights, per))
        g_int = grad_r[:, 1:-1] * (k * weights)[:, None, None, None]
        g_s = 0.5 * la.dexpm_adjoint(w, v, la.sym(g_int))
        return total, la.pack_gradient(g_s).ravel()

    x, nit, converged = _lbfgs(energy_of, x0, max_iter, rtol)
    r, _, _ = assemble(x)
    a = r @ r
    a[:, 0] = nodes[:, 0]
    a[:, -1] = nodes[:, -1]
    f, _ = segment_terms(a, r, rule)
    return OptimizeResult(a, f, converged, nit)


def _lbfgs(energy_of, x0, max_iter, rtol):
    e0, _ = energy_of(x0)
    norm = e0 if e0 > 0 else 1.0

    def fun(x):
        e, g = energy_of(x)
        return e / norm, g / norm

    res = minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": rtol, "gtol": 1e-12, "maxcor": 20},
    )
    x = res.x if res.fun <= 1.0 else x0
    # a line-search stall at machine precision is a stop, not a failure;
    # only iteration exhaustion counts as non-convergence
    converged = bool(res.success) or res.nit < max_iter
    return x, int(res.nit), converged


def _optimize_diagonal(nodes, rule, weights, max_iter, rtol):
    bsz, kp1, n, _ = nodes.shape
    k = kp1 - 1
    diag = np.diagonal(nodes, axis1=-2, axis2=-1)
    ends = diag[:, [0, -1]]
    ends_r = np.sqrt(np.clip(ends, 0.0, None))
    x0 = np.log(diag[:, 1:-1]).ravel()

    def assemble(x):
        r_int = np.exp(0.5 * x.reshape(bsz, k - 1, n))
        return np.concatenate([ends_r[:, :1], r_int, ends_r[:, 1:]], axis=1)

    def energy_of(x):
        r = assemble(x)
        f, grad_r = _diag_terms_and_grad(r * r, r, rule)
        total = float(np.dot(weights, k * f.sum(axis=1)))
        g = grad_r[:, 1:-1] * (k * weights)[:, None, None] * 0.5 * r[:, 1:-1]
        return total, g.ravel()

    x, nit, converged = _lbfgs(energy_of, x0, max_iter, rtol)
    r = assemble(x)
    d_a = r * r
    d_a[:, 0] = ends[:, 0]
    d_a[:, -1] = ends[:, 1]
    a = np.zeros(nodes.shape)
    idx = np.arange(n)
    a[..., idx, idx] = d_a
    rm = np.zeros(nodes.shape)
    rm[..., idx, idx] = np.sqrt(d_a)
    f, _ = segment_terms(a, rm, rule)
    return OptimizeResult(a, f, converged, nit)


def refine(nodes: np.ndarray, k_new: int) -> np.ndarray:
    """Resample a (B, K+1, n, n) path to ``k_new`` segments.

    New nodes interpolate linearly in log coordinates between positive
    definite neighbours and linearly in matrix square roots next to a
    singular endpoint; both keep interior nodes positive definite.
    """
    bsz, kp1, n, _ = nodes.shape
    k = kp1 - 1
    t = np.arange(k_new + 1) / k_new * k
    i = np.minimum(np.floor(t).astype(int), k - 1)
    u = (t - i)[None, :, None, None]
    w, v = la.eigh(nodes)
    pd = np.all(w > 0, axis=-1)
    logs = la.from_eig(np.log(np.where(pd[..., None], w, 1.0)), v)
    roots = la.from_eig(np.sqrt(np.clip(w, 0.0, None)), v)
    via_log = la.expm((1.0 - u) * logs[:, i] + u * logs[:, i + 1])
    rt = (1.0 - u) * roots[:, i] + u * roots[:, i + 1]
    via_root = rt @ rt
    both = (pd[:, i] & pd[:, i + 1])[..., None, None]
    out = np.where(both, via_log, via_root)
    out[:, 0] = nodes[:, 0]
    out[:, -1] = nodes[:, -1]
    return out
