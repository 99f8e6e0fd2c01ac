"""Geometry of a single fiber: the cone of positive-definite symmetric tensors.

All tensors are expressed in a g-orthonormal frame, so the reference metric
is the identity and ``A = a``.  The fiber carries the Riemannian metric

    <b, c>^0_a = tr(a^-1 b a^-1 c) * det(a),

whose distance ``theta`` is estimated by optimizing discrete paths.  The
completion of the fiber adds one point, the class of all singular
positive semi-definite tensors (:data:`BOUNDARY`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import _linalg as la
from . import _paths
from .errors import DegenerateBase, InvalidPath

EPS_PD = 1e-12
SUPPORTED_DIMS = (2, 3)

_FIBER_RULE = _paths.Rule(midpoint="arithmetic", det_power=1.0)


def _check_dim(n: int) -> None:
    if n not in SUPPORTED_DIMS:
        raise ValueError(f"fiber dimension must be 2 or 3, got {n}")


@dataclass(frozen=True)
class SymTensor:
    """Symmetric n x n tensor stored by its upper triangle."""

    n: int
    entries: tuple[float, ...]

    @classmethod
    def from_matrix(cls, m) -> "SymTensor":
        m = np.asarray(m, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
        _check_dim(m.shape[0])
        if not np.allclose(m, m.T, rtol=1e-12, atol=1e-14):
            raise ValueError("matrix is not symmetric")
        return cls(m.shape[0], tuple(float(x) for x in la.pack(m)))

    @property
    def matrix(self) -> np.ndarray:
        return la.unpack(np.array(self.entries), self.n)


@dataclass(frozen=True)
class SpdTensor(SymTensor):
    """Symmetric positive-definite tensor (a point of the open fiber)."""

    eps_pd: float = field(default=EPS_PD, compare=False)

    def __post_init__(self):
        w = np.linalg.eigvalsh(self.matrix)
        if w[0] <= self.eps_pd:
            raise DegenerateBase(f"tensor is not positive definite (min eigenvalue {w[0]:.3g})")

    @classmethod
    def from_matrix(cls, m, eps_pd: float = EPS_PD) -> "SpdTensor":
        sym = SymTensor.from_matrix(m)
        return cls(sym.n, sym.entries, eps_pd)

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))


class Boundary:
    """The single boundary class of the completed fiber."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "BOUNDARY"


BOUNDARY = Boundary()

CompletionPoint = Union[SpdTensor, Boundary]


def as_matrix(x) -> np.ndarray:
    if isinstance(x, SymTensor):
        return x.matrix
    return np.asarray(x, dtype=float)


def is_boundary(x, eps_pd: float = EPS_PD) -> bool:
    """True for :data:`BOUNDARY` and for any tensor with min eigenvalue below ``eps_pd``."""
    if isinstance(x, Boundary):
        return True
    w = np.linalg.eigvalsh(as_matrix(x))
    if w[0] < -1e-9 * max(1.0, abs(w[-1])):
        raise ValueError("tensor is not positive semi-definite")
    return bool(w[0] < eps_pd)


def _require_pd(a: np.ndarray, eps_pd: float = EPS_PD) -> None:
    w = np.linalg.eigvalsh(a)
    if w[0] <= eps_pd:
        raise DegenerateBase(f"base tensor is singular (min eigenvalue {w[0]:.3g})")


def trace_product(a, b, c) -> float:
    """Scalar product ``tr(a^-1 b a^-1 c)`` on symmetric tensors at base ``a``."""
    a, b, c = as_matrix(a), as_matrix(b), as_matrix(c)
    if not (a.shape == b.shape == c.shape):
        raise ValueError("dimension mismatch")
    _require_pd(a)
    ainv = np.linalg.inv(a)
    return float(np.trace(ainv @ b @ ainv @ c))


def fiber_norm0(a, b) -> float:
    """Norm of ``b`` in the fiber metric at ``a``: sqrt(tr_a(b^2) det a)."""
    a, b = as_matrix(a), as_matrix(b)
    _require_pd(a)
    q = trace_product(a, b, b)
    return math.sqrt(max(q, 0.0) * np.linalg.det(a))


def dist_to_boundary(a) -> float:
    """Fiber distance from ``a`` to the boundary class, (2/sqrt(n)) sqrt(det a).

    Singular ``a`` (the boundary itself) gives 0.
    """
    if isinstance(a, Boundary):
        return 0.0
    a = as_matrix(a)
    n = a.shape[-1]
    det = max(float(np.linalg.det(a)), 0.0)
    return 2.0 / math.sqrt(n) * math.sqrt(det)


@dataclass(frozen=True)
class FiberPath:
    """t-uniform discrete path ``nodes[0], ..., nodes[K]`` in the fiber.

    The first and last node may be singular (an approach to the boundary);
    interior nodes must be positive definite.
    """

    nodes: np.ndarray
    eps_pd: float = EPS_PD

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 3 or nodes.shape[0] < 2 or nodes.shape[1] != nodes.shape[2]:
            raise InvalidPath("a fiber path needs at least two n x n nodes")
        if not np.allclose(nodes, np.swapaxes(nodes, 1, 2), rtol=1e-12, atol=1e-14):
            raise InvalidPath("path nodes must be symmetric")
        w = np.linalg.eigvalsh(nodes)
        if np.any(w[1:-1, 0] <= self.eps_pd):
            raise InvalidPath("interior path node is not positive definite")
        if np.any(w[[0, -1], 0] < -1e-9 * np.maximum(1.0, np.abs(w[[0, -1], -1]))):
            raise InvalidPath("path endpoint is not positive semi-definite")
        if w[0, 0] < self.eps_pd and w[-1, 0] < self.eps_pd and len(nodes) == 2:
            raise InvalidPath("a single segment between two singular endpoints")
        object.__setattr__(self, "nodes", nodes)

    @property
    def k(self) -> int:
        return self.nodes.shape[0] - 1

    def reversed(self) -> "FiberPath":
        return FiberPath(self.nodes[::-1].copy(), self.eps_pd)


def fiber_path_length(p: FiberPath) -> float:
    """Discrete length: sum of segment norms at entrywise midpoints."""
    f, bad = _paths.segment_terms(p.nodes[None], None, _FIBER_RULE)
    if np.any(bad):
        raise InvalidPath("segment midpoint left the open cone")
    return math.fsum(np.sqrt(np.clip(f[0], 0.0, None)))


# -- distance estimation ----------------------------------------------------


@dataclass(frozen=True)
class ThetaOptions:
    """Knobs for the fiber distance estimator.

    ``k_schedule`` lists the segment counts of the warm-started refinement;
    ``round_digits`` is the number of significant digits kept in the
    canonical cache key (0 disables rounding).  A problem whose last level
    exhausts ``max_iter`` still counts as converged when a short polishing
    run changes its length by less than ``rtol_length`` (relative), which
    sits below the quadrature error of the finest level.
    """

    k_schedule: tuple[int, ...] = (16, 64, 256)
    max_iter: int = 500
    rtol: float = 1e-8
    eps_pd: float = EPS_PD
    quad_tol: float = 1e-9
    tri_tol: float = 0.02
    round_digits: int = 12
    batch_size: int = 256
    rtol_length: float = 1e-5

    def cache_key(self) -> tuple:
        return (self.k_schedule, self.max_iter, self.rtol, self.round_digits)


@dataclass(frozen=True)
class ThetaEstimate:
    value: float
    converged: bool
    source: str  # "equal", "boundary", "interior" or "detour"

    def __float__(self):
        return self.value


_CACHE: dict[tuple, tuple[float, bool, str]] = {}


def clear_theta_cache() -> None:
    _CACHE.clear()


def _round_sig(x: np.ndarray, digits: int) -> np.ndarray:
    if digits <= 0:
        return x
    e = np.floor(np.log10(np.abs(x)))
    q = 10.0 ** (digits - 1 - e)
    return np.round(x * q) / q


def _seed_paths(d0: np.ndarray, d1: np.ndarray, k: int) -> list[np.ndarray]:
    """Diagonal seed paths between diagonal endpoints (U, n) -> list of (U, k+1, n).

    Seeds: entrywise-linear, linear in log coordinates, and a detour that
    rescales to a common determinant, moves at constant determinant, and
    rescales to the target.
    """
    n = d0.shape[-1]
    t = np.linspace(0.0, 1.0, k + 1)[None, :, None]
    linear = (1.0 - t) * d0[:, None] + t * d1[:, None]
    l0, l1 = np.log(d0), np.log(d1)
    loglin = np.exp((1.0 - t) * l0[:, None] + t * l1[:, None])

    ld0 = l0.sum(-1, keepdims=True) / n
    ld1 = l1.sum(-1, keepdims=True) / n
    common = np.minimum(ld0, ld1)
    s0 = l0 - ld0 + common  # log of a0 rescaled to the common determinant
    s1 = l1 - ld1 + common
    k1 = max(1, k // 3)
    k2 = max(1, k - 2 * k1)
    legs = [
        np.linspace(0, 1, k1 + 1)[None, :, None] * (s0 - l0)[:, None] + l0[:, None],
        (1 - np.linspace(0, 1, k2 + 1)[None, :, None]) * s0[:, None]
        + np.linspace(0, 1, k2 + 1)[None, :, None] * s1[:, None],
        np.linspace(0, 1, k - k1 - k2 + 1)[None, :, None] * (l1 - s1)[:, None] + s1[:, None],
    ]
    detour = np.exp(np.concatenate([legs[0], legs[1][:, 1:], legs[2][:, 1:]], axis=1))
    return [linear, loglin, detour]


def _diag_stack(d: np.ndarray) -> np.ndarray:
    n = d.shape[-1]
    out = np.zeros(d.shape + (n,))
    idx = np.arange(n)
    out[..., idx, idx] = d
    return out


def _lengths(terms: np.ndarray) -> np.ndarray:
    # ill-conditioned midpoints can round tr((m^-1 d)^2) slightly below zero
    return np.sqrt(np.clip(terms, 0.0, None)).sum(axis=1)


def _optimize_from_seeds(seeds: list[np.ndarray], opts: ThetaOptions):
    """Multi-start path optimization for a batch of problems.

    Every seed is optimized at the coarsest level; the shortest result per
    problem is carried through the remaining refinement levels.  Returns
    ``(lengths, nodes, converged, iterations)`` with a per-problem flag
    judged after the last level.
    """
    stacked = np.concatenate(seeds, axis=0)
    res = _paths.optimize_paths(stacked, _FIBER_RULE, max_iter=opts.max_iter, rtol=opts.rtol)
    u = seeds[0].shape[0]
    lengths = _lengths(res.terms).reshape(len(seeds), u)
    best = np.argmin(lengths, axis=0)
    nodes = res.nodes.reshape((len(seeds), u) + res.nodes.shape[1:])[best, np.arange(u)]
    converged = np.full(u, res.converged)
    iterations = res.iterations
    length = lengths[best, np.arange(u)]
    for k in opts.k_schedule[1:]:
        if k == nodes.shape[1] - 1:
            continue
        nodes = _paths.refine(nodes, k)
        res = _paths.optimize_paths(nodes, _FIBER_RULE, max_iter=opts.max_iter, rtol=opts.rtol)
        nodes = res.nodes
        length = _lengths(res.terms)
        converged = np.full(u, res.converged)
        iterations += res.iterations
    polish_iter = opts.max_iter // 5
    # too short a polish cannot tell a settled length from a stalled one
    if not converged.all() and polish_iter >= 10:
        # the batch shares one iteration budget, so a single slow problem
        # (typically a path collapsing onto the cone apex) exhausts it for
        # all; a short polishing run tells settled lengths apart
        res = _paths.optimize_paths(nodes, _FIBER_RULE, max_iter=polish_iter, rtol=opts.rtol)
        polished = _lengths(res.terms)
        settled = np.abs(length - polished) <= opts.rtol_length * np.maximum(polished, 1e-300)
        converged = converged | settled | res.converged
        better = polished < length
        nodes = np.where(better[:, None, None, None], res.nodes, nodes)
        length = np.minimum(length, polished)
        iterations += res.iterations
    return length, nodes, converged, iterations


def _solve_canonical(lams: np.ndarray, opts: ThetaOptions) -> list[tuple[float, bool, str]]:
    """Distances for canonical pairs (c I, c diag(lam)) with c = prod(lam)^(-1/2n).

    When the through-boundary detour is shorter than the best interior path,
    the detour is reported.  Interior paths then collapse onto the apex of
    the cone and never settle, so their convergence flag is not consulted.
    """
    u, n = lams.shape
    c = np.prod(lams, axis=1) ** (-1.0 / (2 * n))
    d0 = np.repeat(c[:, None], n, axis=1)
    d1 = c[:, None] * lams
    detour = 2.0 / math.sqrt(n) * (np.sqrt(np.prod(d0, 1)) + np.sqrt(np.prod(d1, 1)))
    out = []
    for start in range(0, u, opts.batch_size):
        sl = slice(start, start + opts.batch_size)
        seeds = [_diag_stack(s) for s in _seed_paths(d0[sl], d1[sl], opts.k_schedule[0])]
        length, _, converged, _ = _optimize_from_seeds(seeds, opts)
        for j, ell in enumerate(length):
            dtr = detour[sl][j]
            if ell <= dtr:
                out.append((float(ell), bool(converged[j]), "interior"))
            else:
                out.append((float(dtr), True, "detour"))
    return out


def _order_pair(a0: np.ndarray, a1: np.ndarray) -> bool:
    """True when ``a1`` should be the base of the canonical form (swap)."""
    p0, p1 = la.pack(a0), la.pack(a1)
    diff = np.nonzero(p0 != p1)[0]
    return bool(diff.size and p1[diff[0]] < p0[diff[0]])


def theta_batch(a0s, a1s, opts: ThetaOptions | None = None):
    """Fiber distances for stacks of tensor pairs of shape (N, n, n).

    Singular tensors (min eigenvalue below ``opts.eps_pd``) stand for the
    boundary class.  Returns ``(values, converged, sources)`` arrays.

    Interior pairs are reduced to a canonical pair ``(c I, c diag(lam))``
    using the exact symmetries of the fiber metric: congruence
    ``a -> P a P^T`` scales lengths by ``|det P|`` and ``a -> s a`` scales them by
    ``s^(n/2)``.  Canonical results are cached per options.
    """
    opts = opts or ThetaOptions()
    a0s = np.asarray(a0s, dtype=float)
    a1s = np.asarray(a1s, dtype=float)
    if a0s.shape != a1s.shape:
        raise ValueError("dimension mismatch")
    nn = a0s.shape[0]
    n = a0s.shape[-1]
    _check_dim(n)
    values = np.zeros(nn)
    converged = np.ones(nn, dtype=bool)
    sources = np.empty(nn, dtype=object)
    if nn == 0:
        return values, converged, sources

    w0 = np.linalg.eigvalsh(a0s)
    w1 = np.linalg.eigvalsh(a1s)
    for w in (w0, w1):
        if np.any(w[:, 0] < -1e-9 * np.maximum(1.0, np.abs(w[:, -1]))):
            raise ValueError("tensor is not positive semi-definite")
    b0 = w0[:, 0] < opts.eps_pd
    b1 = w1[:, 0] < opts.eps_pd
    equal = np.all(a0s == a1s, axis=(1, 2))
    det0 = np.prod(np.clip(w0, 0, None), axis=1)
    det1 = np.prod(np.clip(w1, 0, None), axis=1)

    trivial = equal | (b0 & b1)
    sources[trivial] = "equal"
    one = (b0 ^ b1) & ~equal
    values[one] = 2.0 / math.sqrt(n) * np.sqrt(np.where(b0, det1, det0)[one])
    sources[one] = "boundary"

    todo = np.nonzero(~trivial & ~one)[0]
    if todo.size == 0:
        return values, converged, sources

    keys = []
    prefactors = np.empty(todo.size)
    lam_rows = []
    for j, idx in enumerate(todo):
        a0, a1 = a0s[idx], a1s[idx]
        if _order_pair(a0, a1):
            base, other, dbase = a1, a0, det1[idx]
        else:
            base, other, dbase = a0, a1, det0[idx]
        chol = np.linalg.cholesky(base)
        li = np.linalg.inv(chol)
        lam = np.linalg.eigvalsh(la.sym(li @ other @ li.T))
        lam = _round_sig(np.clip(lam, np.finfo(float).tiny, None), opts.round_digits)
        lam_rows.append(lam)
        keys.append((n,) + tuple(lam.tolist()) + opts.cache_key())
        prefactors[j] = math.sqrt(dbase) * float(np.prod(lam)) ** 0.25

    missing = {}
    for key, lam in zip(keys, lam_rows):
        if key not in _CACHE and key not in missing:
            missing[key] = lam
    if missing:
        solved = _solve_canonical(np.array(list(missing.values())), opts)
        for key, res in zip(missing, solved):
            _CACHE[key] = res

    # the detour from the original determinants avoids roundoff of the
    # reduction for nearly singular tensors
    detour = 2.0 / math.sqrt(n) * (np.sqrt(det0) + np.sqrt(det1))
    for j, idx in enumerate(todo):
        val, conv, src = _CACHE[keys[j]]
        val = prefactors[j] * val
        if src == "detour" or val > detour[idx]:
            val, conv, src = detour[idx], True, "detour"
        values[idx] = val
        converged[idx] = conv
        sources[idx] = src
    return values, converged, sources


def _point_matrix(p, n: int | None) -> np.ndarray | None:
    if isinstance(p, Boundary):
        return None if n is None else np.zeros((n, n))
    return as_matrix(p)


def theta_estimate(p0: CompletionPoint, p1: CompletionPoint, opts: ThetaOptions | None = None) -> ThetaEstimate:
    """Distance estimate between two points of the completed fiber, with diagnostics."""
    opts = opts or ThetaOptions()
    if isinstance(p0, Boundary) and isinstance(p1, Boundary):
        return ThetaEstimate(0.0, True, "equal")
    m0 = _point_matrix(p0, None)
    m1 = _point_matrix(p1, None)
    n = (m0 if m0 is not None else m1).shape[-1]
    if m0 is None:
        m0 = np.zeros((n, n))
    if m1 is None:
        m1 = np.zeros((n, n))
    if m0.shape != m1.shape:
        raise ValueError("dimension mismatch")
    values, conv, src = theta_batch(m0[None], m1[None], opts)
    return ThetaEstimate(float(values[0]), bool(conv[0]), str(src[0]))


def theta_distance(p0: CompletionPoint, p1: CompletionPoint, opts: ThetaOptions | None = None) -> float:
    return theta_estimate(p0, p1, opts).value


def optimize_fiber_paths(m0s, m1s, opts: ThetaOptions | None = None):
    """Optimize interior paths for stacks of endpoint pairs (N, n, n) jointly.

    No canonical reduction is applied.  Singular endpoints stand for the
    boundary class; a pair may have at most one.  Seeds are the linear path
    and either the log-linear path or, towards the boundary, the conformal
    ray.  Returns ``(nodes, lengths, converged)`` per pair.
    """
    opts = opts or ThetaOptions()
    m0s = np.asarray(m0s, dtype=float)
    m1s = np.asarray(m1s, dtype=float)
    if m0s.shape != m1s.shape or m0s.ndim != 3:
        raise ValueError("endpoint stacks must both have shape (N, n, n)")
    n = m0s.shape[-1]
    _check_dim(n)
    pd0 = np.linalg.eigvalsh(m0s)[:, 0] >= opts.eps_pd
    pd1 = np.linalg.eigvalsh(m1s)[:, 0] >= opts.eps_pd
    if np.any(~pd0 & ~pd1):
        raise InvalidPath("both endpoints are the boundary class")
    m0s = np.where(pd0[:, None, None], m0s, 0.0)
    m1s = np.where(pd1[:, None, None], m1s, 0.0)
    k = opts.k_schedule[0]
    t = np.linspace(0.0, 1.0, k + 1)[None, :, None, None]
    linear = (1.0 - t) * m0s[:, None] + t * m1s[:, None]
    second = np.empty_like(linear)
    both = pd0 & pd1
    if np.any(both):
        second[both] = la.expm((1.0 - t) * la.logm(m0s[both])[:, None] + t * la.logm(m1s[both])[:, None])
    # conformal ray towards the boundary
    fwd = pd0 & ~pd1
    if np.any(fwd):
        second[fwd] = (1.0 - t) ** (4.0 / n) * m0s[fwd][:, None]
    back = ~pd0 & pd1
    if np.any(back):
        second[back] = t ** (4.0 / n) * m1s[back][:, None]
    for seed in (linear, second):
        seed[:, 0] = m0s
        seed[:, -1] = m1s
    length, nodes, converged, _ = _optimize_from_seeds([linear, second], opts)
    return nodes, length, converged


def optimize_fiber_path(p0: CompletionPoint, p1: CompletionPoint, opts: ThetaOptions | None = None):
    """Optimize an interior path between two fiber points directly (no canonical reduction).

    One endpoint may be the boundary, represented by the zero tensor.
    Returns ``(FiberPath, length, converged)``.
    """
    opts = opts or ThetaOptions()
    m0, m1 = _point_matrix(p0, None), _point_matrix(p1, None)
    if m0 is None and m1 is None:
        raise InvalidPath("both endpoints are the boundary class")
    n = (m0 if m0 is not None else m1).shape[-1]
    m0 = np.zeros((n, n)) if m0 is None else m0
    m1 = np.zeros((n, n)) if m1 is None else m1
    nodes, length, converged = optimize_fiber_paths(m0[None], m1[None], opts)
    return FiberPath(nodes[0], opts.eps_pd), float(length[0]), bool(converged[0])
