"""Field-level distances: Theta_Y, the L2 path length, and bounds on d.

``d`` is the distance of the L2 metric, an infimum over paths that is never
computed exactly.  :func:`d_upper` reports the length of the best path found,
:func:`d_lower` the best certified lower bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _linalg as la
from . import _paths
from .errors import DomainError, InvalidPath
from .fiber import ThetaOptions, theta_batch
from .field import (
    GridDomain,
    SemimetricField,
    _same_domain,
    carrier,
    radon_nikodym,
    volume,
)

_L2_RULE = _paths.Rule(midpoint="root", det_power=0.5)


# -- Theta_Y ----------------------------------------------------------------


@dataclass(frozen=True)
class ThetaYResult:
    value: float
    per_cell: np.ndarray  # fiber distance per cell (zero outside Y)
    converged: bool


def _unique_pairs(a0: np.ndarray, a1: np.ndarray):
    """Deduplicate stacked cell pairs; returns (u0, u1, inverse)."""
    n = a0.shape[-1]
    key = np.concatenate([la.pack(a0), la.pack(a1)], axis=-1)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    m = la.packed_size(n)
    return la.unpack(uniq[:, :m], n), la.unpack(uniq[:, m:], n), inverse.ravel()


def _cell_theta(pairs: list[tuple[np.ndarray, np.ndarray]], opts: ThetaOptions):
    """Fiber distances for several stacks of frame-tensor pairs in one batch."""
    if not pairs:
        return [], True
    n = pairs[0][0].shape[-1]
    a0 = np.concatenate([p[0].reshape(-1, n, n) for p in pairs])
    a1 = np.concatenate([p[1].reshape(-1, n, n) for p in pairs])
    u0, u1, inv = _unique_pairs(a0, a1)
    vals, conv, _ = theta_batch(u0, u1, opts)
    flat = vals[inv]
    out = []
    start = 0
    for p in pairs:
        size = int(np.prod(p[0].shape[:-2]))
        out.append(flat[start:start + size].reshape(p[0].shape[:-2]))
        start += size
    return out, bool(np.all(conv))


def theta_Y_report(f0: SemimetricField, f1: SemimetricField, Y=None, opts: ThetaOptions | None = None) -> ThetaYResult:
    d = _same_domain(f0, f1)
    mask = d.check_mask(Y)
    opts = opts or ThetaOptions()
    (per_cell,), conv = _cell_theta([(f0.frame[mask], f1.frame[mask])], opts)
    full = np.zeros(d.dims)
    full[mask] = per_cell
    value = float(np.sum(full * d.cell_measure))
    return ThetaYResult(value, full, conv)


def theta_Y(f0: SemimetricField, f1: SemimetricField, Y=None, opts: ThetaOptions | None = None) -> float:
    """Integral over Y of the pointwise fiber distance (Y defaults to the whole domain)."""
    return theta_Y_report(f0, f1, Y, opts).value


def theta_Y_many(pairs, opts: ThetaOptions | None = None) -> list[float]:
    """Theta_M for many field pairs, solving all distinct cell problems in one batch."""
    opts = opts or ThetaOptions()
    pairs = list(pairs)
    for f0, f1 in pairs:
        _same_domain(f0, f1)
    per_cell, _ = _cell_theta([(f0.frame, f1.frame) for f0, f1 in pairs], opts)
    return [float(np.sum(pc * f0.domain.cell_measure)) for pc, (f0, _) in zip(per_cell, pairs)]


# -- paths and the L2 length ------------------------------------------------


@dataclass(frozen=True, eq=False)
class FieldPath:
    """t-uniform path of semimetric fields, stored as a (T+1, *dims, n, n) array."""

    domain: GridDomain
    tensors: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tensors, dtype=float)
        d = self.domain
        if t.ndim != d.dim + 3 or t.shape[1:] != d.dims + (d.n, d.n) or t.shape[0] < 2:
            raise InvalidPath(f"path tensors must have shape (T+1, {d.dims}, {d.n}, {d.n}) with T >= 1")
        t = la.sym(t)
        t.setflags(write=False)
        object.__setattr__(self, "tensors", t)

    @classmethod
    def from_fields(cls, nodes) -> "FieldPath":
        nodes = list(nodes)
        if len(nodes) < 2:
            raise InvalidPath("a path needs at least two nodes")
        d = _same_domain(*nodes)
        return cls(d, np.stack([f.cells for f in nodes]))

    @property
    def t_count(self) -> int:
        return self.tensors.shape[0] - 1

    def node(self, i: int) -> SemimetricField:
        return SemimetricField(self.domain, self.tensors[i])

    def reversed(self) -> "FieldPath":
        return FieldPath(self.domain, self.tensors[::-1].copy())


def _segment_energies(domain: GridDomain, tensors: np.ndarray) -> np.ndarray:
    """Squared L2 norms of the node differences, one per segment."""
    frame = domain.to_frame(tensors)
    n = domain.n
    k = frame.shape[0]
    flat = np.moveaxis(frame.reshape(k, -1, n, n), 1, 0)  # (cells, T+1, n, n)
    roots = la.sqrtm(flat)
    f, bad = _paths.segment_terms(flat, roots, _L2_RULE, eps=1e-300)
    if np.any(bad):
        raise InvalidPath("path is degenerate on a cell where it still moves")
    return np.sum(f * domain.cell_measure.reshape(-1, 1), axis=0)


def path_length_L2(p: FieldPath) -> float:
    """Discrete L2 length: sum over steps of sqrt(sum_cells tr_m(D^2) sqrt(det m) mu_g).

    The midpoint m of a step is the square of the mean of the node square
    roots.  On conformal paths of surfaces this rule is exact, and it is
    second order in general.
    """
    return math.fsum(np.sqrt(_segment_energies(p.domain, p.tensors)))


def conformal_geodesic(f0: SemimetricField, rho, t: float) -> SemimetricField:
    """(1 + n t rho / 4)^(4/n) f0, with the factor clamped at 0 (deflated cells)."""
    n = f0.domain.n
    rho = np.broadcast_to(np.asarray(rho, dtype=float), f0.domain.dims)
    base = np.clip(1.0 + n * t * rho / 4.0, 0.0, None)
    return f0.scaled(base ** (4.0 / n))


def psi_map(f: SemimetricField, zeta) -> SemimetricField:
    """(1 + n zeta / 4)^(4/n) f for zeta >= -4/n."""
    n = f.domain.n
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), f.domain.dims)
    if np.any(zeta < -4.0 / n):
        raise DomainError(f"zeta must be >= -4/n = {-4.0 / n}")
    base = np.clip(1.0 + n * zeta / 4.0, 0.0, None)
    return f.scaled(base ** (4.0 / n))


def lambda_from_ratio(rho, n: int) -> np.ndarray:
    """zeta with psi(zeta) = rho * f, i.e. (4/n)(rho^(n/4) - 1)."""
    return 4.0 / n * (np.asarray(rho, dtype=float) ** (n / 4.0) - 1.0)


def linear_path(f0: SemimetricField, f1: SemimetricField, t_count: int) -> FieldPath:
    d = _same_domain(f0, f1)
    t = np.linspace(0.0, 1.0, t_count + 1).reshape((-1,) + (1,) * (d.dim + 2))
    return FieldPath(d, (1.0 - t) * f0.cells + t * f1.cells)


def conformal_segment(f: SemimetricField, kappa, lam, t_count: int) -> FieldPath:
    """psi((1-t) kappa + t lam) sampled at t-uniform nodes."""
    nodes = [psi_map(f, (1.0 - t) * np.asarray(kappa, dtype=float) + t * np.asarray(lam, dtype=float))
             for t in np.linspace(0.0, 1.0, t_count + 1)]
    return FieldPath.from_fields(nodes)


# -- bounds on d ------------------------------------------------------------


@dataclass(frozen=True)
class DOptions:
    t_schedule: tuple[int, ...] = (8, 16, 32)
    max_iter: int = 500
    rtol: float = 1e-6
    batch_size: int = 256
    conformal_tol: float = 1e-12


@dataclass
class DBoundResult:
    upper: float
    lower: float
    witness_path: FieldPath
    iterations: int = 0
    converged: bool = True
    candidates: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return self.upper - self.lower


def _conformal_ratio(a0: np.ndarray, a1: np.ndarray, tol: float):
    """rho with a1 = rho a0 per problem, or nan when the pair is not conformal."""
    n = a0.shape[-1]
    tr0 = np.trace(a0, axis1=-2, axis2=-1)
    rho = np.trace(a1, axis1=-2, axis2=-1) / np.where(tr0 > 0, tr0, 1.0)
    resid = np.abs(a1 - rho[:, None, None] * a0).max(axis=(-2, -1))
    scale = np.maximum(np.abs(a0).max(axis=(-2, -1)), np.abs(a1).max(axis=(-2, -1)))
    ok = (tr0 > 0) & (resid <= tol * np.maximum(scale, 1e-300))
    return np.where(ok, rho, np.nan), n


def _group_seeds(a0: np.ndarray, a1: np.ndarray, t_count: int, opts: DOptions) -> dict[str, np.ndarray]:
    """Per-problem seed paths (U, T+1, n, n) for frame-tensor endpoint pairs."""
    t = np.linspace(0.0, 1.0, t_count + 1)[None, :, None, None]
    seeds = {"linear": (1.0 - t) * a0[:, None] + t * a1[:, None]}

    w0, _ = np.linalg.eigh(a0)
    w1, _ = np.linalg.eigh(a1)
    pd = (w0[:, 0] > 0) & (w1[:, 0] > 0)
    # log-linear where both ends are definite, root-linear otherwise
    r0, r1 = la.sqrtm(a0), la.sqrtm(a1)
    rt = (1.0 - t) * r0[:, None] + t * r1[:, None]
    loglin = rt @ rt
    if np.any(pd):
        l0 = la.logm(a0[pd])
        l1 = la.logm(a1[pd])
        loglin[pd] = la.expm((1.0 - t) * l0[:, None] + t * l1[:, None])
    seeds["log-linear"] = loglin

    n = a0.shape[-1]
    rho, _ = _conformal_ratio(a0, a1, opts.conformal_tol)
    rho_b, _ = _conformal_ratio(a1, a0, opts.conformal_tol)
    conf = loglin.copy()
    fwd = np.isfinite(rho)
    back = ~fwd & np.isfinite(rho_b)
    tt = t[0, :, 0, 0]
    if np.any(fwd):
        fac = (1.0 + (rho[fwd] ** (n / 4.0) - 1.0)[:, None] * tt[None]) ** (4.0 / n)
        conf[fwd] = fac[..., None, None] * a0[fwd][:, None]
    if np.any(back):
        fac = (1.0 + (rho_b[back] ** (n / 4.0) - 1.0)[:, None] * (1.0 - tt)[None]) ** (4.0 / n)
        conf[back] = fac[..., None, None] * a1[back][:, None]
    seeds["conformal"] = conf
    for s in seeds.values():
        s[:, 0] = a0
        s[:, -1] = a1
    return seeds


def _assemble(domain: GridDomain, group_paths: np.ndarray, inverse: np.ndarray, moving: np.ndarray,
              a0_frame: np.ndarray, t_count: int) -> np.ndarray:
    """Frame-tensor path (T+1, *dims, n, n) from per-group paths."""
    n = domain.n
    cells = int(np.prod(domain.dims))
    out = np.broadcast_to(a0_frame.reshape(1, cells, n, n), (t_count + 1, cells, n, n)).copy()
    idx = np.nonzero(moving)[0]
    out[:, idx] = np.moveaxis(group_paths[inverse[idx]], 0, 1)
    return out.reshape((t_count + 1,) + domain.dims + (n, n))


def _from_frame(domain: GridDomain, frame_path: np.ndarray) -> np.ndarray:
    if domain.gref is None:
        return frame_path
    chol = np.linalg.cholesky(domain.gref)
    return la.sym(chol @ frame_path @ np.swapaxes(chol, -1, -2))


def d_upper(f0: SemimetricField, f1: SemimetricField, opts: DOptions | None = None,
            with_lower: bool = True, theta_opts: ThetaOptions | None = None) -> DBoundResult:
    """Shortest L2 path found between two fields.

    Candidates are the entrywise-linear path, the cellwise log-linear path
    and the conformal path on cells where f1 is a multiple of f0.  Each is
    then refined by quasi-Newton descent of the path energy.  The energy
    decouples over cells, so cells sharing the same endpoint pair are
    optimized as one weighted problem.
    """
    opts = opts or DOptions()
    d = _same_domain(f0, f1)
    n = d.n
    a0 = f0.frame.reshape(-1, n, n)
    a1 = f1.frame.reshape(-1, n, n)
    moving = np.any(a0 != a1, axis=(-2, -1)) & ~(f0.deflated_mask.ravel() & f1.deflated_mask.ravel())
    cm = d.cell_measure.ravel()

    t0 = opts.t_schedule[0]
    inverse = np.zeros(a0.shape[0], dtype=int)
    candidates = {}
    if not np.any(moving):
        path = FieldPath(d, np.broadcast_to(f0.cells, (t0 + 1,) + f0.cells.shape).copy())
        lower = d_lower(f0, f1, theta_opts=theta_opts) if with_lower else 0.0
        return DBoundResult(0.0, lower, path, 0, True, {"constant": 0.0})

    u0, u1, inv_m = _unique_pairs(a0[moving], a1[moving])
    inverse[moving] = inv_m
    weights = np.bincount(inv_m, weights=cm[moving], minlength=u0.shape[0])

    seeds = _group_seeds(u0, u1, t0, opts)
    for name, s in seeds.items():
        fp = FieldPath(d, _from_frame(d, _assemble(d, s, inverse, moving, f0.frame, t0)))
        try:
            candidates[name] = path_length_L2(fp)
        except InvalidPath:
            candidates[name] = math.inf

    # optimize each seed at the coarsest level, keep the lowest-energy path per group
    best = None
    best_e = None
    iterations = 0
    converged = True
    for s in seeds.values():
        p, e, it, conv = _optimize_groups(s, weights, opts)
        iterations += it
        if best is None:
            best, best_e, converged = p, e, conv
        else:
            better = e < best_e
            best[better] = p[better]
            best_e = np.where(better, e, best_e)
            converged = converged and conv
    nodes = best
    for t_count in opts.t_schedule[1:]:
        nodes = _paths.refine(nodes, t_count)
        nodes, _, it, conv = _optimize_groups(nodes, weights, opts)
        iterations += it
        converged = conv
    t_final = nodes.shape[1] - 1
    witness = FieldPath(d, _from_frame(d, _assemble(d, nodes, inverse, moving, f0.frame, t_final)))
    candidates["optimized"] = path_length_L2(witness)

    name = min(candidates, key=lambda k: (candidates[k], k != "optimized"))
    if name != "optimized":
        witness = FieldPath(d, _from_frame(d, _assemble(d, seeds[name], inverse, moving, f0.frame, t0)))
    upper = candidates[name]
    lower = d_lower(f0, f1, theta_opts=theta_opts) if with_lower else 0.0
    return DBoundResult(upper, lower, witness, iterations, converged, candidates)


def _optimize_groups(nodes: np.ndarray, weights: np.ndarray, opts: DOptions):
    out = np.empty_like(nodes)
    energy = np.empty(nodes.shape[0])
    iterations = 0
    converged = True
    k = nodes.shape[1] - 1
    for start in range(0, nodes.shape[0], opts.batch_size):
        sl = slice(start, start + opts.batch_size)
        res = _paths.optimize_paths(nodes[sl], _L2_RULE, weights[sl], opts.max_iter, opts.rtol)
        out[sl] = res.nodes
        energy[sl] = k * res.terms.sum(axis=1)
        iterations += res.iterations
        converged = converged and res.converged
    return out, energy, iterations, converged


def volume_bound_sets(f0: SemimetricField, f1: SemimetricField) -> dict[str, np.ndarray]:
    """Sets Y used by the volume lower bound."""
    d = _same_domain(f0, f1)
    rn0, rn1 = radon_nikodym(f0), radon_nikodym(f1)
    x0, x1 = f0.deflated_mask, f1.deflated_mask
    return {
        "full": d.full_mask(),
        "carrier": carrier(f0, f1),
        "deflated 1 minus 0": x1 & ~x0,
        "deflated 0 minus 1": x0 & ~x1,
        "density up": rn1 > rn0,
        "density down": rn1 < rn0,
    }


def volume_lower_bound(f0: SemimetricField, f1: SemimetricField) -> float:
    """(4/sqrt(n)) max_Y |sqrt Vol(Y, f1) - sqrt Vol(Y, f0)|."""
    n = f0.domain.n
    best = 0.0
    for mask in volume_bound_sets(f0, f1).values():
        gap = abs(math.sqrt(volume(f1, mask)) - math.sqrt(volume(f0, mask)))
        best = max(best, 4.0 / math.sqrt(n) * gap)
    return best


def theta_lower_bound(theta_m: float, v0: float, v1: float, n: int) -> float:
    """Positive root of sqrt(n) d^2 + 2 sqrt(V) d = Theta with V = min(V0, V1)."""
    v = min(v0, v1)
    return (math.sqrt(v + math.sqrt(n) * theta_m) - math.sqrt(v)) / math.sqrt(n)


def d_lower(f0: SemimetricField, f1: SemimetricField, theta_m: float | None = None,
            theta_opts: ThetaOptions | None = None) -> float:
    """Best certified lower bound on d from volumes and from Theta_M."""
    d = _same_domain(f0, f1)
    if theta_m is None:
        theta_m = theta_Y(f0, f1, None, theta_opts)
    v0, v1 = volume(f0), volume(f1)
    return max(volume_lower_bound(f0, f1), theta_lower_bound(theta_m, v0, v1, d.n))


def d_bounds(f0: SemimetricField, f1: SemimetricField, opts: DOptions | None = None,
             theta_opts: ThetaOptions | None = None) -> DBoundResult:
    return d_upper(f0, f1, opts, with_lower=True, theta_opts=theta_opts)

