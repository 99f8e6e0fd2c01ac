"""Convergence diagnostics for sequences of semimetric fields.

Asymptotic statements are turned into threshold and trend tests over the
last few terms of a finite sequence.  A gap series "vanishes" when its last
value is below the tolerance, or when it decreases over the tail at a
geometric rate.  It is "stuck" when it does not decrease and its last value
and at least one other tail value are above the tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distances import theta_Y_many
from .fiber import ThetaOptions
from .field import SemimetricField, _same_domain, difference_norm, function_norm, radon_nikodym, volume

EPS_GRID = (1e-3, 1e-2, 1e-1, 1.0)
TAIL = 4
MAX_CONTRACTION = 0.75

CONVERGED = "Converged"
NOT_CONVERGED = "NotConverged"
INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class MetricSequence:
    terms: tuple[SemimetricField, ...]
    limit_candidate: SemimetricField | None = None

    def __post_init__(self):
        terms = tuple(self.terms)
        if len(terms) < 2:
            raise ValueError("a sequence needs at least two terms")
        fields = terms + ((self.limit_candidate,) if self.limit_candidate is not None else ())
        _same_domain(*fields)
        object.__setattr__(self, "terms", terms)

    @property
    def domain(self):
        return self.terms[0].domain

    def __len__(self):
        return len(self.terms)


def in_measure_gap(f_k: SemimetricField, f0: SemimetricField, eps: float,
                   measure: SemimetricField | None = None) -> float:
    """Measure of the cells where |f0 - f_k|_g >= eps.

    The measure is mu_g by default, or mu of the field ``measure``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = _same_domain(f_k, f0)
    weights = d.cell_measure if measure is None else radon_nikodym(measure) * d.cell_measure
    return float(np.sum(np.where(difference_norm(f0, f_k) >= eps, weights, 0.0)))


def density_sign_parts(f_k: SemimetricField, f0: SemimetricField) -> tuple[float, float]:
    """(P, N): integrals of the positive and negative parts of rn0 - rn_k."""
    d = _same_domain(f_k, f0)
    diff = radon_nikodym(f0) - radon_nikodym(f_k)
    pos = float(np.sum(np.clip(diff, 0.0, None) * d.cell_measure))
    neg = float(np.sum(np.clip(-diff, 0.0, None) * d.cell_measure))
    return pos, neg


def uniform_measure_gap(f_k: SemimetricField, f0: SemimetricField) -> float:
    """sup_E |mu_0(E) - mu_k(E)|, attained on one of the two sign sets."""
    return max(density_sign_parts(f_k, f0))


def l1_density_gap(f_k: SemimetricField, f0: SemimetricField) -> float:
    """L1 distance of the densities, summed as P + N.

    Rounding is monotone, so max(P, N) <= P + N <= 2 max(P, N) also holds in
    floating point.
    """
    pos, neg = density_sign_parts(f_k, f0)
    return pos + neg


@dataclass(frozen=True)
class AbsContinuityTable:
    deltas: np.ndarray
    worst: np.ndarray  # (len(deltas), members)

    def worst_case(self) -> np.ndarray:
        return self.worst.max(axis=1)

    def passes(self, delta: float, eps: float) -> bool:
        i = int(np.nonzero(np.isclose(self.deltas, delta))[0][0])
        return bool(np.all(self.worst[i] < eps))


def worst_integral(density: np.ndarray, cell_measure: np.ndarray, delta: float) -> float:
    """Largest integral of ``density`` over a set of measure <= delta.

    Cells are taken in order of decreasing density; the last one
    fractionally, which is the exact supremum over sets that may split cells.
    """
    rho = np.asarray(density, dtype=float).ravel()
    mu = np.broadcast_to(cell_measure, np.shape(density)).ravel()
    order = np.argsort(-rho, kind="stable")
    rho, mu = rho[order], mu[order]
    cum = np.cumsum(mu)
    full = cum <= delta
    total = float(np.sum(rho[full] * mu[full]))
    j = int(np.count_nonzero(full))
    if j < rho.size:
        rest = delta - (cum[j - 1] if j > 0 else 0.0)
        total += float(rho[j]) * max(rest, 0.0)
    return total


def uniform_abs_continuity(family, delta_grid, cell_measure) -> AbsContinuityTable:
    """Worst-case integrals of each member over sets of measure at most delta."""
    family = list(family)
    if not family:
        raise ValueError("family must be nonempty")
    deltas = np.asarray(delta_grid, dtype=float)
    worst = np.array([[worst_integral(f, cell_measure, dl) for f in family] for dl in deltas])
    return AbsContinuityTable(deltas, worst)


# -- Theta-based reports -----------------------------------------------------


@dataclass
class CauchyReport:
    consecutive: np.ndarray  # Theta(g_k, g_{k+1})
    partial_sums: np.ndarray
    geometric_pairs: list[tuple[int, int, float]]  # (k, 2k + 1, Theta) with 0-based k


def theta_cauchy_report(s: MetricSequence, opts: ThetaOptions | None = None) -> CauchyReport:
    terms = s.terms
    pairs = [(terms[i], terms[i + 1]) for i in range(len(terms) - 1)]
    geo_idx = [(i, 2 * i + 1) for i in range(len(terms)) if 2 * i + 1 < len(terms)]
    pairs += [(terms[i], terms[j]) for i, j in geo_idx]
    values = theta_Y_many(pairs, opts)
    consecutive = np.array(values[: len(terms) - 1])
    geo = [(i, j, v) for (i, j), v in zip(geo_idx, values[len(terms) - 1:])]
    return CauchyReport(consecutive, np.cumsum(consecutive), geo)


def series_trend(values, tol: float, tail: int = TAIL, max_contraction: float = MAX_CONTRACTION) -> str:
    """Classify a nonnegative gap series: "vanishing", "stuck" or "unclear"."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return "unclear"
    if v[-1] < tol:
        return "vanishing"
    t = v[-min(tail, v.size):]
    decreasing = t.size >= 2 and bool(np.all(np.diff(t) < 0))
    if decreasing and t[0] > 0:
        rate = (t[-1] / t[0]) ** (1.0 / (t.size - 1))
        if rate <= max_contraction:
            return "vanishing"
    # an oscillating series that keeps returning above tol is stuck as well
    if not decreasing and np.count_nonzero(t >= tol) >= 2:
        return "stuck"
    return "unclear"


@dataclass
class ConvergenceReport:
    eps_grid: tuple[float, ...]
    in_measure_gaps: np.ndarray  # (terms, eps)
    l1_density_gaps: np.ndarray
    uniform_measure_gaps: np.ndarray
    theta_gaps: np.ndarray | None
    verdict: str
    thresholds: dict = field(default_factory=dict)
    trends: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for k in range(self.in_measure_gaps.shape[0]):
            row = {"term": k}
            for j, eps in enumerate(self.eps_grid):
                row[f"meas_gap_eps={eps:g}"] = float(self.in_measure_gaps[k, j])
            row["uniform_measure_gap"] = float(self.uniform_measure_gaps[k])
            row["l1_density_gap"] = float(self.l1_density_gaps[k])
            if self.theta_gaps is not None:
                row["theta_gap"] = float(self.theta_gaps[k])
            out.append(row)
        return out


def classify_d_convergence(s: MetricSequence, eps_grid=EPS_GRID, tol_meas: float | None = None,
                           tol_vol: float | None = None, tail: int = TAIL, with_theta: bool = True,
                           theta_opts: ThetaOptions | None = None) -> ConvergenceReport:
    """Diagnose d-convergence of ``s`` to its limit candidate.

    A limit that is a metric (no deflated cells) is tested through
    convergence in measure plus uniform convergence of the volume measures.
    A limit with deflated cells falls back to the Theta-gap trend alone.
    """
    if s.limit_candidate is None:
        raise ValueError("a limit candidate is required")
    g0 = s.limit_candidate
    vol_ref = s.domain.total_measure
    tol_meas = 1e-2 * vol_ref if tol_meas is None else tol_meas
    tol_vol = 1e-2 * vol_ref if tol_vol is None else tol_vol
    eps_grid = tuple(float(e) for e in eps_grid)

    meas = np.array([[in_measure_gap(f, g0, e) for e in eps_grid] for f in s.terms])
    l1 = np.array([l1_density_gap(f, g0) for f in s.terms])
    unif = np.array([uniform_measure_gap(f, g0) for f in s.terms])
    theta = np.array(theta_Y_many([(f, g0) for f in s.terms], theta_opts)) if with_theta else None

    thresholds = {"tol_meas": tol_meas, "tol_vol": tol_vol, "tail": tail, "max_contraction": MAX_CONTRACTION}
    trends = {f"in_measure eps={e:g}": series_trend(meas[:, j], tol_meas, tail) for j, e in enumerate(eps_grid)}
    trends["uniform_measure"] = series_trend(unif, tol_vol, tail)
    notes = []
    if np.any(g0.deflated_mask):
        if theta is None:
            raise ValueError("a deflated limit candidate needs the Theta gaps")
        notes.append("limit candidate has deflated cells; verdict from the Theta-gap trend only")
        tol_theta = 1e-2 * vol_ref
        thresholds["tol_theta"] = tol_theta
        trends = {"theta": series_trend(theta, tol_theta, tail)}
    values = list(trends.values())
    if all(v == "vanishing" for v in values):
        verdict = CONVERGED
    elif any(v == "stuck" for v in values):
        verdict = NOT_CONVERGED
    else:
        verdict = INCONCLUSIVE
    return ConvergenceReport(eps_grid, meas, l1, unif, theta, verdict, thresholds, trends, notes)


@dataclass
class OmegaReport:
    cauchy: bool
    deflated_agree: bool
    pointwise: bool
    summable: bool
    deflation_mask: np.ndarray
    limit_deflated: np.ndarray
    tail_sup_norms: np.ndarray
    consecutive_theta: np.ndarray
    notes: list[str] = field(default_factory=list)

    @property
    def all_pass(self) -> bool:
        return self.cauchy and self.deflated_agree and self.pointwise and self.summable


def deflation_mask(s: MetricSequence, ratio: float = 0.05, tail: int = TAIL) -> np.ndarray:
    """Cells where det G_k appears to tend to 0.

    A cell qualifies when its volume density decreases strictly over the tail
    and ends below ``ratio`` times its largest value along the sequence.
    Cells that are deflated in every tail term also qualify.
    """
    rn = np.stack([radon_nikodym(f) for f in s.terms])
    t = rn[-min(tail, len(rn)):]
    decreasing = np.all(np.diff(t, axis=0) < 0, axis=0)
    small = t[-1] <= ratio * rn.max(axis=0)
    dead = np.all(t == 0, axis=0)
    return (decreasing & small) | dead


def omega_report(s: MetricSequence, tol: float = 1e-2, tail: int = TAIL,
                 theta_opts: ThetaOptions | None = None) -> OmegaReport:
    """Cellwise check of the four omega-convergence conditions.

    The Cauchy and summability conditions use the Theta distance in place of
    d: consecutive gaps must vanish along the tail, and their decay must be
    faster than 1/k (log-log slope below -1) as a finite proxy for
    summability.
    """
    if s.limit_candidate is None:
        raise ValueError("a limit candidate is required")
    g0 = s.limit_candidate
    cr = theta_cauchy_report(s, theta_opts)
    gaps = cr.consecutive
    tol_theta = tol * s.domain.total_measure
    cauchy = series_trend(gaps, tol_theta, tail) == "vanishing"
    if np.all(gaps == 0):
        summable = True
    else:
        pos = gaps > 0
        idx = np.arange(1, gaps.size + 1)[pos]
        if idx.size >= 2:
            slope = np.polyfit(np.log(idx), np.log(gaps[pos]), 1)[0]
            summable = bool(slope < -1.0) or bool(gaps[-1] == 0)
        else:
            summable = bool(gaps[-1] == 0)
        cauchy = cauchy or (summable and bool(np.all(np.diff(gaps[-min(tail, gaps.size):]) <= 0)))

    dmask = deflation_mask(s, tail=tail)
    limit_x = g0.deflated_mask
    agree = bool(np.array_equal(dmask, limit_x))

    off = ~dmask
    sup = np.array([float(difference_norm(f, g0)[off].max()) if np.any(off) else 0.0 for f in s.terms])
    pointwise = series_trend(sup, tol, tail) == "vanishing"
    notes = ["the Cauchy and summability checks use Theta_M gaps as a proxy for d"]
    return OmegaReport(cauchy, agree, pointwise, summable, dmask, limit_x, sup, gaps, notes)


def function_norm_gap(f_k: SemimetricField, f0: SemimetricField, lam) -> float:
    """| ||lam||_{f_k} - ||lam||_{f0} | for a bounded scalar function lam."""
    return abs(function_norm(f_k, lam) - function_norm(f0, lam))


def volume_gap(f_k: SemimetricField, f0: SemimetricField) -> float:
    return abs(volume(f_k) - volume(f0))

