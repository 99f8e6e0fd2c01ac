"""Degenerating metric sequences on the flat 2-torus and geometric probes.

The chart is [-1, 1]^2 with axis 0 = x and axis 1 = y.  Two sequences are
provided.  ``cusp_metric`` pinches a vertical strip |x| <= 1/k so that
crossing it horizontally costs about 2k.  ``inj_metric`` shrinks the
horizontal direction on a thin rectangle, making the loop y = 0 short.
Both have det = 1, so they preserve the volume form of the flat metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra

from .errors import ResolutionError
from .field import GridDomain, MetricField, make_grid


def smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def cusp_profile(t, k: float) -> np.ndarray:
    """f_s(t) = 1 + (s^-4 - 1) w((2s - |t|) / s) with s = 1/k."""
    s = 1.0 / k
    t = np.abs(np.asarray(t, dtype=float))
    return 1.0 + (s ** -4 - 1.0) * smoothstep((2.0 * s - t) / s)


def _diag_field(domain: GridDomain, g11: np.ndarray, g22: np.ndarray) -> MetricField:
    cells = np.zeros(domain.dims + (2, 2))
    cells[..., 0, 0] = g11
    cells[..., 1, 1] = g22
    return MetricField(domain, cells)


def _check_surface(domain: GridDomain) -> None:
    if domain.dim != 2:
        raise ValueError("torus examples live on two-dimensional grids")


def cusp_metric(domain: GridDomain, k: int) -> MetricField:
    """diag(f, 1/f) with f = cusp_profile(x, k); needs >= 8 cells per width 1/k."""
    _check_surface(domain)
    if k < 2:
        raise ValueError("k must be >= 2")
    if domain.dims[0] < 16 * k:
        raise ResolutionError(f"resolution {domain.dims[0]} does not resolve the strip of width 1/{k}; need >= {16 * k}")
    x, _ = domain.centers()
    f = cusp_profile(x, k)
    return _diag_field(domain, f, 1.0 / f)


def inj_strip_mask(domain: GridDomain, k: int) -> np.ndarray:
    """E_k = [-3/4, 3/4] x [-1/k, 1/k] (cells whose center lies inside)."""
    x, y = domain.centers()
    return (np.abs(x) <= 0.75) & (np.abs(y) <= 1.0 / k)


def inj_neighbourhood_mask(domain: GridDomain, k: int) -> np.ndarray:
    """U_k = [-7/8, 7/8] x [-9/(8k), 9/(8k)]."""
    x, y = domain.centers()
    return (np.abs(x) < 0.875) & (np.abs(y) < 9.0 / (8.0 * k))


def inj_metric(domain: GridDomain, k: int) -> MetricField:
    """diag(h, 1/h): h = 1/k on E_k, 1 off U_k, smoothstep blend in between."""
    _check_surface(domain)
    if k < 4:
        raise ValueError("k must be >= 4")
    if min(domain.dims) < 2 * k:
        raise ResolutionError(f"resolution {domain.dims} does not resolve 1/{k}; need >= {2 * k}")
    x, y = domain.centers()
    ux = (0.875 - np.abs(x)) / 0.125
    uy = (9.0 / (8.0 * k) - np.abs(y)) / (1.0 / (8.0 * k))
    h = 1.0 + (1.0 / k - 1.0) * smoothstep(ux) * smoothstep(uy)
    return _diag_field(domain, h, 1.0 / h)


def conformal_metric(domain: GridDomain, u: np.ndarray) -> MetricField:
    """e^{2u} I."""
    e = np.exp(2.0 * np.asarray(u, dtype=float))
    return _diag_field(domain, e, e)


# -- curve length ------------------------------------------------------------


def _nearest_cells(domain: GridDomain, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = domain.spacing
    i = np.floor((pts[:, 0] + 1.0) / h[0]).astype(int) % domain.dims[0]
    j = np.floor((pts[:, 1] + 1.0) / h[1]).astype(int) % domain.dims[1]
    return i, j


def curve_length(f: MetricField, polyline, max_step: float | None = None) -> float:
    """Length of a polyline, each piece measured with the metric of the cell at its midpoint.

    Segments are subdivided into pieces no longer than ``max_step``
    (default a quarter cell) so the sampling sees every crossed cell.
    """
    _check_surface(f.domain)
    pts = np.asarray(polyline, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError("polyline must be an (m, 2) array with m >= 2")
    step = max_step or 0.25 * min(f.domain.spacing)
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        seg = b - a
        length = float(np.hypot(*seg))
        if length == 0.0:
            continue
        m = max(1, math.ceil(length / step))
        mids = a + seg * ((np.arange(m) + 0.5) / m)[:, None]
        i, j = _nearest_cells(f.domain, mids)
        g = f.cells[i, j]
        v = seg / length
        speed = np.sqrt(np.einsum("a,kab,b->k", v, g, v))
        total += float(np.sum(speed)) * length / m
    return total


# -- grid geodesics ----------------------------------------------------------

STENCIL_16 = ((1, 0), (0, 1), (1, 1), (1, -1), (1, 2), (2, 1), (1, -2), (2, -1))
EDGE_SAMPLES = (0.125, 0.375, 0.625, 0.875)


def metric_graph(f: MetricField, periodic=(True, True)) -> sparse.csr_matrix:
    """16-neighbour graph on cell centers with metric-weighted edges.

    An edge's weight is its Euclidean offset measured by the metric, averaged
    over four points along the edge (each read from its nearest cell).
    """
    _check_surface(f.domain)
    nx, ny = f.domain.dims
    hx, hy = f.domain.spacing
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    rows, cols, weights = [], [], []
    for di, dj in STENCIL_16:
        ti, tj = ii + di, jj + dj
        keep = np.ones_like(ii, dtype=bool)
        if not periodic[0]:
            keep &= (ti >= 0) & (ti < nx)
        if not periodic[1]:
            keep &= (tj >= 0) & (tj < ny)
        v = np.array([di * hx, dj * hy])
        speed = np.zeros(ii.shape)
        for t in EDGE_SAMPLES:
            si = np.floor(ii + 0.5 + t * di).astype(int) % nx
            sj = np.floor(jj + 0.5 + t * dj).astype(int) % ny
            g = f.cells[si, sj]
            speed += np.sqrt(np.einsum("a,...ab,b->...", v, g, v))
        w = speed / len(EDGE_SAMPLES)
        src = (ii * ny + jj)[keep]
        dst = ((ti % nx) * ny + (tj % ny))[keep]
        rows += [src, dst]
        cols += [dst, src]
        weights += [w[keep], w[keep]]
    n = nx * ny
    return sparse.csr_matrix(
        (np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def _node(domain: GridDomain, p) -> int:
    i, j = domain.cell_index(p)
    return i * domain.dims[1] + j


def surface_distance(f: MetricField, p, q, periodic=(True, True), graph=None) -> float:
    """Shortest-path distance between the cells containing ``p`` and ``q``.

    ``periodic`` selects per axis whether the grid wraps around; cutting an
    axis restricts paths to the chart rectangle in that direction.
    """
    g = metric_graph(f, periodic) if graph is None else graph
    dist = dijkstra(g, directed=False, indices=_node(f.domain, p))
    return float(dist[_node(f.domain, q)])


def sample_sources(domain: GridDomain, samples: int) -> list[tuple[float, float]]:
    """``samples`` x ``samples`` lattice of source points, offset off the axes."""
    if samples < 1:
        raise ValueError("samples must be positive")
    coords = -1.0 + (np.arange(samples) + 0.5) * 2.0 / samples
    return [(float(x), float(y)) for x in coords for y in coords]


def diameter_estimate(f: MetricField, samples: int = 4, periodic=(True, True)) -> float:
    """Largest graph eccentricity over a lattice of ``samples``^2 source points."""
    if samples < 4:
        raise ValueError("at least 4 samples per axis are required")
    g = metric_graph(f, periodic)
    srcs = [_node(f.domain, p) for p in sample_sources(f.domain, samples)]
    dist = dijkstra(g, directed=False, indices=srcs)
    return float(np.max(dist))


# -- curvature ---------------------------------------------------------------


def gaussian_curvature(f: MetricField) -> np.ndarray:
    """Gauss curvature per cell from the Brioschi formula with periodic central differences."""
    _check_surface(f.domain)
    if min(f.domain.dims) < 32:
        raise ResolutionError("curvature needs a resolution of at least 32")
    hx, hy = f.domain.spacing
    e = f.cells[..., 0, 0]
    ff = f.cells[..., 0, 1]
    g = f.cells[..., 1, 1]

    def du(a):
        return (np.roll(a, -1, 0) - np.roll(a, 1, 0)) / (2.0 * hx)

    def dv(a):
        return (np.roll(a, -1, 1) - np.roll(a, 1, 1)) / (2.0 * hy)

    def duu(a):
        return (np.roll(a, -1, 0) - 2.0 * a + np.roll(a, 1, 0)) / hx ** 2

    def dvv(a):
        return (np.roll(a, -1, 1) - 2.0 * a + np.roll(a, 1, 1)) / hy ** 2

    e_u, e_v, f_u, f_v, g_u, g_v = du(e), dv(e), du(ff), dv(ff), du(g), dv(g)
    m1 = np.empty(e.shape + (3, 3))
    m1[..., 0, 0] = -0.5 * dvv(e) + du(dv(ff)) - 0.5 * duu(g)
    m1[..., 0, 1] = 0.5 * e_u
    m1[..., 0, 2] = f_u - 0.5 * e_v
    m1[..., 1, 0] = f_v - 0.5 * g_u
    m1[..., 1, 1] = e
    m1[..., 1, 2] = ff
    m1[..., 2, 0] = 0.5 * g_v
    m1[..., 2, 1] = ff
    m1[..., 2, 2] = g
    m2 = np.zeros(e.shape + (3, 3))
    m2[..., 0, 1] = m2[..., 1, 0] = 0.5 * e_v
    m2[..., 0, 2] = m2[..., 2, 0] = 0.5 * g_u
    m2[..., 1, 1] = e
    m2[..., 1, 2] = m2[..., 2, 1] = ff
    m2[..., 2, 2] = g
    area2 = (e * g - ff * ff) ** 2
    return (np.linalg.det(m1) - np.linalg.det(m2)) / area2


# -- probes ------------------------------------------------------------------

PROBES = ("curvature", "distance", "diameter", "injectivity")


@dataclass(frozen=True)
class ProbeResult:
    quantity: str
    ks: tuple[int, ...]
    values: tuple[float, ...]
    flat_value: float
    diverging: bool  # moves monotonically away from the flat value as k grows

    def rows(self) -> list[dict]:
        return [{"probe": self.quantity, "k": k, "value": v, "flat": self.flat_value}
                for k, v in zip(self.ks, self.values)]


CROSSING_POINTS = ((-0.5, 0.0), (0.5, 0.0))
LOOP = ((-1.0, 0.0), (1.0, 0.0))


def _moves_away(values, flat) -> bool:
    gaps = np.abs(np.asarray(values, dtype=float) - flat)
    return bool(np.all(np.diff(gaps) > 0))


def curvature_probe(ks, res: int = 256) -> ProbeResult:
    d = make_grid(2, res)
    vals = tuple(float(np.abs(gaussian_curvature(cusp_metric(d, k))).max()) for k in ks)
    return ProbeResult("curvature", tuple(ks), vals, 0.0, _moves_away(vals, 0.0))


def distance_probe(ks, res: int = 256) -> ProbeResult:
    """Distance across the pinched strip on the torus cut open along x = +-1."""
    d = make_grid(2, res)
    p, q = CROSSING_POINTS
    flat = surface_distance(MetricField.identity(d), p, q, periodic=(False, True))
    vals = tuple(surface_distance(cusp_metric(d, k), p, q, periodic=(False, True)) for k in ks)
    return ProbeResult("distance", tuple(ks), vals, flat, _moves_away(vals, flat))


def diameter_probe(ks, res: int = 256, samples: int = 4) -> ProbeResult:
    d = make_grid(2, res)
    flat = diameter_estimate(MetricField.identity(d), samples)
    vals = tuple(diameter_estimate(cusp_metric(d, k), samples) for k in ks)
    return ProbeResult("diameter", tuple(ks), vals, flat, _moves_away(vals, flat))


def injectivity_probe(ks, res: int = 256) -> ProbeResult:
    """Length of the loop y = 0 under inj_metric (a proxy for the injectivity radius)."""
    d = make_grid(2, res)
    flat = curve_length(MetricField.identity(d), LOOP)
    vals = tuple(curve_length(inj_metric(d, k), LOOP) for k in ks)
    return ProbeResult("injectivity", tuple(ks), vals, flat, _moves_away(vals, flat))


def run_probe(name: str, ks, res: int = 256, samples: int = 4) -> ProbeResult:
    if name == "curvature":
        return curvature_probe(ks, res)
    if name == "distance":
        return distance_probe(ks, res)
    if name == "diameter":
        return diameter_probe(ks, res, samples)
    if name == "injectivity":
        return injectivity_probe(ks, res)
    raise ValueError(f"unknown probe {name!r}; choose from {PROBES}")
