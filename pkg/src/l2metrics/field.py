"""Grid domains on the periodic box [-1, 1]^dim and tensor fields over them.

A field stores one symmetric tensor per cell in chart coordinates.  Pointwise
quantities that depend on the reference metric g are computed in a
g-orthonormal frame: with g = L L^T per cell, the frame tensor is
``A = L^-1 a L^-T``, so ``tr_g``, ``det G`` and the fiber distance only see A.

Reductions over cells use ``np.sum`` on contiguous arrays, which is a
fixed-order pairwise sum and therefore bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _linalg as la
from .errors import DomainMismatch, ResolutionError

EPS_PD = 1e-12
EXTENT = (-1.0, 1.0)


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Uniform periodic grid with cell centers at ``-1 + h (i + 1/2)``."""

    dims: tuple[int, ...]
    gref: np.ndarray | None = None  # (*dims, n, n) or None for the identity

    def __post_init__(self):
        if len(self.dims) < 1:
            raise ResolutionError("a grid needs at least one axis")
        if any(int(r) < 4 for r in self.dims):
            raise ResolutionError(f"resolution must be >= 4 per axis, got {self.dims}")
        object.__setattr__(self, "dims", tuple(int(r) for r in self.dims))
        if self.gref is not None:
            g = np.asarray(self.gref, dtype=float)
            if g.shape != self.dims + (self.dim, self.dim):
                raise ValueError(f"gref must have shape {self.dims + (self.dim, self.dim)}, got {g.shape}")
            if np.any(np.linalg.eigvalsh(g)[..., 0] <= 0):
                raise ValueError("reference metric must be positive definite in every cell")
            g = la.sym(g)
            g.setflags(write=False)
            object.__setattr__(self, "gref", g)
        l_inv = None if self.gref is None else np.linalg.inv(np.linalg.cholesky(self.gref))
        object.__setattr__(self, "_l_inv", l_inv)
        measure = np.full(self.dims, float(np.prod(self.spacing)))
        if self.gref is not None:
            measure = measure * np.sqrt(det_sym(self.gref))
        measure.setflags(write=False)
        object.__setattr__(self, "cell_measure", measure)

    @property
    def dim(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        """Fiber dimension: metrics on a dim-manifold are dim x dim tensors."""
        return self.dim

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((EXTENT[1] - EXTENT[0]) / r for r in self.dims)

    @property
    def identity_reference(self) -> bool:
        return self.gref is None

    @property
    def total_measure(self) -> float:
        return float(np.sum(self.cell_measure))

    def axes(self) -> list[np.ndarray]:
        return [EXTENT[0] + h * (np.arange(r) + 0.5) for r, h in zip(self.dims, self.spacing)]

    def centers(self) -> tuple[np.ndarray, ...]:
        """Cell-center coordinates, one array per axis (``indexing="ij"``)."""
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def cell_index(self, point) -> tuple[int, ...]:
        """Index of the cell containing ``point`` (periodic wrap)."""
        idx = []
        for x, r, h in zip(point, self.dims, self.spacing):
            idx.append(int(np.floor((float(x) - EXTENT[0]) / h)) % r)
        return tuple(idx)

    def reference_tensors(self) -> np.ndarray:
        if self.gref is None:
            return np.broadcast_to(np.eye(self.dim), self.dims + (self.dim, self.dim))
        return self.gref

    def to_frame(self, tensors: np.ndarray) -> np.ndarray:
        """Express coordinate tensors (..., *dims, n, n) in the g-orthonormal frame."""
        if self.gref is None:
            return np.asarray(tensors, dtype=float)
        return la.sym(self._l_inv @ tensors @ np.swapaxes(self._l_inv, -1, -2))

    def same_as(self, other: "GridDomain") -> bool:
        if self is other:
            return True
        if self.dims != other.dims:
            return False
        if (self.gref is None) != (other.gref is None):
            return False
        return self.gref is None or bool(np.array_equal(self.gref, other.gref))

    def full_mask(self) -> np.ndarray:
        return np.ones(self.dims, dtype=bool)

    def empty_mask(self) -> np.ndarray:
        return np.zeros(self.dims, dtype=bool)

    def check_mask(self, mask) -> np.ndarray:
        if mask is None:
            return self.full_mask()
        mask = np.asarray(mask)
        if mask.shape != self.dims or mask.dtype != bool:
            raise DomainMismatch(f"mask must be a boolean array of shape {self.dims}")
        return mask


def make_grid(dim: int, resolution, gref_spec="identity") -> GridDomain:
    """Build a periodic grid on [-1, 1]^dim.

    ``resolution`` is an int or one int per axis.  ``gref_spec`` is
    ``"identity"``, a positive scalar c (meaning c I), a constant dim x dim
    matrix or a per-cell array of shape (*dims, dim, dim).
    """
    if isinstance(resolution, (int, np.integer)):
        dims = (int(resolution),) * dim
    else:
        dims = tuple(int(r) for r in resolution)
        if len(dims) != dim:
            raise ValueError("one resolution per axis is required")
    if any(r < 4 for r in dims):
        raise ResolutionError(f"resolution must be >= 4 per axis, got {dims}")
    if isinstance(gref_spec, str):
        if gref_spec != "identity":
            raise ValueError(f"unknown reference metric {gref_spec!r}")
        return GridDomain(dims)
    g = np.asarray(gref_spec, dtype=float)
    if g.ndim == 0:
        g = float(g) * np.eye(dim)
    if g.shape == (dim, dim):
        g = np.broadcast_to(g, dims + (dim, dim)).copy()
    return GridDomain(dims, g)


CellMask = np.ndarray


@dataclass(frozen=True, eq=False)
class SemimetricField:
    """Positive semi-definite tensor per cell; singular cells are deflated.

    Cells whose minimum eigenvalue is below ``eps_pd`` are stored as the zero
    tensor, the canonical representative of the boundary class.
    """

    domain: GridDomain
    cells: np.ndarray
    eps_pd: float = EPS_PD

    def __post_init__(self):
        d = self.domain
        cells = np.array(self.cells, dtype=float)
        if cells.shape != d.dims + (d.n, d.n):
            raise DomainMismatch(f"cells must have shape {d.dims + (d.n, d.n)}, got {cells.shape}")
        if not np.all(np.isfinite(cells)):
            raise ValueError("field contains non-finite entries")
        cells = la.sym(cells)
        w = np.linalg.eigvalsh(d.to_frame(cells))
        scale = np.maximum(1.0, np.abs(w[..., -1]))
        if np.any(w[..., 0] < -1e-9 * scale):
            raise ValueError("field is not positive semi-definite")
        deflated = w[..., 0] < self.eps_pd
        cells[deflated] = 0.0
        cells.setflags(write=False)
        deflated.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "deflated_mask", deflated)
        self._validate()

    def _validate(self):
        pass

    @property
    def frame(self) -> np.ndarray:
        """Cell tensors in the g-orthonormal frame."""
        cached = self.__dict__.get("_frame")
        if cached is None:
            cached = self.domain.to_frame(self.cells)
            cached.setflags(write=False)
            object.__setattr__(self, "_frame", cached)
        return cached

    @classmethod
    def constant(cls, domain: GridDomain, tensor) -> "SemimetricField":
        t = np.asarray(tensor, dtype=float)
        if t.ndim == 0:
            t = float(t) * np.eye(domain.n)
        return cls(domain, np.broadcast_to(t, domain.dims + t.shape).copy())

    def scaled(self, rho) -> "SemimetricField":
        """Pointwise product with a nonnegative scalar field (or scalar)."""
        rho = np.broadcast_to(np.asarray(rho, dtype=float), self.domain.dims)
        if np.any(rho < 0):
            raise ValueError("scaling factor must be nonnegative")
        return SemimetricField(self.domain, rho[..., None, None] * self.cells, self.eps_pd)

    def as_metric(self) -> "MetricField":
        return MetricField(self.domain, self.cells, self.eps_pd)


class MetricField(SemimetricField):
    """A field that is positive definite in every cell."""

    def _validate(self):
        if np.any(self.deflated_mask):
            raise ValueError("a metric field must be positive definite in every cell")

    @classmethod
    def identity(cls, domain: GridDomain) -> "MetricField":
        return cls(domain, domain.reference_tensors().copy())


def zero_field(domain: GridDomain) -> SemimetricField:
    return SemimetricField(domain, np.zeros(domain.dims + (domain.n, domain.n)))


def _same_domain(*fields: SemimetricField) -> GridDomain:
    d = fields[0].domain
    for f in fields[1:]:
        if not d.same_as(f.domain):
            raise DomainMismatch("fields live on different grids")
    return d


def det_sym(a: np.ndarray) -> np.ndarray:
    """Determinant of symmetric matrices; closed form for 2x2 (no LU roundoff)."""
    if a.shape[-1] == 2:
        return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    return np.linalg.det(a)


def radon_nikodym(f: SemimetricField) -> np.ndarray:
    """Per-cell density sqrt(det G~) of mu_f with respect to mu_g; zero on deflated cells."""
    det = det_sym(f.frame)
    rn = np.sqrt(np.clip(det, 0.0, None))
    rn[f.deflated_mask] = 0.0
    return rn


def volume(f: SemimetricField, mask=None) -> float:
    mask = f.domain.check_mask(mask)
    return float(np.sum(np.where(mask, radon_nikodym(f) * f.domain.cell_measure, 0.0)))


def deflated_set(f: SemimetricField) -> np.ndarray:
    return f.deflated_mask.copy()


def carrier(f0: SemimetricField, f1: SemimetricField, eps_eq: float = 0.0) -> np.ndarray:
    """Cells where the stored tensors differ by more than ``eps_eq`` (max entry)."""
    _same_domain(f0, f1)
    diff = np.abs(f1.cells - f0.cells).max(axis=(-2, -1))
    return diff > eps_eq


def pointwise_norm(f: SemimetricField, h: np.ndarray) -> np.ndarray:
    """|h|_g per cell for a coordinate tensor field h."""
    hf = f.domain.to_frame(np.asarray(h, dtype=float))
    return np.sqrt(np.einsum("...ij,...ij->...", hf, hf))


def difference_norm(f0: SemimetricField, f1: SemimetricField) -> np.ndarray:
    """|f1 - f0|_g per cell."""
    _same_domain(f0, f1)
    d = f1.frame - f0.frame
    return np.sqrt(np.einsum("...ij,...ij->...", d, d))


def l2_distance(f0: SemimetricField, f1: SemimetricField) -> float:
    """L2 norm of the difference tensor at the fixed reference metric."""
    d = difference_norm(f0, f1)
    return float(np.sqrt(np.sum(d * d * f0.domain.cell_measure)))


def amenability_bounds(f: SemimetricField) -> tuple[float, float]:
    """(sup of coordinate coefficients |g~_ij|, inf of the minimal eigenvalue of G~)."""
    sup_coeff = float(np.abs(f.cells).max())
    min_eig = float(np.linalg.eigvalsh(f.frame)[..., 0].min())
    return sup_coeff, min_eig


def is_amenable(f: SemimetricField, zeta: float, c: float) -> bool:
    sup_coeff, min_eig = amenability_bounds(f)
    return min_eig >= zeta and sup_coeff <= c


def is_quasi_amenable(f: SemimetricField, c: float) -> bool:
    return amenability_bounds(f)[0] <= c


def semimetric_equiv(f0: SemimetricField, f1: SemimetricField, eps_eq: float = 0.0) -> bool:
    """Same deflated set, and equal tensors (within ``eps_eq``) off it."""
    _same_domain(f0, f1)
    if not np.array_equal(f0.deflated_mask, f1.deflated_mask):
        return False
    return not np.any(carrier(f0, f1, eps_eq))


def function_norm(f: SemimetricField, lam) -> float:
    """L2 norm of a scalar function with respect to mu_f."""
    lam = np.broadcast_to(np.asarray(lam, dtype=float), f.domain.dims)
    return float(np.sqrt(np.sum(lam * lam * radon_nikodym(f) * f.domain.cell_measure)))
