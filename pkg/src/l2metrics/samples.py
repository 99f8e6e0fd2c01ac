"""Generators for random fields and reference sequences."""

from __future__ import annotations

import numpy as np

from .field import GridDomain, MetricField, SemimetricField, zero_field
from .torus import cusp_metric

SEQUENCES = ("constant", "cusp", "volume-escape", "deflation", "oscillating")


def random_spd(rng: np.random.Generator, n: int, size=(), log_scale: float = 1.0) -> np.ndarray:
    """Random SPD matrices exp(S) with S symmetric Gaussian of scale ``log_scale``."""
    shape = tuple(int(x) for x in np.atleast_1d(size)) + (n, n)
    s = rng.normal(scale=log_scale / np.sqrt(n), size=shape)
    s = 0.5 * (s + np.swapaxes(s, -1, -2))
    w, v = np.linalg.eigh(s)
    return np.einsum("...ik,...k,...jk->...ij", v, np.exp(w), v)


def upsample(blocks: np.ndarray, dims: tuple[int, ...]) -> np.ndarray:
    """Repeat a coarse (*bdims, ...) array onto a grid of shape ``dims``."""
    out = blocks
    for axis, r in enumerate(dims):
        b = blocks.shape[axis]
        if r % b:
            raise ValueError(f"grid size {r} is not a multiple of the block count {b}")
        out = np.repeat(out, r // b, axis=axis)
    return out


def random_block_field(domain: GridDomain, rng: np.random.Generator, blocks: int = 4,
                       log_scale: float = 0.5, deflate_prob: float = 0.0) -> SemimetricField:
    """Blockwise-constant random field; each block is deflated with ``deflate_prob``."""
    n = domain.n
    bdims = (blocks,) * domain.dim
    t = random_spd(rng, n, bdims, log_scale)
    if deflate_prob > 0:
        dead = rng.random(bdims) < deflate_prob
        t[dead] = 0.0
    return SemimetricField(domain, upsample(t, domain.dims))


def random_block_scalar(domain: GridDomain, rng: np.random.Generator, blocks: int = 4,
                        low: float = 0.0, high: float = 1.0) -> np.ndarray:
    return upsample(rng.uniform(low, high, (blocks,) * domain.dim), domain.dims)


def quarter_mask(domain: GridDomain) -> np.ndarray:
    x = domain.centers()
    mask = np.ones(domain.dims, dtype=bool)
    for c in x[:2]:
        mask &= c < 0
    return mask


def make_sequence(kind: str, domain: GridDomain, ks) -> tuple[list[SemimetricField], SemimetricField]:
    """Terms and limit candidate of a reference sequence.

    * constant: g_k = g0 = I.
    * cusp: pinched strip metrics, limit the flat metric.
    * volume-escape: k^(4/n) I on a quarter of the torus, limit I.
    * deflation: k^(-4/n) I, limit the zero field.
    * oscillating: alternates between I and 2I, limit I.
    """
    n = domain.n
    flat = MetricField.identity(domain)
    ks = list(ks)
    if kind == "constant":
        return [flat for _ in ks], flat
    if kind == "cusp":
        return [cusp_metric(domain, k) for k in ks], flat
    if kind == "volume-escape":
        q = quarter_mask(domain)
        return [flat.scaled(np.where(q, float(k) ** (4.0 / n), 1.0)) for k in ks], flat
    if kind == "deflation":
        return [flat.scaled(float(k) ** (-4.0 / n)) for k in ks], zero_field(domain)
    if kind == "oscillating":
        return [flat.scaled(1.0 + (i % 2)) for i, _ in enumerate(ks)], flat
    raise ValueError(f"unknown sequence {kind!r}; choose from {SEQUENCES}")
