"""Independent reference values used by the tests.

The fiber metric tr(a^-1 b a^-1 c) det(a) is a flat cone over the
unit-determinant tensors: with r = (2/sqrt(n)) sqrt(det a) as the radial
coordinate, the angular part is the affine-invariant metric scaled by
sqrt(n)/2.  Geodesic distance on a cone with apex angle below pi follows
the law of cosines; otherwise the shortest path runs through the apex.
"""

import math

import numpy as np
from scipy.linalg import eigh, logm, sqrtm


def cone_radius(a):
    n = a.shape[-1]
    return 2.0 / math.sqrt(n) * math.sqrt(max(np.linalg.det(a), 0.0))


def cone_angle(a0, a1):
    n = a0.shape[-1]
    u0 = a0 / np.linalg.det(a0) ** (1.0 / n)
    u1 = a1 / np.linalg.det(a1) ** (1.0 / n)
    w = eigh(u1, u0, eigvals_only=True)
    return math.sqrt(n) / 2.0 * float(np.sqrt(np.sum(np.log(w) ** 2)))


def theta_closed_form(a0, a1):
    r0, r1 = cone_radius(a0), cone_radius(a1)
    if r0 == 0.0 or r1 == 0.0:
        return r0 + r1
    phi = cone_angle(a0, a1)
    if phi >= math.pi:
        return r0 + r1
    return math.sqrt(max(r0 * r0 + r1 * r1 - 2.0 * r0 * r1 * math.cos(phi), 0.0))


def conformal_ray_length(n, det_a, c):
    """Length of t -> ((1-t) + t c^(n/4))^(4/n) a joining a and c a."""
    return 2.0 / math.sqrt(n) * math.sqrt(det_a) * abs(c ** (n / 2.0) - 1.0)


def fiber_length_fine(nodes_fn, k):
    """Trapezoid-free reference: midpoint rule with exact matrix functions."""
    total = 0.0
    ts = np.linspace(0.0, 1.0, k + 1)
    for t0, t1 in zip(ts[:-1], ts[1:]):
        a0, a1 = nodes_fn(t0), nodes_fn(t1)
        m = 0.5 * (a0 + a1)
        d = a1 - a0
        mi = np.linalg.inv(m)
        total += math.sqrt(np.trace(mi @ d @ mi @ d) * np.linalg.det(m))
    return total


def central_gradient(fun, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def spd_sqrt(a):
    return np.real(sqrtm(a))


def spd_log(a):
    return np.real(logm(a))
