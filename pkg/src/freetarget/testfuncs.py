"""Fixed family of smooth, compactly supported space-time test functions used
by every weak-form residual in the package.

Each member is ``phi(x, t) = b(x) * psi(t)`` with a tensor-product spatial
bump ``b(x) = prod_k p((x_k - c_k) / r)`` and ``p(u) = (1 - u^2)^4`` on
``|u| < 1``. Time factors come in two kinds: an *initial* factor
``p(t / T)`` that is 1 at ``t = 0`` (probes the initial data) and an
*interior* factor ``p((t - T) / T)`` that vanishes at ``t = 0``.
Scales are parabolic, ``T = r^2``. Changing anything here changes every
pinned residual value, so bump ``FAMILY_VERSION`` when you do.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec

FAMILY_VERSION = 1
RADII = (0.5, 1.0, 2.0)

_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)


def _p(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 4, 0.0)


def _p2(u):
    """Second derivative of ``p``."""
    u = np.asarray(u, dtype=float)
    s = 1.0 - u * u
    return np.where(np.abs(u) < 1.0, -8.0 * s ** 3 + 48.0 * u * u * s ** 2, 0.0)


@dataclass(frozen=True)
class TestFunction:
    center: tuple[float, ...]
    radius: float
    T: float
    initial: bool

    __test__ = False  # not a pytest class

    def space(self, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
        """Nodal values of ``b`` and of its exact Laplacian."""
        mesh = grid.mesh()
        us = [(m - c) / self.radius for m, c in zip(mesh, self.center)]
        ps = [_p(u) for u in us]
        b = np.prod(ps, axis=0)
        lap = np.zeros(grid.shape)
        for k, u in enumerate(us):
            term = _p2(u) / self.radius ** 2
            for j, pj in enumerate(ps):
                if j != k:
                    term = term * pj
            lap += term
        return b, lap

    def psi(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.initial:
            return np.where(t >= 0, _p(t / self.T), 0.0)
        return _p((t - self.T) / self.T)

    def psi_integrals(self, times: np.ndarray) -> np.ndarray:
        """``int_{t_n}^{t_{n+1}} psi dt`` for consecutive entries of ``times``."""
        a, b = times[:-1], times[1:]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        nodes = mid[:, None] + half[:, None] * _GL_X[None, :]
        return half * (self.psi(nodes) @ _GL_W)


def standard_family(grid: GridSpec, radii=RADII) -> list[TestFunction]:
    out = []
    for r in radii:
        axes = []
        for lo, hi in zip(grid.lo, grid.hi):
            start = np.ceil((lo + r) / r - 1e-9) * r
            cs = np.arange(start, hi - r + 1e-9, r)
            axes.append(cs)
        if any(len(a) == 0 for a in axes):
            continue
        centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, grid.dim)
        for c in centers:
            for initial in (True, False):
                out.append(TestFunction(tuple(float(x) for x in c), r, r * r, initial))
    return out


def space_table(grid: GridSpec, family: list[TestFunction]) -> tuple[np.ndarray, np.ndarray]:
    """Spatial factors flattened to ``(n_nodes, n_functions)`` matrices,
    already multiplied by the trapezoid weights."""
    wq = grid.quadrature_weights().ravel()
    B = np.empty((wq.size, len(family)))
    L = np.empty_like(B)
    cache: dict = {}
    for j, tf in enumerate(family):
        key = (tf.center, tf.radius)
        if key not in cache:
            b, lap = tf.space(grid)
            cache[key] = (b.ravel() * wq, lap.ravel() * wq)
        B[:, j], L[:, j] = cache[key]
    return B, L


def time_tables(family: list[TestFunction], times: np.ndarray):
    """Per-interval increments and integrals of every time factor, plus ``psi(0)``.

    Returns ``(dpsi, ipsi, psi0)`` with shapes ``(N, J)``, ``(N, J)``, ``(J,)``.
    """
    times = np.asarray(times, dtype=float)
    dpsi = np.empty((len(times) - 1, len(family)))
    ipsi = np.empty_like(dpsi)
    psi0 = np.empty(len(family))
    for j, tf in enumerate(family):
        v = tf.psi(times)
        dpsi[:, j] = np.diff(v)
        ipsi[:, j] = tf.psi_integrals(times)
        psi0[j] = tf.psi(0.0)
    return dpsi, ipsi, psi0


def psi_at(family: list[TestFunction], t: np.ndarray) -> np.ndarray:
    """``psi_j(t_i)`` as an ``(len(t), J)`` matrix; ``t = inf`` gives 0."""
    t = np.asarray(t, dtype=float).ravel()
    finite = np.isfinite(t)
    out = np.zeros((t.size, len(family)))
    tf_ = np.where(finite, t, 0.0)
    for j, tf in enumerate(family):
        out[:, j] = np.where(finite, tf.psi(tf_), 0.0)
    return out
