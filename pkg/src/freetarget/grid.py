"""Uniform Cartesian grids in one and two dimensions, nodal fields and the
discrete operators shared by the solvers.

Fields are stored as numpy arrays of shape ``grid.shape`` with ``ij``
indexing, so the first axis is ``x`` and, in 2D, the second is ``y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GridMismatch, OutOfDomain


@dataclass(frozen=True)
class GridSpec:
    dim: int
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    n: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        for name in ("lo", "hi", "n"):
            if len(getattr(self, name)) != self.dim:
                raise ValueError(f"{name} must have {self.dim} entries")
        for a, b, k in zip(self.lo, self.hi, self.n):
            if not a < b:
                raise ValueError(f"need lo < hi, got {a} >= {b}")
            if k < 3:
                raise ValueError(f"need at least 3 nodes per axis, got {k}")

    @classmethod
    def uniform(cls, lo: float | Sequence[float], hi: float | Sequence[float],
                h: float, dim: int = 1) -> "GridSpec":
        """Grid on ``[lo, hi]^dim`` with spacing ``h`` (must divide the box)."""
        los = _per_axis(lo, dim)
        his = _per_axis(hi, dim)
        ns = []
        for a, b in zip(los, his):
            cells = (b - a) / h
            k = int(round(cells))
            if abs(cells - k) > 1e-9 * max(1.0, cells):
                raise ValueError(f"h={h} does not divide [{a}, {b}]")
            ns.append(k + 1)
        return cls(dim, tuple(los), tuple(his), tuple(ns))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def h(self) -> tuple[float, ...]:
        return tuple((b - a) / (k - 1) for a, b, k in zip(self.lo, self.hi, self.n))

    @property
    def cell_volume(self) -> float:
        return math.prod(self.h)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, k) for a, b, k in zip(self.lo, self.hi, self.n)]

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(n_nodes, dim)`` in row-major order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def radius(self) -> np.ndarray:
        return np.sqrt(sum(m * m for m in self.mesh()))

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights: ``h^d`` inside, halved once per boundary axis."""
        w = np.ones(self.shape)
        for ax in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[ax] = 0
            w[tuple(sl)] *= 0.5
            sl[ax] = -1
            w[tuple(sl)] *= 0.5
        return w * self.cell_volume

    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[(slice(1, -1),) * self.dim] = True
        return m

    def boundary_distance(self) -> np.ndarray:
        """Index distance of every node to the nearest box face."""
        d = None
        for ax, k in enumerate(self.n):
            idx = np.arange(k)
            dist = np.minimum(idx, k - 1 - idx)
            shp = [1] * self.dim
            shp[ax] = k
            dist = dist.reshape(shp)
            d = dist if d is None else np.minimum(d, dist)
        return np.broadcast_to(d, self.shape).copy()


def _per_axis(v, dim):
    if np.isscalar(v):
        return [float(v)] * dim
    v = [float(x) for x in v]
    if len(v) != dim:
        raise ValueError(f"expected {dim} values, got {len(v)}")
    return v


@dataclass(frozen=True)
class ScalarField:
    """Signed nodal values (potential gaps, differences)."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        self._check(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def _check(self, v: np.ndarray) -> None:
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")


@dataclass(frozen=True)
class DensityField(ScalarField):
    """Nonnegative density (mass per unit length^d) sampled at nodes."""

    def _check(self, v: np.ndarray) -> None:
        super()._check(v)
        if np.any(v < 0):
            raise ValueError(f"density must be nonnegative (min {v.min():.3g})")

    @classmethod
    def clipped(cls, grid: GridSpec, values: np.ndarray) -> "DensityField":
        """Build from values that may carry roundoff-level negatives."""
        return cls(grid, np.maximum(np.asarray(values, dtype=float), 0.0))


@dataclass(frozen=True)
class BarrierField(ScalarField):
    """Barrier ``s(x)`` with values in ``[0, +inf]``; ``inf`` is a real sentinel."""

    def _check(self, v: np.ndarray) -> None:
        if np.any(np.isnan(v)) or np.any(v < 0) or np.any(v == -np.inf):
            raise ValueError("barrier values must lie in [0, +inf]")


def _same_grid(a: ScalarField, b: ScalarField) -> None:
    if a.grid != b.grid:
        raise GridMismatch(f"{a.grid} != {b.grid}")


def mass(field: ScalarField) -> float:
    return float(np.sum(field.values * field.grid.quadrature_weights()))


def integrate(grid: GridSpec, values: np.ndarray) -> float:
    return float(np.sum(values * grid.quadrature_weights()))


def l1_pos_diff(a: DensityField, b: DensityField) -> float:
    """``||(a - b)_+||_1`` with the trapezoid rule."""
    _same_grid(a, b)
    return integrate(a.grid, np.maximum(a.values - b.values, 0.0))


def l1_diff(a: ScalarField, b: ScalarField) -> float:
    _same_grid(a, b)
    return integrate(a.grid, np.abs(a.values - b.values))


def tv_norm(field: ScalarField) -> float:
    """Anisotropic discrete total variation."""
    g = field.grid
    total = 0.0
    for ax in range(g.dim):
        jumps = np.abs(np.diff(field.values, axis=ax)).sum()
        total += jumps * g.cell_volume / g.h[ax]
    return float(total)


def laplacian(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    """Standard 3/5-point Laplacian at interior nodes; zero on the box faces."""
    v = np.asarray(values, dtype=float)
    out = np.zeros_like(v)
    inner = (slice(1, -1),) * grid.dim
    for ax, hk in enumerate(grid.h):
        fwd = [slice(1, -1)] * grid.dim
        bwd = [slice(1, -1)] * grid.dim
        fwd[ax] = slice(2, None)
        bwd[ax] = slice(None, -2)
        out[inner] += (v[tuple(fwd)] - 2.0 * v[inner] + v[tuple(bwd)]) / (hk * hk)
    return out


def interp_eval(field: ScalarField, x: Sequence[float] | np.ndarray) -> float | np.ndarray:
    """Multilinear interpolation at one point or an ``(m, dim)`` array of points.

    Any ``+inf`` corner of the enclosing cell makes the result ``+inf``, so a
    barrier is never lowered by blending with an infinite neighbour.
    """
    g = field.grid
    pts = np.asarray(x, dtype=float)
    if g.dim == 1:
        single = pts.ndim == 0 or pts.shape == (1,)
        pts = pts.reshape(-1, 1)
    else:
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
    if pts.shape[1] != g.dim:
        raise ValueError(f"points must have {g.dim} coordinates")
    res = _interp(g, field.values, pts)
    return float(res[0]) if single else res


def _interp(g: GridSpec, vals: np.ndarray, pts: np.ndarray) -> np.ndarray:
    idx = []
    frac = []
    for ax in range(g.dim):
        lo, hi, k, hk = g.lo[ax], g.hi[ax], g.n[ax], g.h[ax]
        p = pts[:, ax]
        tol = 1e-12 * max(1.0, abs(hi - lo))
        if np.any(p < lo - tol) or np.any(p > hi + tol):
            bad = p[(p < lo - tol) | (p > hi + tol)][0]
            raise OutOfDomain(f"coordinate {bad} outside [{lo}, {hi}]")
        u = np.clip((p - lo) / hk, 0.0, k - 1)
        i = np.minimum(np.floor(u).astype(np.int64), k - 2)
        idx.append(i)
        frac.append(u - i)
    out = np.zeros(len(pts))
    has_inf = np.zeros(len(pts), dtype=bool)
    for corner in range(2 ** g.dim):
        wgt = np.ones(len(pts))
        ind = []
        for ax in range(g.dim):
            bit = (corner >> ax) & 1
            wgt *= frac[ax] if bit else 1.0 - frac[ax]
            ind.append(idx[ax] + bit)
        cv = vals[tuple(ind)]
        inf = np.isinf(cv)
        has_inf |= inf
        out += wgt * np.where(inf, 0.0, cv)
    out[has_inf] = np.inf
    return out


# ---------------------------------------------------------------- CSV format

def write_field(path: str | Path, field: ScalarField, meta: dict | None = None) -> None:
    """Write the shared field CSV (``# dim,n1[,n2],lo1,hi1[,lo2,hi2]`` header).

    ``meta`` entries go after the data as ``# key=value`` lines, which readers skip.
    """
    g = field.grid
    head = [str(g.dim)] + [str(k) for k in g.n]
    for a, b in zip(g.lo, g.hi):
        head += [repr(float(a)), repr(float(b))]
    pts = g.points()
    vals = field.values.ravel()
    lines = ["# " + ",".join(head)]
    for p, v in zip(pts, vals):
        cols = [repr(float(c)) for c in p] + [_fmt(v)]
        lines.append(",".join(cols))
    for k, v in (meta or {}).items():
        lines.append(f"# {k}={v}")
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v: float) -> str:
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def read_grid_header(line: str) -> GridSpec:
    parts = line.lstrip("#").strip().split(",")
    dim = int(parts[0])
    n = tuple(int(p) for p in parts[1:1 + dim])
    rest = [float(p) for p in parts[1 + dim:]]
    if len(rest) != 2 * dim:
        raise ValueError(f"malformed field header: {line!r}")
    return GridSpec(dim, tuple(rest[0::2]), tuple(rest[1::2]), n)


def read_values(path: str | Path) -> tuple[GridSpec, np.ndarray]:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing '# dim,...' header")
        grid = read_grid_header(header)
        vals = [float(line.rsplit(",", 1)[1]) for line in fh
                if line.strip() and not line.startswith("#")]
    arr = np.array(vals, dtype=float)
    if arr.size != math.prod(grid.n):
        raise ValueError(f"{path}: expected {math.prod(grid.n)} rows, got {arr.size}")
    return grid, arr.reshape(grid.shape)


def read_meta(path: str | Path) -> dict:
    """Trailing ``# key=value`` lines of a field CSV."""
    out = {}
    with open(path) as fh:
        fh.readline()
        for line in fh:
            if line.startswith("#") and "=" in line:
                k, v = line[1:].strip().split("=", 1)
                out[k] = v
    return out


def read_field(path: str | Path, kind: type[ScalarField] = ScalarField) -> ScalarField:
    grid, vals = read_values(path)
    return kind(grid, vals)


def hausdorff_distance(grid: GridSpec, a: np.ndarray, b: np.ndarray) -> float:
    """Hausdorff distance between two node sets (0 if both empty, inf if one is)."""
    from scipy.ndimage import distance_transform_edt

    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if not a.any() and not b.any():
        return 0.0
    if not a.any() or not b.any():
        return float("inf")
    da = distance_transform_edt(~a, sampling=grid.h)
    db = distance_transform_edt(~b, sampling=grid.h)
    return float(max(db[a].max(), da[b].max()))


def boundary_nodes(mask: np.ndarray) -> np.ndarray:
    """Nodes of ``mask`` with at least one axis neighbour outside it."""
    m = np.asarray(mask, dtype=bool)
    inner = m.copy()
    for ax in range(m.ndim):
        inner[...] &= np.roll(m, 1, axis=ax) & np.roll(m, -1, axis=ax)
    return m & ~inner
