"""Uniform 2-D grids, scalar fields, and finite-difference primitives.

Grids are node-centered and include the boundary ring; fields store one value
per node in row-major order (x index slow, y index fast).  All derivative
stencils are centered and simply shrink to the interior; one-sided stencils
are never used.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfDomainError, SamplingError

CSV_SCHEMA_LINE = "# schema=1"


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid with nx * ny nodes including the boundary."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("grid corners must satisfy xmax > xmin and ymax > ymin")
        if self.nx < 3 or self.ny < 3:
            raise ValueError("grid needs at least 3 nodes per axis")
        if not (np.isfinite(self.hx) and np.isfinite(self.hy)):
            raise ValueError("grid spacings must be finite")

    @property
    def hx(self) -> float:
        return (self.xmax - self.xmin) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.ymax - self.ymin) / (self.ny - 1)

    def xs(self) -> np.ndarray:
        return self.xmin + self.hx * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.ymin + self.hy * np.arange(self.ny)

    def meshgrid(self):
        """Node coordinates as two (nx, ny) arrays."""
        return np.meshgrid(self.xs(), self.ys(), indexing="ij")

    def node(self, i: int, j: int):
        return (self.xmin + i * self.hx, self.ymin + j * self.hy)

    def contains(self, point) -> bool:
        x, y = point
        return (self.xmin <= x <= self.xmax) and (self.ymin <= y <= self.ymax)

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.xmax - self.xmin, self.ymax - self.ymin))


@dataclass(frozen=True)
class ScalarField:
    """Finite values on the nodes of a Grid, immutable after construction."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.nx, self.grid.ny):
            vals = vals.reshape(self.grid.nx, self.grid.ny)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must all be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, np.asarray(values, dtype=float))


def sample(fn, grid: Grid) -> ScalarField:
    """Evaluate ``fn((x, y))`` at every node.  Exact at nodes by construction."""
    X, Y = grid.meshgrid()
    vals = np.empty_like(X)
    for i in range(grid.nx):
        for j in range(grid.ny):
            vals[i, j] = fn((X[i, j], Y[i, j]))
    bad = ~np.isfinite(vals)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise SamplingError(f"non-finite value at node ({i}, {j}) = {grid.node(i, j)}")
    return ScalarField(grid, vals)


def sample_vectorized(fn_xy, grid: Grid) -> ScalarField:
    """Like :func:`sample` for functions taking (X, Y) arrays."""
    X, Y = grid.meshgrid()
    vals = np.asarray(fn_xy(X, Y), dtype=float)
    bad = ~np.isfinite(vals)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise SamplingError(f"non-finite value at node ({i}, {j}) = {grid.node(i, j)}")
    return ScalarField(grid, vals)


def directional_second_difference(fld: ScalarField, node, direction) -> float:
    """Centered second difference (v(x+e) - 2 v(x) + v(x-e)) / |e|^2.

    ``direction`` is an integer lattice vector; ``e`` is its physical offset.
    """
    i, j = node
    a, b = int(direction[0]), int(direction[1])
    g = fld.grid
    if a == 0 and b == 0:
        raise ValueError("direction must be nonzero")
    if not (0 <= i - abs(a) and i + abs(a) < g.nx and 0 <= j - abs(b) and j + abs(b) < g.ny):
        raise OutOfDomainError(f"stencil at node ({i}, {j}) with direction ({a}, {b}) leaves the grid")
    e2 = (a * g.hx) ** 2 + (b * g.hy) ** 2
    v = fld.values
    return (v[i + a, j + b] - 2.0 * v[i, j] + v[i - a, j - b]) / e2


def second_difference_array(fld: ScalarField, direction) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized second difference along one lattice direction.

    Returns (values, mask): values has the grid shape with zeros where the
    stencil does not fit; mask flags nodes where it does.
    """
    a, b = int(direction[0]), int(direction[1])
    g = fld.grid
    v = fld.values
    e2 = (a * g.hx) ** 2 + (b * g.hy) ** 2
    out = np.zeros_like(v)
    mask = np.zeros(v.shape, dtype=bool)
    ia, ja = abs(a), abs(b)
    if g.nx - 2 * ia <= 0 or g.ny - 2 * ja <= 0:
        return out, mask
    core = (slice(ia, g.nx - ia), slice(ja, g.ny - ja))
    plus = (slice(ia + a, g.nx - ia + a), slice(ja + b, g.ny - ja + b))
    minus = (slice(ia - a, g.nx - ia - a), slice(ja - b, g.ny - ja - b))
    out[core] = (v[plus] - 2.0 * v[core] + v[minus]) / e2
    mask[core] = True
    return out, mask


def interior_mask(grid: Grid, radius: int = 1) -> np.ndarray:
    """Nodes at least ``radius`` layers away from the boundary ring."""
    m = np.zeros((grid.nx, grid.ny), dtype=bool)
    m[radius : grid.nx - radius, radius : grid.ny - radius] = True
    return m


def bilinear_eval(fld: ScalarField, point) -> float:
    """Bilinear interpolation; exact on affine functions and at nodes."""
    x, y = point
    g = fld.grid
    if not (g.xmin <= x <= g.xmax and g.ymin <= y <= g.ymax):
        raise OutOfDomainError(f"point {point} outside grid rectangle")
    fx = (x - g.xmin) / g.hx
    fy = (y - g.ymin) / g.hy
    i = min(int(fx), g.nx - 2)
    j = min(int(fy), g.ny - 2)
    tx = fx - i
    ty = fy - j
    v = fld.values
    return float(
        v[i, j] * (1 - tx) * (1 - ty)
        + v[i + 1, j] * tx * (1 - ty)
        + v[i, j + 1] * (1 - tx) * ty
        + v[i + 1, j + 1] * tx * ty
    )


def bilinear_eval_many(fld: ScalarField, xs, ys) -> np.ndarray:
    """Vectorized bilinear interpolation at arrays of points."""
    g = fld.grid
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if np.any(xs < g.xmin) or np.any(xs > g.xmax) or np.any(ys < g.ymin) or np.any(ys > g.ymax):
        raise OutOfDomainError("a point lies outside the grid rectangle")
    fx = (xs - g.xmin) / g.hx
    fy = (ys - g.ymin) / g.hy
    i = np.minimum(fx.astype(int), g.nx - 2)
    j = np.minimum(fy.astype(int), g.ny - 2)
    tx = fx - i
    ty = fy - j
    v = fld.values
    return (
        v[i, j] * (1 - tx) * (1 - ty)
        + v[i + 1, j] * tx * (1 - ty)
        + v[i, j + 1] * (1 - tx) * ty
        + v[i + 1, j + 1] * tx * ty
    )


def gradient_central(fld: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Centered first differences on the interior; boundary ring zero-filled."""
    g = fld.grid
    v = fld.values
    gx = np.zeros_like(v)
    gy = np.zeros_like(v)
    gx[1:-1, :] = (v[2:, :] - v[:-2, :]) / (2 * g.hx)
    gy[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2 * g.hy)
    return gx, gy


def field_to_csv(fld: ScalarField, path_or_buf) -> None:
    """Write ``x,y,v`` rows in row-major node order with 17 significant digits."""
    X, Y = fld.grid.meshgrid()
    rows = np.column_stack([X.ravel(), Y.ravel(), fld.values.ravel()])
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    f = open(path_or_buf, "w") if own else path_or_buf
    try:
        f.write(CSV_SCHEMA_LINE + "\n")
        f.write("x,y,v\n")
        for x, y, v in rows:
            f.write(f"{x:.17g},{y:.17g},{v:.17g}\n")
    finally:
        if own:
            f.close()


def field_from_csv(path_or_buf) -> ScalarField:
    """Read a field written by :func:`field_to_csv`, reconstructing the grid."""
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    f = open(path_or_buf, "r") if own else path_or_buf
    try:
        text = f.read()
    finally:
        if own:
            f.close()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if lines and lines[0].strip().lower().startswith("x,"):
        lines = lines[1:]
    data = np.loadtxt(io.StringIO("\n".join(lines)), delimiter=",")
    xs = np.unique(data[:, 0])
    ys = np.unique(data[:, 1])
    nx, ny = len(xs), len(ys)
    if nx * ny != data.shape[0]:
        raise ValueError("CSV rows do not form a full rectangular grid")
    grid = Grid(xs[0], xs[-1], ys[0], ys[-1], nx, ny)
    vals = np.empty((nx, ny))
    ix = np.searchsorted(xs, data[:, 0])
    iy = np.searchsorted(ys, data[:, 1])
    vals[ix, iy] = data[:, 2]
    return ScalarField(grid, vals)
