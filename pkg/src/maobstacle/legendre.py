"""Discrete convex conjugates, the partial (last-variable) transform, and the
slope-coordinate profile psi with its equation residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvexityError, EllipticityError
from .fields import CSV_SCHEMA_LINE, Grid, ScalarField, gradient_central, interior_mask


def _conjugate_1d(xs: np.ndarray, fvals: np.ndarray, ys: np.ndarray):
    """max_i (x_i y - f_i) for each y, plus the attaining index.

    Linear time: lower convex hull of (x_i, f_i) by monotone chain, then a
    two-pointer sweep over the ascending slopes; slope ties break toward the
    smaller abscissa.
    """
    n = len(xs)
    hull = []
    for i in range(n):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b if it lies on or above segment a..i
            if (fvals[b] - fvals[a]) * (xs[i] - xs[a]) >= (fvals[i] - fvals[a]) * (xs[b] - xs[a]):
                hull.pop()
            else:
                break
        hull.append(i)
    hull = np.asarray(hull)
    hx = xs[hull]
    hf = fvals[hull]
    m = len(hull)
    out = np.empty(len(ys))
    arg = np.empty(len(ys), dtype=np.int64)
    order = np.argsort(ys, kind="stable")
    k = 0
    for j in order:
        y = ys[j]
        while k + 1 < m and hx[k + 1] * y - hf[k + 1] > hx[k] * y - hf[k]:
            k += 1
        out[j] = hx[k] * y - hf[k]
        arg[j] = hull[k]
    return out, arg


@dataclass
class ConjugateResult:
    """Discrete Legendre transform with truncation metadata.

    ``boundary_attained`` marks dual nodes where the sup is attained on the
    primal grid boundary; outside the gradient range of the input the true
    conjugate is infinite (or attained beyond the grid) and values there grow
    affinely with the dual variable.
    """

    field: ScalarField
    boundary_attained: np.ndarray
    truncated: bool


def gradient_range(fld: ScalarField, pad: float = 0.05):
    """Measured centered-difference gradient range, padded."""
    gx, gy = gradient_central(fld)
    inner = interior_mask(fld.grid, 1)
    lo = np.array([gx[inner].min(), gy[inner].min()])
    hi = np.array([gx[inner].max(), gy[inner].max()])
    span = np.maximum(hi - lo, 1e-12)
    return lo - pad * span, hi + pad * span


def default_dual_grid(fld: ScalarField, nx: int = None, ny: int = None) -> Grid:
    lo, hi = gradient_range(fld)
    g = fld.grid
    return Grid(lo[0], hi[0], lo[1], hi[1], nx or g.nx, ny or g.ny)


def conjugate(fld: ScalarField, dual: Grid) -> ConjugateResult:
    """v*(y) = max over nodes x of (x . y - v(x)), factorized into 1-D sweeps.

    Exact for the sampled piecewise-linear envelope; non-convex inputs are
    implicitly convexified.  Dual nodes whose sup is attained on the primal
    boundary are flagged (truncation of the gradient image).
    """
    g = fld.grid
    xs, ys = g.xs(), g.ys()
    dual_xs, dual_ys = dual.xs(), dual.ys()
    # pass 1: conjugate in x1 per x2-row
    stage = np.empty((dual.nx, g.ny))
    arg1 = np.empty((dual.nx, g.ny), dtype=np.int64)
    for j in range(g.ny):
        stage[:, j], arg1[:, j] = _conjugate_1d(xs, fld.values[:, j], dual_xs)
    # pass 2: conjugate in x2 per y1-column of the partial result
    out = np.empty((dual.nx, dual.ny))
    attained_boundary = np.zeros((dual.nx, dual.ny), dtype=bool)
    for i in range(dual.nx):
        out[i, :], arg2 = _conjugate_1d(ys, -stage[i, :], dual_ys)
        i1 = arg1[i, arg2]
        attained_boundary[i, :] = (
            (arg2 == 0) | (arg2 == g.ny - 1) | (i1 == 0) | (i1 == g.nx - 1)
        )
    return ConjugateResult(
        ScalarField(dual, out), attained_boundary, bool(attained_boundary.any())
    )


def partial_conjugate_n(fld: ScalarField, dual: Grid) -> ScalarField:
    """Per-column conjugate in the last variable:
    (y', y_n) -> sup_t (t y_n - v(y', t)).

    The dual grid's x-axis musture match the primal x-axis (columns carry
    over); its y-axis holds the slope variable y_n.  Columns must be
    discretely convex in the grid direction up to 1e-8.
    """
    g = fld.grid
    if dual.nx != g.nx or abs(dual.xmin - g.xmin) > 1e-12 or abs(dual.xmax - g.xmax) > 1e-12:
        raise ValueError("dual grid must keep the primal y'-axis (columns)")
    ys = g.ys()
    hy2 = g.hy ** 2
    out = np.empty((dual.nx, dual.ny))
    dual_ys = dual.ys()
    for i in range(g.nx):
        col = fld.values[i, :]
        d2 = col[2:] - 2 * col[1:-1] + col[:-2]
        if d2.min() < -1e-8 * hy2:
            raise ConvexityError(
                f"column {i} (y'={g.xs()[i]:.6g}) is non-convex beyond tolerance"
            )
        out[i, :], _ = _conjugate_1d(ys, col, dual_ys)
    return ScalarField(dual, out)


@dataclass(frozen=True)
class PsiField:
    """psi(y', s) samples on a (y', s) grid with s >= 0; k = (n-q)/(q+1)."""

    grid: Grid
    values: np.ndarray = field(repr=False)
    k: float = 1.0

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("k must be positive")
        vals = np.asarray(self.values, dtype=float)
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


def psi_transform(fld: ScalarField, n: int, q: float, dual: Grid) -> PsiField:
    """psi(y', s) = G(y', -s^{2/k}) / (-s^{2/k}) with k = (n-q)/(q+1);
    the s = 0 row comes from two-point linear extrapolation (the limit is the
    free-boundary graph).

    ``dual`` is the (y', s) grid; s must start at 0.
    """
    if n != 2:
        raise ValueError("grid transforms are planar")
    k = (n - q) / (q + 1.0)
    g = fld.grid
    if dual.nx != g.nx or abs(dual.xmin - g.xmin) > 1e-12 or abs(dual.xmax - g.xmax) > 1e-12:
        raise ValueError("dual grid must keep the primal y'-axis (columns)")
    svals = dual.ys()
    if svals[0] < 0 or svals[0] > 1e-14:
        raise ValueError("s-axis must start at 0")
    ys = g.ys()
    hy2 = g.hy ** 2
    psi = np.empty((dual.nx, dual.ny))
    yn = -(svals[1:] ** (2.0 / k))
    for i in range(g.nx):
        col = fld.values[i, :]
        d2 = col[2:] - 2 * col[1:-1] + col[:-2]
        if d2.min() < -1e-8 * hy2:
            raise ConvexityError(
                f"column {i} (y'={g.xs()[i]:.6g}) is non-convex beyond tolerance"
            )
        gvals, _ = _conjugate_1d(ys, col, yn)
        psi[i, 1:] = gvals / yn
        psi[i, 0] = psi[i, 1] - svals[1] * (psi[i, 2] - psi[i, 1]) / (svals[2] - svals[1])
    return PsiField(dual, psi, k)


def psi_residual(psi: PsiField, g, n: int, q: float) -> tuple[ScalarField, np.ndarray]:
    """Centered-difference residual of
    psi_ss + ((k+2)/k) psi_s / s + (1/g) (2/k)^{q+2} (-psi_s/s)^{-q} psi_{y'y'}
    on interior nodes with s > 0.

    ``g`` is a scalar weight or a ScalarField on the psi grid.  Ellipticity
    requires -psi_s/s > 0 at every evaluated node.
    """
    k = psi.k
    gr = psi.grid
    v = psi.values
    hy = gr.hy
    hx = gr.hx
    svals = gr.ys()
    res = np.zeros_like(v)
    mask = interior_mask(gr, 1)
    mask[:, svals <= 0] = False
    psi_ss = np.zeros_like(v)
    psi_s = np.zeros_like(v)
    psi_pp = np.zeros_like(v)
    psi_ss[:, 1:-1] = (v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]) / hy ** 2
    psi_s[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2 * hy)
    psi_pp[1:-1, :] = (v[2:, :] - 2 * v[1:-1, :] + v[:-2, :]) / hx ** 2
    S = np.broadcast_to(svals, v.shape)
    gvals = g.values if isinstance(g, ScalarField) else np.full_like(v, float(g))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = -psi_s / S
    bad = mask & ~(ratio > 0)
    if bad.any():
        nodes = np.argwhere(bad)[:8]
        raise EllipticityError(
            f"psi_s/s >= 0 at nodes {nodes.tolist()} (ellipticity lost)"
        )
    res[mask] = (
        psi_ss[mask]
        + (k + 2.0) / k * psi_s[mask] / S[mask]
        + (2.0 / k) ** (q + 2.0) / gvals[mask] * ratio[mask] ** (-q) * psi_pp[mask]
    )
    return ScalarField(gr, res), mask


def psi_to_csv(psi: PsiField, path_or_buf) -> None:
    X, S = psi.grid.meshgrid()
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    f = open(path_or_buf, "w") if own else path_or_buf
    try:
        f.write(CSV_SCHEMA_LINE + "\n")
        f.write("yprime,s,psi\n")
        for a, b, c in zip(X.ravel(), S.ravel(), psi.values.ravel()):
            f.write(f"{a:.17g},{b:.17g},{c:.17g}\n")
    finally:
        if own:
            f.close()
