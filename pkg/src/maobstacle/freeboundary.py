"""Coincidence-set extraction and quantitative free-boundary estimates:
growth exponents along normal rays, dyadic section-ratio fits, and curvature
profiles of the extracted curve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage import measure

from .errors import DegenerateSetError, NotCompactlyContainedError, WindowError
from .fields import CSV_SCHEMA_LINE, ScalarField, bilinear_eval_many
from .geometry import ConvexPolygon, convex_hull, mass_center


@dataclass(frozen=True)
class FreeBoundary:
    coincidence: ConvexPolygon
    curve: np.ndarray  # ordered polyline of the boundary of {v <= tol}
    vertex: np.ndarray  # curve point with minimal x2 (frame anchor)
    tol: float


@dataclass(frozen=True)
class ExponentFit:
    exponent: float
    stderr: float
    window: tuple
    n_points: int

    def __post_init__(self):
        if self.n_points < 4:
            raise WindowError("exponent fits need at least 4 points")
        if not np.isfinite(self.stderr):
            raise WindowError("non-finite fit stderr")


@dataclass(frozen=True)
class GrowthExponent:
    """Median per-ray fit plus envelope fits and the predicted exponent."""

    fit: ExponentFit
    upper: ExponentFit
    lower: ExponentFit
    predicted: float


@dataclass(frozen=True)
class SectionRatioFit:
    """Log-log slice-width slope sigma and the implied Holder pair."""

    sigma: ExponentFit
    alpha_hat: float
    upper_exponent: float
    lower_exponent: float


def default_coincidence_tol(q: float, tol_residual: float, n: int = 2) -> float:
    """Residual-scaled level for {v <= tol}, floored at 1e-9.

    The clamped solver output carries an exact zero set, so the floor rather
    than any grid-scaled term controls the default.
    """
    return max(10.0 * tol_residual ** ((n - q) / (2.0 * n)) * 1e-4, 1e-9)


def coincidence_boundary(
    fld: ScalarField, tol: float = 1e-9, strict: bool = False, linearize_power: float = None
) -> FreeBoundary:
    """Extract {v <= tol}: the free-boundary polyline (longest marching-squares
    contour at the level), the clipped hull of the set, and the lowest curve
    point as frame anchor.

    The set may meet the grid boundary (e.g. an upward-unbounded coincidence
    set of paraboloid type); only the part of its boundary interior to the
    grid is the free boundary.  With ``strict`` the boundary-touching case
    raises instead.

    ``linearize_power``: optional exponent p such that v^p grows linearly off
    the free boundary (p = (n-q)/(n+1) for the model problems); the contour is
    then taken on v^p, which removes the sub-cell interpolation bias of
    root-type growth.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    g = fld.grid
    low = fld.values <= tol
    if not low.any():
        raise DegenerateSetError("coincidence set {v <= tol} is empty")
    ring = np.zeros(low.shape, dtype=bool)
    ring[0, :] = ring[-1, :] = True
    ring[:, 0] = ring[:, -1] = True
    touches = bool((low & ring).any())
    if strict and touches:
        raise NotCompactlyContainedError("coincidence set touches the grid boundary")
    if linearize_power is not None:
        contours = measure.find_contours(fld.values ** linearize_power, tol ** linearize_power)
    else:
        contours = measure.find_contours(fld.values, tol)
    if not contours:
        raise DegenerateSetError("no contour found at the requested level")
    best = max(contours, key=len)
    if len(best) < 4:
        raise DegenerateSetError("contour at the requested level is too short")
    closed = np.allclose(best[0], best[-1])
    pts = best[:-1] if closed else best
    curve = np.column_stack([g.xmin + pts[:, 0] * g.hx, g.ymin + pts[:, 1] * g.hy])
    hull_pts = [curve]
    if touches:
        X, Y = g.meshgrid()
        sel = low & ring
        hull_pts.append(np.column_stack([X[sel], Y[sel]]))
    poly = convex_hull(np.vstack(hull_pts))
    vertex = curve[np.argmin(curve[:, 1])]
    return FreeBoundary(poly, curve, vertex.copy(), float(tol))


def point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=-1)
    t = np.clip(((points - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.linalg.norm(points - proj, axis=-1)


def distance_to_polygon(points, poly: ConvexPolygon) -> np.ndarray:
    """Exact distance from points to the polygon boundary."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    v = poly.vertices
    w = np.roll(v, -1, axis=0)
    d = np.full(len(pts), np.inf)
    for a, b in zip(v, w):
        d = np.minimum(d, point_segment_distance(pts, a, b))
    return d


def hausdorff_distance(curve_a: np.ndarray, curve_b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two polylines (point-segment)."""

    def one_sided(P, Qv):
        Qw = np.roll(Qv, -1, axis=0)[: len(Qv) - 1]
        d = np.full(len(P), np.inf)
        for a, b in zip(Qv[:-1], Qw):
            d = np.minimum(d, point_segment_distance(P, a, b))
        return d.max()

    return float(max(one_sided(curve_a, curve_b), one_sided(curve_b, curve_a)))


def _loglog_fit(xs, ys):
    lx, ly = np.log(xs), np.log(ys)
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, res, _, _ = np.linalg.lstsq(A, ly, rcond=None)
    n = len(xs)
    if n > 2 and res.size:
        sigma2 = res[0] / (n - 2)
        sxx = np.sum((lx - lx.mean()) ** 2)
        stderr = float(np.sqrt(sigma2 / sxx))
    else:
        stderr = 0.0
    return float(coef[0]), stderr


@dataclass(frozen=True)
class ProbeConfig:
    """Ray probes: dyadic distances in [r_min, r_max] along outward normals."""

    n_rays: int = 9
    r_min: float = None
    r_max: float = None
    n_levels: int = 6
    central_halfwidth: float = None  # restrict ray feet to |x1 - vertex| <= this


def _boundary_rays(fb: FreeBoundary, n_rays: int, central_halfwidth):
    curve = fb.curve
    center = mass_center(fb.coincidence)
    if central_halfwidth is not None:
        keep = np.abs(curve[:, 0] - fb.vertex[0]) <= central_halfwidth
        pts = curve[keep]
    else:
        pts = curve
    if len(pts) < n_rays:
        raise WindowError("not enough boundary points for the requested rays")
    idx = np.linspace(0, len(pts) - 1, n_rays).astype(int)
    feet = pts[idx]
    normals = feet - center
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    return feet, normals


def growth_exponent(
    fld: ScalarField,
    fb: FreeBoundary,
    probes: ProbeConfig = ProbeConfig(),
    n: int = 2,
    q: float = 0.0,
):
    """Fit log v against log dist along outward-normal rays from the free
    boundary; returns the median per-ray fit plus envelope fits together with
    the predicted exponent (n+1)/(n-q).
    """
    g = fld.grid
    h = max(g.hx, g.hy)
    r_min = probes.r_min if probes.r_min is not None else 5 * h
    r_max = probes.r_max if probes.r_max is not None else 0.2 * g.diameter
    dists = np.array([r_min * 2.0 ** l for l in range(probes.n_levels)])
    dists = dists[dists <= r_max]
    if len(dists) < 4:
        raise WindowError(
            f"window [{r_min:.3g}, {r_max:.3g}] resolves only {len(dists)} dyadic levels"
        )
    feet, normals = _boundary_rays(fb, probes.n_rays, probes.central_halfwidth)
    slopes = []
    level_vals = [[] for _ in dists]
    for p, nrm in zip(feet, normals):
        xs = p[0] + dists * nrm[0]
        ys = p[1] + dists * nrm[1]
        inside = (
            (xs >= g.xmin) & (xs <= g.xmax) & (ys >= g.ymin) & (ys <= g.ymax)
        )
        if inside.sum() < 4:
            continue
        vals = bilinear_eval_many(fld, xs[inside], ys[inside])
        dd = distance_to_polygon(np.column_stack([xs[inside], ys[inside]]), fb.coincidence)
        ok = vals > 0
        if ok.sum() < 4:
            continue
        s, _ = _loglog_fit(dd[ok], vals[ok])
        slopes.append(s)
        for l, keep in zip(np.nonzero(inside)[0], range(inside.sum())):
            if ok[keep]:
                level_vals[l].append(vals[keep])
    if len(slopes) < 3:
        raise WindowError("fewer than 3 rays produced 4 valid probe distances")
    slopes = np.asarray(slopes)
    med = float(np.median(slopes))
    stderr = float(slopes.std(ddof=1) / np.sqrt(len(slopes)))
    full = [l for l, vs in enumerate(level_vals) if len(vs) == len(slopes)]
    if len(full) < 4:
        full = [l for l, vs in enumerate(level_vals) if len(vs) >= max(2, len(slopes) // 2)]
    if len(full) < 4:
        raise WindowError("fewer than 4 complete dyadic levels for envelope fits")
    dsel = dists[full]
    up, up_e = _loglog_fit(dsel, [max(level_vals[l]) for l in full])
    lo, lo_e = _loglog_fit(dsel, [min(level_vals[l]) for l in full])
    window = (float(dists[0]), float(dists[-1]))
    return GrowthExponent(
        fit=ExponentFit(med, stderr, window, len(slopes)),
        upper=ExponentFit(up, up_e, window, len(full)),
        lower=ExponentFit(lo, lo_e, window, len(full)),
        predicted=predicted_growth_exponent(n, q),
    )


def predicted_growth_exponent(n: int, q: float) -> float:
    return (n + 1.0) / (n - q)


def rotated_graph(fb: FreeBoundary, x0=None):
    """Boundary curve re-expressed as a graph (x', psi(x')) in the frame
    translating x0 (default: the lowest curve point) to the origin and
    rotating the local outward normal to -e2.
    """
    curve = fb.curve
    if x0 is None:
        x0 = fb.vertex
    x0 = np.asarray(x0, dtype=float)
    i0 = int(np.argmin(np.linalg.norm(curve - x0, axis=1)))
    m = len(curve)
    a, b = curve[(i0 - 2) % m], curve[(i0 + 2) % m]
    tangent = b - a
    tangent /= np.linalg.norm(tangent)
    center = mass_center(fb.coincidence)
    normal = np.array([-tangent[1], tangent[0]])
    if normal @ (center - curve[i0]) < 0:
        normal = -normal  # inward (toward K)
    # rotate normal to +e2 so that K lies above
    R = np.array([[normal[1], -normal[0]], [normal[0], normal[1]]])
    rel = (curve - curve[i0]) @ R.T
    order = np.argsort(rel[:, 0])
    xs = rel[order, 0]
    ys = rel[order, 1]
    keep = np.ones(len(xs), dtype=bool)
    # keep the lower branch: for duplicated abscissas keep the smaller height
    seen = {}
    for idx in range(len(xs)):
        key = round(xs[idx], 12)
        if key in seen and ys[seen[key]] <= ys[idx]:
            keep[idx] = False
        else:
            if key in seen:
                keep[seen[key]] = False
            seen[key] = idx
    return xs[keep], ys[keep]


def section_ratio_alpha(fb: FreeBoundary, x0=None, n_levels: int = 4, t_max: float = None):
    """Dyadic slice-width fit of the boundary graph near a boundary point.

    Widths w(t) = |{x' : psi(x') <= t}| at t = t_max / 2^l; sigma is the
    log-log slope, and the implied graph exponent is 1/sigma, giving
    alpha_hat = 1/sigma - 1 clipped to (0, 1].
    """
    xs, ys = rotated_graph(fb, x0)
    ys = ys - ys.min()
    if t_max is None:
        t_max = 0.5 * float(ys.max())
    ts = np.array([t_max / 2.0 ** l for l in range(n_levels)])
    widths = []
    for t in ts:
        sel = ys <= t
        if sel.sum() < 3:
            break
        lo, hi = xs[sel].min(), xs[sel].max()
        widths.append(hi - lo)
    if len(widths) < 4:
        raise WindowError("fewer than 4 resolvable dyadic levels for the slice fit")
    ts = ts[: len(widths)]
    sigma, stderr = _loglog_fit(ts, widths)
    alpha = 1.0 / sigma - 1.0
    alpha_hat = float(min(max(alpha, 1e-6), 1.0))
    fit = ExponentFit(sigma, stderr, (float(ts.min()), float(ts.max())), len(widths))
    return SectionRatioFit(
        sigma=fit,
        alpha_hat=alpha_hat,
        upper_exponent=1.0 + alpha_hat,
        lower_exponent=(1.0 + alpha_hat) / alpha_hat,
    )


def curvature_profile(curve: np.ndarray, spacing: float = None, grid_h: float = None):
    """(arclength, curvature) along a convex polyline via osculating circles
    through triples at a spacing of at least 5 grid cells.
    """
    curve = np.asarray(curve, dtype=float)
    if len(curve) < 7:
        raise DegenerateSetError("curvature profile needs at least 7 points")
    seg = np.linalg.norm(np.diff(curve, axis=0), axis=1)
    arclen = np.concatenate([[0.0], np.cumsum(seg)])
    total = arclen[-1]
    if spacing is None:
        spacing = 5 * grid_h if grid_h is not None else total / 32.0
    spacing = max(spacing, total / (len(curve) - 1))
    m = int(total / spacing)
    if m < 3:
        raise DegenerateSetError("curve too short for the requested spacing")
    s_nodes = np.linspace(0.0, total, m + 1)
    px = np.interp(s_nodes, arclen, curve[:, 0])
    py = np.interp(s_nodes, arclen, curve[:, 1])
    out_s, out_k = [], []
    for i in range(1, m):
        a = np.array([px[i - 1], py[i - 1]])
        b = np.array([px[i], py[i]])
        c = np.array([px[i + 1], py[i + 1]])
        la, lb, lc = np.linalg.norm(b - a), np.linalg.norm(c - b), np.linalg.norm(c - a)
        cross = (b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0]
        if la * lb * lc == 0:
            continue
        out_s.append(s_nodes[i])
        out_k.append(abs(2.0 * cross / (la * lb * lc)))
    return np.asarray(out_s), np.asarray(out_k)


def fits_to_csv(rows, path_or_buf) -> None:
    """rows: iterable of (quantity, estimate, stderr, window_lo, window_hi)."""
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    f = open(path_or_buf, "w") if own else path_or_buf
    try:
        f.write(CSV_SCHEMA_LINE + "\n")
        f.write("quantity,estimate,stderr,window_lo,window_hi\n")
        for name, est, err, lo, hi in rows:
            f.write(f"{name},{est:.17g},{err:.17g},{lo:.17g},{hi:.17g}\n")
    finally:
        if own:
            f.close()
