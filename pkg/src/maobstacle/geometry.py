"""Planar convex-set primitives: hulls, sections, centered sections,
balanced sets, minimum-area ellipses, and the slice normalization map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage import measure

from .errors import (
    CenteredSectionError,
    DegenerateSetError,
    DomainError,
    NotCompactlyContainedError,
)
from .fields import CSV_SCHEMA_LINE, Grid, ScalarField, bilinear_eval_many


@dataclass(frozen=True)
class ConvexPolygon:
    """Counter-clockwise vertex list; strictly convex after construction."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise DegenerateSetError("polygon needs at least 3 planar vertices")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def diameter(self) -> float:
        v = self.vertices
        d2 = ((v[:, None, :] - v[None, :, :]) ** 2).sum(-1)
        return float(np.sqrt(d2.max()))

    def contains(self, point, tol: float = 1e-12) -> bool:
        p = np.asarray(point, dtype=float)
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        cross = (w[:, 0] - v[:, 0]) * (p[1] - v[:, 1]) - (w[:, 1] - v[:, 1]) * (p[0] - v[:, 0])
        return bool(np.all(cross >= -tol * max(self.diameter, 1.0)))

    def contains_many(self, points, tol: float = 1e-12) -> np.ndarray:
        """Vectorized membership test for an (m, 2) array of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        ex = (w[:, 0] - v[:, 0])[None, :]
        ey = (w[:, 1] - v[:, 1])[None, :]
        cross = ex * (pts[:, 1:2] - v[None, :, 1]) - ey * (pts[:, 0:1] - v[None, :, 0])
        return np.all(cross >= -tol * max(self.diameter, 1.0), axis=1)


@dataclass(frozen=True)
class Section:
    """Sublevel set {v < v(x0) + p.(x - x0) + h} as an extracted polygon."""

    base: tuple
    slope: tuple
    height: float
    region: ConvexPolygon


@dataclass(frozen=True)
class Ellipse:
    """{x : (x - center)^T shape (x - center) <= 1} with shape SPD."""

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        A = np.asarray(self.shape, dtype=float)
        A = 0.5 * (A + A.T)
        ev = np.linalg.eigvalsh(A)
        if ev.min() <= 0:
            raise DegenerateSetError("ellipse shape matrix must be SPD")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", A)

    @property
    def area(self) -> float:
        return float(np.pi / np.sqrt(np.linalg.det(self.shape)))

    def semiaxes(self) -> np.ndarray:
        """Lengths of the semi-axes, descending."""
        ev = np.linalg.eigvalsh(self.shape)
        return np.sort(1.0 / np.sqrt(ev))[::-1]

    def contains(self, point, tol: float = 1e-9) -> bool:
        d = np.asarray(point, dtype=float) - self.center
        return float(d @ self.shape @ d) <= 1.0 + tol


def convex_hull(points) -> ConvexPolygon:
    """Andrew's monotone chain; CCW output, idempotent on hulls."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) < 3:
        raise DegenerateSetError("need at least 3 distinct points")
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(points_iter):
        out = []
        for p in points_iter:
            while len(out) >= 2:
                o, a = out[-2], out[-1]
                if (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0]) <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        raise DegenerateSetError("all points are collinear")
    return ConvexPolygon(hull)


def mass_center(poly: ConvexPolygon) -> np.ndarray:
    """Exact polygon centroid via the shoelace decomposition."""
    v = poly.vertices
    w = np.roll(v, -1, axis=0)
    cross = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
    area = 0.5 * cross.sum()
    if abs(area) < 1e-300:
        raise DegenerateSetError("zero-area polygon has no centroid")
    cx = np.sum((v[:, 0] + w[:, 0]) * cross) / (6.0 * area)
    cy = np.sum((v[:, 1] + w[:, 1]) * cross) / (6.0 * area)
    return np.array([cx, cy])


def _covariance(poly: ConvexPolygon) -> np.ndarray:
    """Second moment matrix of the uniform measure on the polygon."""
    v = poly.vertices
    c = mass_center(poly)
    u = v - c
    w = np.roll(u, -1, axis=0)
    cross = u[:, 0] * w[:, 1] - w[:, 0] * u[:, 1]
    area = 0.5 * cross.sum()
    sxx = np.sum(cross * (u[:, 0] ** 2 + u[:, 0] * w[:, 0] + w[:, 0] ** 2)) / 12.0
    syy = np.sum(cross * (u[:, 1] ** 2 + u[:, 1] * w[:, 1] + w[:, 1] ** 2)) / 12.0
    sxy = np.sum(cross * (2 * u[:, 0] * u[:, 1] + u[:, 0] * w[:, 1] + w[:, 0] * u[:, 1] + 2 * w[:, 0] * w[:, 1])) / 24.0
    return np.array([[sxx, sxy], [sxy, syy]]) / area


def min_area_ellipse(poly: ConvexPolygon, tol: float = 1e-9, max_iter: int = 200000) -> Ellipse:
    """Minimum-area enclosing ellipse by the Khachiyan barycentric iteration
    with Wolfe-Atwood away steps (needed to reach tight tolerances).

    Postconditions checked: all vertices inside; the ellipse shrunk by the
    planar John factor 1/2 about its center lies inside the polygon.
    """
    P = np.asarray(poly.vertices, dtype=float)
    if abs(poly.area) <= 0:
        raise DegenerateSetError("zero-area polygon")
    n, d = P.shape
    Q = np.column_stack([P, np.ones(n)])
    u = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        X = Q.T @ (u[:, None] * Q)
        try:
            Xi = np.linalg.inv(X)
        except np.linalg.LinAlgError:
            raise DegenerateSetError("degenerate point configuration")
        M = np.einsum("ij,jk,ik->i", Q, Xi, Q)
        j_plus = int(np.argmax(M))
        # away step: worst point among those carrying weight
        mask = u > 1e-12 / n
        j_minus = int(np.where(mask)[0][np.argmin(M[mask])])
        eps_plus = M[j_plus] / (d + 1.0) - 1.0
        eps_minus = 1.0 - M[j_minus] / (d + 1.0)
        if max(eps_plus, eps_minus) <= tol:
            break
        if eps_plus >= eps_minus:
            step = (M[j_plus] - d - 1.0) / ((d + 1.0) * (M[j_plus] - 1.0))
            u *= 1.0 - step
            u[j_plus] += step
        else:
            denom = (d + 1.0) * (M[j_minus] - 1.0)
            step = u[j_minus] / (1.0 - u[j_minus]) if u[j_minus] < 1.0 else 0.0
            if denom > 0:
                step = min(step, (d + 1.0 - M[j_minus]) / denom)
            u *= 1.0 + step
            u[j_minus] -= step
            u[j_minus] = max(u[j_minus], 0.0)
            u /= u.sum()
    center = P.T @ u
    cov = P.T @ (u[:, None] * P) - np.outer(center, center)
    A = np.linalg.inv(cov) / d
    ell = Ellipse(center, A)
    margin = 1e-6 * max(poly.diameter, 1.0)
    for vtx in P:
        dd = vtx - ell.center
        if dd @ ell.shape @ dd > 1.0 + 1e-6:
            raise DegenerateSetError("enclosing ellipse failed to contain a vertex")
    # planar John containment of the half-sized ellipse
    v = poly.vertices
    w = np.roll(v, -1, axis=0)
    edges = w - v
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    offsets = np.einsum("ij,ij->i", normals, v)
    Ainv = np.linalg.inv(ell.shape)
    for nrm, off in zip(normals, offsets):
        support = nrm @ ell.center + 0.5 * np.sqrt(nrm @ Ainv @ nrm)
        if support > off + margin:
            raise DegenerateSetError("John containment check failed for the shrunk ellipse")
    return ell


def _contour_of_level(fld: ScalarField, values: np.ndarray, level: float):
    """Marching-squares contours of a node-sampled function at a level."""
    contours = measure.find_contours(values, level)
    g = fld.grid
    out = []
    for c in contours:
        xy = np.column_stack([g.xmin + c[:, 0] * g.hx, g.ymin + c[:, 1] * g.hy])
        closed = np.allclose(c[0], c[-1])
        out.append((xy, closed))
    return out


def sublevel_polygon(
    fld: ScalarField, base, slope, height: float, clip_to_grid: bool = False
) -> Section:
    """Polygon of {v < v(x0) + p.(x - x0) + h}: hull of the marching-squares
    contour of v minus the affine function, with sub-cell interpolation.

    The sublevel set must sit compactly inside the grid unless
    ``clip_to_grid`` is set, in which case boundary nodes below the level
    join the hull.
    """
    g = fld.grid
    base = np.asarray(base, dtype=float)
    slope = np.asarray(slope, dtype=float)
    X, Y = g.meshgrid()
    from .fields import bilinear_eval

    v0 = bilinear_eval(fld, base)
    diff = fld.values - (v0 + slope[0] * (X - base[0]) + slope[1] * (Y - base[1]) + height)
    if not (diff < 0).any():
        raise DegenerateSetError("sublevel set is empty on the grid")
    ring = np.zeros(diff.shape, dtype=bool)
    ring[0, :] = ring[-1, :] = True
    ring[:, 0] = ring[:, -1] = True
    touches = (diff[ring] < 0).any()
    if touches and not clip_to_grid:
        raise NotCompactlyContainedError(
            "sublevel set touches the grid boundary; pass clip_to_grid=True to clip"
        )
    pts = []
    for xy, closed in _contour_of_level(fld, diff, 0.0):
        pts.append(xy)
    if touches:
        pts.append(np.column_stack([X[ring & (diff < 0)], Y[ring & (diff < 0)]]))
    allpts = np.vstack(pts)
    if len(allpts) < 3:
        raise DegenerateSetError("sublevel contour too small to form a polygon")
    poly = convex_hull(allpts)
    return Section(tuple(base), tuple(slope), float(height), poly)


def balanced_kappa(poly: ConvexPolygon, x0) -> float:
    """Largest kappa in [0, 1] with t (x0 - E) inside E - x0 for t <= kappa.

    Exact for polygons: for each vertex w the reflected ray x0 + t (x0 - w)
    leaves E at t equal to the reciprocal gauge of E - x0 at x0 - w.
    """
    x0 = np.asarray(x0, dtype=float)
    if not poly.contains(x0, tol=1e-12):
        raise DomainError("base point lies outside the polygon")
    v = poly.vertices
    edge = np.roll(v, -1, axis=0) - v
    normals = np.column_stack([edge[:, 1], -edge[:, 0]])  # outward for CCW
    offsets = np.einsum("ij,ij->i", normals, v - x0)  # >= 0 for x0 inside
    kappa = np.inf
    for vtx in v:
        dirn = x0 - vtx
        if np.allclose(dirn, 0.0):
            return 0.0
        # x0 + t*dirn stays inside iff n.(t*dirn) <= offset for every edge
        denom = normals @ dirn
        pos = denom > 1e-300
        t_max = np.min(offsets[pos] / denom[pos]) if pos.any() else np.inf
        kappa = min(kappa, t_max)
    return float(min(max(kappa, 0.0), 1.0))


def centered_section(
    fld: ScalarField, x0, h: float, max_iter: int = 500, tol_factor: float = 1e-6
) -> Section:
    """Find the slope p making x0 the barycenter of {v < v(x0)+p.(x-x0)+h}.

    Damped quasi-Newton fixed point p <- p + tau * M^{-1} (x0 - centroid)
    with M the covariance of the current region; tau backtracked in (0, 1].
    """
    x0 = np.asarray(x0, dtype=float)
    sec = None
    # the zero slope may fail containment (sections at a boundary point of an
    # unbounded coincidence set need a tilt); probe a fan of candidate slopes
    candidates = [np.zeros(2)]
    for scale in (0.25 * np.sqrt(h), np.sqrt(h), 2 * np.sqrt(h), 8 * np.sqrt(h)):
        for ang in np.linspace(0, 2 * np.pi, 8, endpoint=False):
            candidates.append(-scale * np.array([np.cos(ang), np.sin(ang)]))
    best = np.inf
    p = None
    for cand in candidates:
        try:
            trial = sublevel_polygon(fld, x0, cand, h)
        except (NotCompactlyContainedError, DegenerateSetError):
            continue
        ct = mass_center(trial.region)
        dist = float(np.linalg.norm(ct - x0))
        if dist < best:
            best, p, sec, c = dist, cand, trial, ct
        if p is not None and np.allclose(cand, 0.0):
            break  # zero slope works; prefer it as the canonical start
    if sec is None:
        raise CenteredSectionError("no candidate slope yields a compactly contained section")
    for _ in range(max_iter):
        diam = sec.region.diameter
        if np.linalg.norm(c - x0) <= tol_factor * diam:
            return sec
        M = _covariance(sec.region)
        try:
            d = np.linalg.solve(M, x0 - c)
        except np.linalg.LinAlgError:
            raise CenteredSectionError("degenerate region covariance")
        tau = 1.0
        while tau > 1e-6:
            try:
                trial = sublevel_polygon(fld, x0, p + tau * d, h)
            except (NotCompactlyContainedError, DegenerateSetError):
                tau *= 0.5
                continue
            ct = mass_center(trial.region)
            if np.linalg.norm(ct - x0) < best:
                p = p + tau * d
                sec, c = trial, ct
                best = float(np.linalg.norm(ct - x0))
                break
            tau *= 0.5
        else:
            raise CenteredSectionError("centered-section iteration failed to contract")
    raise CenteredSectionError("centered-section iteration did not converge in budget")


def normalize_at_boundary_point(fld: ScalarField, K: ConvexPolygon, t: float,
                                reference: Grid = None, n: int = 2, q: float = 0.0):
    """Slice normalization at height t for a frame with 0 on the boundary of K
    and K inside {x2 >= 0}: returns (Dprime, h, normalized field).

    In the plane the slice K'_t is an interval and its 1-D John transform is
    the scalar length Dprime = |K'_t|; h = (t * Dprime)^{2/(n-q)}; the
    normalized field is v_h(x1, x2) = v(Dprime * x1, t * x2) / h resampled on
    the reference grid by bilinear evaluation.
    """
    if t <= 0:
        raise DomainError("slice height t must be positive")
    v = K.vertices
    w = np.roll(v, -1, axis=0)
    xs = []
    for (x1, y1), (x2, y2) in zip(v, w):
        if (y1 - t) * (y2 - t) <= 0 and y1 != y2:
            lam = (t - y1) / (y2 - y1)
            if 0.0 <= lam <= 1.0:
                xs.append(x1 + lam * (x2 - x1))
    if len(xs) < 2:
        raise DegenerateSetError(f"slice of K at height {t} is empty")
    Dprime = float(max(xs) - min(xs))
    if Dprime <= 0:
        raise DegenerateSetError(f"slice of K at height {t} is degenerate")
    h = (t * Dprime) ** (2.0 / (n - q))
    if reference is None:
        reference = Grid(-1.5, 1.5, -0.25, 1.25, 97, 97)
    X, Y = reference.meshgrid()
    vals = bilinear_eval_many(fld, (Dprime * X).ravel(), (t * Y).ravel()).reshape(X.shape)
    return Dprime, h, ScalarField(reference, vals / h)


def polygon_to_csv(poly: ConvexPolygon, path_or_buf) -> None:
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    f = open(path_or_buf, "w") if own else path_or_buf
    try:
        f.write(CSV_SCHEMA_LINE + "\n")
        f.write("x,y\n")
        for x, y in poly.vertices:
            f.write(f"{x:.17g},{y:.17g}\n")
    finally:
        if own:
            f.close()
