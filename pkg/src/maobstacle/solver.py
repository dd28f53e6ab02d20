"""Obstacle-problem solver: eps-continuation with damped Newton.

For a decreasing schedule of eps the solver computes the Dirichlet solution
of MA_h(v) = g * a_eps(v), warm-starting each stage from the previous one
(the first from the convex envelope of the boundary data), and finally
clamps at zero from below.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import ConvexHull, QhullError

from .errors import EnvelopeError, SpecError
from .fields import Grid, ScalarField, interior_mask
from .operator import (
    SchemeConfig,
    SmoothedRhs,
    direction_pairs,
    hessian_determinant_central,
    monotone_ma_parts,
)

_JAC_FLOOR = 1e-8  # curvature floor keeping the linearization an M-matrix


@dataclass(frozen=True)
class NewtonParams:
    max_iter: int = 60
    damping_min: float = 2.0 ** -12
    tol_residual: float = 1e-6
    tol_step: float = 1e-12


@dataclass(frozen=True)
class ProblemSpec:
    """One obstacle-problem instance on a 2-D grid."""

    q: float
    grid: Grid
    g: ScalarField
    boundary: ScalarField
    scheme: SchemeConfig = SchemeConfig()
    eps_schedule: tuple = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
    newton: NewtonParams = NewtonParams()
    lam: float = None
    Lam: float = None
    n: int = 2

    def __post_init__(self):
        if self.n != 2:
            raise SpecError("grid solves are 2-D only")
        if not (0 <= self.q < 2):
            raise SpecError(f"q={self.q} outside [0, 2) for grid solves")
        gmin, gmax = float(self.g.values.min()), float(self.g.values.max())
        if gmin <= 0:
            raise SpecError("weight g must be positive")
        lam = gmin if self.lam is None else self.lam
        Lam = gmax if self.Lam is None else self.Lam
        if not (0 < lam <= gmin and gmax <= Lam):
            raise SpecError("weight bounds must satisfy lam <= min g, max g <= Lam")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "Lam", Lam)
        eps = tuple(float(e) for e in self.eps_schedule)
        if any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])):
            raise SpecError("eps_schedule must be strictly decreasing")
        if eps[-1] < 1e-8:
            raise SpecError("final eps must be >= 1e-8")
        object.__setattr__(self, "eps_schedule", eps)
        phi = boundary_ring_values(self.boundary)
        if not np.all(np.isfinite(phi)):
            raise SpecError("boundary data must be finite")
        if phi.min() < 0:
            raise SpecError("boundary data must be >= 0")


@dataclass
class SolveReport:
    solution: ScalarField
    residual_history: list = field(default_factory=list)
    eps_used: list = field(default_factory=list)
    newton_iters: list = field(default_factory=list)
    converged: bool = False
    max_negative_value: float = 0.0

    def as_key_values(self) -> dict:
        return {
            "converged": str(self.converged).lower(),
            "stages": str(len(self.eps_used)),
            "eps_used": ";".join(f"{e:.3e}" for e in self.eps_used),
            "newton_iters": ";".join(str(k) for k in self.newton_iters),
            "final_residual": f"{self.residual_history[-1]:.6e}" if self.residual_history else "nan",
            "max_negative_value": f"{self.max_negative_value:.6e}",
            "min_solution": f"{float(self.solution.values.min()):.6e}",
            "max_solution": f"{float(self.solution.values.max()):.6e}",
        }


def boundary_ring_values(fld: ScalarField) -> np.ndarray:
    v = fld.values
    return np.concatenate([v[0, :], v[-1, :], v[1:-1, 0], v[1:-1, -1]])


def _ring_points(grid: Grid, fld: ScalarField):
    X, Y = grid.meshgrid()
    ring = ~interior_mask(grid, 1)
    return X[ring], Y[ring], fld.values[ring]


def convex_envelope_from_boundary(grid: Grid, boundary: ScalarField) -> ScalarField:
    """Largest convex function below the boundary graph: the discrete det = 0
    Dirichlet solution.  Computed as the max of the lower-hull facet planes of
    the lifted boundary nodes.
    """
    bx, by, bz = _ring_points(grid, boundary)
    pts = np.column_stack([bx, by, bz])
    X, Y = grid.meshgrid()
    span = max(bz.max() - bz.min(), 1.0)
    try:
        hull = ConvexHull(pts)
        eqs = hull.equations  # a x + b y + c z + d = 0, outward normals
        lower = eqs[eqs[:, 2] < -1e-12]
        if len(lower) == 0:
            raise QhullError("no lower facets")
        # z = -(a x + b y + d) / c on each lower facet
        env = np.full(X.shape, -np.inf)
        for k in range(0, len(lower), 64):
            blk = lower[k : k + 64]
            plane = -(
                blk[:, 0][:, None, None] * X[None] + blk[:, 1][:, None, None] * Y[None] + blk[:, 3][:, None, None]
            ) / blk[:, 2][:, None, None]
            env = np.maximum(env, plane.max(axis=0))
    except QhullError:
        # coplanar data: the envelope is the affine interpolant
        A = np.column_stack([bx, by, np.ones_like(bx)])
        coef, res, _, _ = np.linalg.lstsq(A, bz, rcond=None)
        if res.size and res[0] > 1e-18 * max(1.0, span) * len(bz):
            raise EnvelopeError("degenerate boundary data: hull failed and data is not affine")
        env = coef[0] * X + coef[1] * Y + coef[2]
    ring = ~interior_mask(grid, 1)
    mismatch = np.abs(env[ring] - boundary.values[ring]).max()
    if mismatch > 1e-8 * span:
        raise EnvelopeError(
            f"boundary data admits no convex extension (envelope gap {mismatch:.3e})"
        )
    env[ring] = boundary.values[ring]
    return ScalarField(grid, env)


# -- Newton machinery ---------------------------------------------------------


def _flat_index_map(grid: Grid):
    idx = -np.ones((grid.nx, grid.ny), dtype=np.int64)
    inner = interior_mask(grid, 1)
    idx[inner] = np.arange(inner.sum())
    return idx, inner


def _assemble_frozen(fld, cfg, idx, inner, diag_extra, active, diffs):
    """Sparse Jacobian of the frozen-policy monotone operator minus diag(diag_extra)."""
    grid = fld.grid
    pairs = direction_pairs(cfg.stencil_radius)
    rows, cols, vals = [], [], []
    diag = np.zeros(inner.sum())
    II, JJ = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny), indexing="ij")

    def add_direction(sel_i, sel_j, d, weight):
        a, b = d
        e2 = (a * grid.hx) ** 2 + (b * grid.hy) ** 2
        r = idx[sel_i, sel_j]
        for sgn in (1, -1):
            ci, cj = sel_i + sgn * a, sel_j + sgn * b
            c = idx[ci, cj]
            ok = c >= 0
            rows.append(r[ok])
            cols.append(c[ok])
            vals.append(weight[ok] / e2)
        np.add.at(diag, r, -2.0 * weight / e2)

    for p, (e, f) in enumerate(pairs):
        sel = (active == p) & inner
        if not sel.any():
            continue
        si, sj = II[sel], JJ[sel]
        da, db, _ = diffs[p]
        # derivative of da+*db+ + da- + db-: the clamped partner where the
        # factor is convex, the unit slope of the negative part where not
        coef_a = np.where(da[sel] > 0.0, np.maximum(db[sel], _JAC_FLOOR), 1.0)
        coef_b = np.where(db[sel] > 0.0, np.maximum(da[sel], _JAC_FLOOR), 1.0)
        add_direction(si, sj, e, coef_a)
        add_direction(si, sj, f, coef_b)

    ridx = idx[inner]
    np.add.at(diag, ridx, -diag_extra)
    rows.append(ridx)
    cols.append(ridx)
    vals.append(diag[ridx])
    m = inner.sum()
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m)
    )


def _assemble_central(fld, idx, inner, diag_extra):
    grid = fld.grid
    v = fld.values
    hx2, hy2 = grid.hx ** 2, grid.hy ** 2
    cxy = 4 * grid.hx * grid.hy
    vxx = np.zeros_like(v)
    vyy = np.zeros_like(v)
    vxy = np.zeros_like(v)
    vxx[1:-1, 1:-1] = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / hx2
    vyy[1:-1, 1:-1] = (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / hy2
    vxy[1:-1, 1:-1] = (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / cxy
    II, JJ = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny), indexing="ij")
    si, sj = II[inner], JJ[inner]
    r = idx[si, sj]
    a = np.maximum(vyy[si, sj], _JAC_FLOOR)  # coefficient of d(vxx)
    b = np.maximum(vxx[si, sj], _JAC_FLOOR)  # coefficient of d(vyy)
    c = -2.0 * vxy[si, sj]
    rows, cols, vals = [], [], []
    diag = -2.0 * a / hx2 - 2.0 * b / hy2 - diag_extra

    def push(ci, cj, w):
        cc = idx[ci, cj]
        ok = cc >= 0
        rows.append(r[ok])
        cols.append(cc[ok])
        vals.append(w[ok])

    push(si + 1, sj, a / hx2)
    push(si - 1, sj, a / hx2)
    push(si, sj + 1, b / hy2)
    push(si, sj - 1, b / hy2)
    push(si + 1, sj + 1, c / cxy)
    push(si - 1, sj - 1, c / cxy)
    push(si + 1, sj - 1, -c / cxy)
    push(si - 1, sj + 1, -c / cxy)
    rows.append(r)
    cols.append(r)
    vals.append(diag)
    m = inner.sum()
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m)
    )


def _poisson_init(grid: Grid, boundary: ScalarField, f: np.ndarray) -> np.ndarray:
    """Solve Delta u = 2 sqrt(max(f, 0)) with the given Dirichlet data.

    By AM-GM this proxy matches the determinant for isotropic Hessians and
    gives Newton a strictly convex starting iterate (det = 0 starts make the
    linearization singular).
    """
    idx, inner = _flat_index_map(grid)
    m = inner.sum()
    II, JJ = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny), indexing="ij")
    si, sj = II[inner], JJ[inner]
    r = idx[si, sj]
    hx2, hy2 = grid.hx ** 2, grid.hy ** 2
    rows, cols, vals = [r], [r], [np.full(m, -2.0 / hx2 - 2.0 / hy2)]
    rhs = 2.0 * np.sqrt(np.maximum(f[inner], 0.0))
    vb = boundary.values

    def push(ci, cj, w):
        cc = idx[ci, cj]
        ok = cc >= 0
        rows.append(r[ok])
        cols.append(cc[ok])
        vals.append(np.full(ok.sum(), w))
        # ring neighbors move to the right-hand side
        bd = ~ok
        np.add.at(rhs, r[bd], -w * vb[ci[bd], cj[bd]])

    push(si + 1, sj, 1.0 / hx2)
    push(si - 1, sj, 1.0 / hx2)
    push(si, sj + 1, 1.0 / hy2)
    push(si, sj - 1, 1.0 / hy2)
    L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    u = spla.spsolve(L, rhs)
    out = vb.copy()
    out[inner] = u
    return out


def _ma_values(fld, cfg):
    if cfg.scheme == "central":
        det, _ = hessian_determinant_central(fld)
        return det.values
    ma, _, _ = monotone_ma_parts(fld, cfg)
    return ma.values


def _newton_core(vals, inner, residual_fn, jacobian_fn, params, tol):
    """Damped Newton with an l2 merit; convergence judged in the max norm.

    Returns (vals, iters, residuals, converged).
    """
    residuals = []
    F = residual_fn(vals)
    res = np.abs(F).max()
    merit = float(np.linalg.norm(F))
    residuals.append(res)
    cap = 4.0 * max(1.0, float(vals.max() - vals.min()))
    for it in range(params.max_iter):
        if res <= tol:
            return vals, it, residuals, True
        J = jacobian_fn(vals)
        try:
            delta = spla.spsolve(J, -F)
        except RuntimeError:
            return vals, it, residuals, False
        if not np.all(np.isfinite(delta)):
            return vals, it, residuals, False
        step = np.abs(delta).max()
        tau = min(1.0, cap / step) if step > 0 else 1.0
        accepted = False
        while tau >= params.damping_min:
            trial = vals.copy()
            trial[inner] += tau * delta
            Ft = residual_fn(trial)
            mt = float(np.linalg.norm(Ft))
            rt = np.abs(Ft).max()
            if mt < merit * (1.0 - 1e-4 * tau) or rt <= tol:
                vals, F, res, merit = trial, Ft, rt, mt
                accepted = True
                break
            tau *= 0.5
        residuals.append(res)
        if not accepted:
            return vals, it + 1, residuals, res <= tol
        if step * tau <= params.tol_step:
            return vals, it + 1, residuals, res <= tol
    return vals, params.max_iter, residuals, res <= tol


_GS_MAX_SWEEPS = 40
_GS_NODE_BUDGET = 60000


def _gs_finish(vals, spec, rhs_fn, scalar_rhs, inner, tol, max_sweeps=None):
    """Targeted nonlinear Gauss-Seidel on nodes still violating the tolerance.

    The discretization is an M-function system (the operator is monotone and
    the right-hand side nondecreasing in v), so the per-node scalar equation
    is strictly decreasing in the center value and bisection is exact.  This
    resolves interfacial nodes whose root lies inside the microscopically
    thin Hermite bridge, where Newton's kink-crossing steps cycle.

    Returns (vals, sweeps, residual, converged).
    """
    grid = spec.grid
    nx, ny = grid.nx, grid.ny
    pairs = direction_pairs(spec.scheme.stencil_radius)
    pdata = []
    for (a, b), (c, d) in pairs:
        e2a = (a * grid.hx) ** 2 + (b * grid.hy) ** 2
        e2b = (c * grid.hx) ** 2 + (d * grid.hy) ** 2
        pdata.append((a, b, e2a, c, d, e2b))

    def ma_at(v, i, j):
        best = np.inf
        for a, b, e2a, c, d, e2b in pdata:
            if (
                i - abs(a) < 0
                or i + abs(a) >= nx
                or j - abs(b) < 0
                or j + abs(b) >= ny
                or i - abs(c) < 0
                or i + abs(c) >= nx
                or j - abs(d) < 0
                or j + abs(d) >= ny
            ):
                continue
            da = (v[i + a, j + b] - 2.0 * v[i, j] + v[i - a, j - b]) / e2a
            db = (v[i + c, j + d] - 2.0 * v[i, j] + v[i - c, j - d]) / e2b
            val = max(da, 0.0) * max(db, 0.0) + min(da, 0.0) + min(db, 0.0)
            if val < best:
                best = val
        return best

    v = vals.copy()
    work = 0
    res = np.inf
    first_count = None
    if max_sweeps is None:
        max_sweeps = _GS_MAX_SWEEPS
    for sweep in range(max_sweeps):
        fld = ScalarField(grid, v)
        ma, _, _ = monotone_ma_parts(fld, spec.scheme)
        F = ma.values - rhs_fn(v)
        F[~inner] = 0.0
        res = np.abs(F).max()
        if res <= tol:
            return v, sweep, res, True
        stuck = np.argwhere(np.abs(F) > tol)
        if first_count is None:
            first_count = max(len(stuck), 1)
        elif len(stuck) > 6 * first_count:
            # the relaxation is cascading into a global smoother; give up
            return v, sweep, res, False
        work += len(stuck)
        if work > _GS_NODE_BUDGET:
            return v, sweep, res, False
        for i, j in stuck:

            def f(t):
                old = v[i, j]
                v[i, j] = t
                r = ma_at(v, i, j) - scalar_rhs(i, j, t)
                v[i, j] = old
                return r

            scale = max(abs(v[i, j]), 0.25)
            lo, hi = v[i, j] - scale, v[i, j] + scale
            k = 0
            while f(lo) < 0.0 and k < 40:
                lo -= scale
                k += 1
            k = 0
            while f(hi) > 0.0 and k < 40:
                hi += scale
                k += 1
            if f(lo) < 0.0 or f(hi) > 0.0:
                continue
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if mid == lo or mid == hi:
                    break
                if f(mid) > 0.0:
                    lo = mid
                else:
                    hi = mid
            v[i, j] = hi if abs(f(hi)) <= abs(f(lo)) else lo
    fld = ScalarField(grid, v)
    ma, _, _ = monotone_ma_parts(fld, spec.scheme)
    F = ma.values - rhs_fn(v)
    F[~inner] = 0.0
    res = np.abs(F).max()
    return v, max_sweeps, res, res <= tol


def _newton_stage(v, spec, rhs_fn, rhs_slope_fn, params, tol, scalar_rhs=None):
    """One continuation stage: solve MA_h(v) = rhs_fn(v) with the ring fixed.

    The central scheme runs plain damped Newton.  The monotone scheme runs
    policy iteration (freeze the argmin direction pair per node, Newton-solve
    the frozen system, re-minimize) followed, if needed, by the targeted
    Gauss-Seidel finisher.

    Returns (v, iters, residuals, converged).
    """
    grid = spec.grid
    idx, inner = _flat_index_map(grid)

    if spec.scheme.scheme == "central":

        def residual(vals):
            fld = ScalarField(grid, vals)
            return (_ma_values(fld, spec.scheme) - rhs_fn(vals))[inner]

        def jacobian(vals):
            fld = ScalarField(grid, vals)
            return _assemble_central(fld, idx, inner, rhs_slope_fn(vals)[inner])

        return _newton_core(v.copy(), inner, residual, jacobian, params, tol)

    def live(vals):
        fld = ScalarField(grid, vals)
        ma, active, diffs = monotone_ma_parts(fld, spec.scheme)
        return ma.values - rhs_fn(vals), active, diffs, fld

    gate = max(256, 3 * max(grid.nx, grid.ny))

    def newton_run(vals, budget, residuals):
        """Damped live-policy Newton; returns on convergence or stall."""
        Ffull, active, diffs, fld = live(vals)
        F = Ffull[inner]
        res = np.abs(F).max()
        merit = float(np.linalg.norm(F))
        residuals.append(res)
        cap = 4.0 * max(1.0, float(vals.max() - vals.min()))
        for it in range(budget):
            if res <= tol:
                return vals, it, res, True
            J = _assemble_frozen(
                fld, spec.scheme, idx, inner, rhs_slope_fn(vals)[inner], active, diffs
            )
            try:
                delta = spla.spsolve(J, -F)
            except RuntimeError:
                return vals, it, res, False
            if not np.all(np.isfinite(delta)):
                return vals, it, res, False
            step = np.abs(delta).max()
            tau = min(1.0, cap / step) if step > 0 else 1.0
            accepted = False
            while tau >= params.damping_min:
                trial = vals.copy()
                trial[inner] += tau * delta
                Fullt, active_t, diffs_t, fld_t = live(trial)
                Ft = Fullt[inner]
                mt = float(np.linalg.norm(Ft))
                rt = np.abs(Ft).max()
                if mt < merit * (1.0 - 1e-4 * tau) or rt <= tol:
                    vals, F, res, merit = trial, Ft, rt, mt
                    active, diffs, fld = active_t, diffs_t, fld_t
                    accepted = True
                    break
                tau *= 0.5
            residuals.append(res)
            if not accepted or step * tau <= params.tol_step:
                return vals, it + 1, res, res <= tol
        return vals, budget, res, res <= tol

    vals = v.copy()
    residuals = []
    total = 0
    budget = params.max_iter
    cycles = 8 if scalar_rhs is not None else 1
    for cycle in range(cycles):
        vals, its, res, ok = newton_run(vals, budget, residuals)
        total += its
        if ok:
            return vals, total, residuals, True
        if scalar_rhs is None:
            break
        # localized defect: a short placement burst, then Newton re-polish
        stuck = int((np.abs(live(vals)[0])[inner] > tol).sum())
        if stuck > gate:
            break
        vals, sweeps, res, okgs = _gs_finish(
            vals, spec, rhs_fn, scalar_rhs, inner, tol, max_sweeps=3
        )
        total += sweeps
        residuals.append(res)
        if okgs:
            return vals, total, residuals, True
        budget = max(8, params.max_iter // 4)
    return vals, total, residuals, res <= tol


def solve_plain_ma(grid, g_field, boundary, rhs_const, scheme, newton=NewtonParams(), init=None):
    """Dirichlet solve of MA_h(w) = rhs_const * g with no obstacle coupling."""
    spec_like = _BareSpec(grid, scheme)
    target = rhs_const * g_field.values

    def rhs_fn(vals):
        return target

    def rhs_slope_fn(vals):
        return np.zeros_like(vals)

    def scalar_rhs(i, j, t):
        return target[i, j]

    v0 = _poisson_init(grid, boundary, target) if init is None else init.copy()
    vals, _, _, ok = _newton_stage(
        v0, spec_like, rhs_fn, rhs_slope_fn, newton, newton.tol_residual, scalar_rhs=scalar_rhs
    )
    if not ok:
        raise RuntimeError("plain Monge-Ampere solve failed to converge")
    return ScalarField(grid, vals)


@dataclass(frozen=True)
class _BareSpec:
    grid: Grid
    scheme: SchemeConfig


def initial_bracket(spec: ProblemSpec) -> tuple[ScalarField, ScalarField]:
    """(lower, upper): upper solves det = 0 (convex envelope of the data),
    lower solves det = sup(phi)^q * g, both with the spec's boundary values.
    """
    upper = convex_envelope_from_boundary(spec.grid, spec.boundary)
    phi_max = float(boundary_ring_values(spec.boundary).max())
    rhs_const = phi_max ** spec.q if phi_max > 0 else (1.0 if spec.q == 0 else 0.0)
    if rhs_const == 0.0:
        lower = upper
    else:
        lower = solve_plain_ma(spec.grid, spec.g, spec.boundary, rhs_const, spec.scheme, spec.newton)
    gap = (lower.values - upper.values).max()
    if gap > 1e-7:
        raise EnvelopeError(f"bracket ordering violated by {gap:.3e}")
    return lower, upper


def solve(spec: ProblemSpec) -> SolveReport:
    """Continuation solve of det D^2 v = g v^q chi_{v>0}, v >= 0, v = phi on
    the boundary ring; the report records per-stage Newton behavior.
    """
    grid = spec.grid
    phi = boundary_ring_values(spec.boundary)
    if float(phi.max()) == 0.0:
        zero = ScalarField(grid, np.zeros((grid.nx, grid.ny)))
        return SolveReport(
            solution=zero,
            residual_history=[0.0],
            eps_used=list(spec.eps_schedule),
            newton_iters=[0] * len(spec.eps_schedule),
            converged=True,
            max_negative_value=0.0,
        )

    _, upper = initial_bracket(spec)
    # The det = 0 upper bracket makes the first linearization singular, so the
    # first stage warm-starts from the Poisson proxy of its right-hand side.
    rhs0 = SmoothedRhs(q=spec.q, eps=spec.eps_schedule[0])
    vals = _poisson_init(grid, spec.boundary, spec.g.values * rhs0.value(upper.values))
    report = SolveReport(solution=upper)
    gv = spec.g.values

    def run_width(v0, eps, tol, width, allow_gs):
        rhs = SmoothedRhs(q=spec.q, eps=eps, bridge_width=width)

        def rhs_fn(v):
            return gv * rhs.value(v)

        def rhs_slope_fn(v):
            return gv * rhs.slope(v)

        def scalar_rhs(i, j, t):
            return gv[i, j] * rhs.value_scalar(t)

        return _newton_stage(
            v0, spec, rhs_fn, rhs_slope_fn, spec.newton, tol,
            scalar_rhs=scalar_rhs if allow_gs else None,
        )

    def run_stage(v0, eps, tol, eps_prev, final):
        """One eps stage, warm-started by rescaling the negative dip (which
        scales like eps^{(q+1)/2}).

        Intermediate stages are continuation machinery: they solve with the
        Hermite bridge widened to a resolvable floor, which leaves the exact
        microscopic eps^3 bridge (numerically a jump at small eps) to the
        final stage, where damped Newton alternates with the Gauss-Seidel
        finisher on the interfacial nodes.
        """
        vals = v0
        if eps_prev is not None:
            ratio = (eps / eps_prev) ** ((spec.q + 1.0) / 2.0)
            vals = np.where(vals < 0.0, vals * ratio, vals)
        eps3 = eps ** 3
        dip = abs(min(float(vals.min()), 0.0))
        w_mid = max(eps3, min(1e-3, 0.125 * dip))
        total = 0
        residuals = []
        if not final:
            vals, iters, hist, ok = run_width(vals, eps, tol, w_mid, allow_gs=True)
            return vals, iters, hist, ok
        if w_mid > eps3 * 1.001:
            vals, iters, hist, ok = run_width(vals, eps, max(tol, 1e-5), w_mid, allow_gs=False)
            total += iters
            residuals.extend(hist)
            if not ok:
                return vals, total, residuals, False
        floor = max(eps3, 1e-6)
        if floor < w_mid / 1.001 and floor > eps3 * 1.001:
            vals, iters, hist, ok = run_width(vals, eps, max(tol, 1e-5), floor, allow_gs=True)
            total += iters
            residuals.extend(hist)
        vals, iters, hist, ok = run_width(vals, eps, tol, eps3, allow_gs=True)
        total += iters
        residuals.extend(hist)
        return vals, total, residuals, ok

    converged = True
    eps_prev = None
    total_stages = 0
    for k, eps_target in enumerate(spec.eps_schedule):
        last = k == len(spec.eps_schedule) - 1
        tol = spec.newton.tol_residual if last else max(spec.newton.tol_residual, 1e-4)
        pending = [eps_target]
        while pending and total_stages < 64:
            eps_now = pending[-1]
            trial, iters, residuals, ok = run_stage(
                vals.copy(), eps_now, tol, eps_prev, final=last and eps_now == eps_target
            )
            total_stages += 1
            if ok:
                vals = trial
                eps_prev = eps_now
                pending.pop()
                report.eps_used.append(eps_now)
                report.newton_iters.append(iters)
                report.residual_history.extend(residuals)
                continue
            # continuation step too aggressive: insert a geometric midpoint
            if eps_prev is None:
                converged = False
                report.eps_used.append(eps_now)
                report.newton_iters.append(iters)
                report.residual_history.extend(residuals)
                break
            mid = float(np.sqrt(eps_prev * eps_now))
            if mid <= eps_now * 1.05:
                converged = False
                report.eps_used.append(eps_now)
                report.newton_iters.append(iters)
                report.residual_history.extend(residuals)
                break
            pending.append(mid)
        if not converged or total_stages >= 64:
            converged = converged and not pending
            break
    report.max_negative_value = float(min(vals.min(), 0.0))
    report.solution = ScalarField(grid, np.maximum(vals, 0.0))
    report.converged = converged
    return report
