"""Executable checks of the structural inequalities on exact and solved
fields: comparison, the maximum-principle ratio, section volume laws, the
interior second-derivative bound, and gradient growth bands.

Universal constants are never asserted numerically; the checks assert
exponents, positivity, ordering, and refinement stability, and record
measured statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, WindowError
from .fields import CSV_SCHEMA_LINE, Grid, ScalarField, interior_mask
from .freeboundary import (
    FreeBoundary,
    ProbeConfig,
    _loglog_fit,
    distance_to_polygon,
    growth_exponent,
)
from .geometry import ConvexPolygon, centered_section, mass_center, sublevel_polygon
from .operator import hessian_determinant_central
from .solver import ProblemSpec, solve


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    statistic: float
    threshold: float
    details: str = ""


def check_comparison(spec: ProblemSpec, phi_low: ScalarField, phi_high: ScalarField) -> CheckReport:
    """Ordered boundary data must give ordered solutions (within 1e-8)."""
    lo = np.asarray(phi_low.values)
    hi = np.asarray(phi_high.values)
    ring = ~interior_mask(spec.grid, 1)
    if (lo[ring] > hi[ring] + 1e-14).any():
        raise DomainError("phi_low must not exceed phi_high on the boundary")
    rep_lo = solve(replace(spec, boundary=phi_low))
    rep_hi = solve(replace(spec, boundary=phi_high))
    if not (rep_lo.converged and rep_hi.converged):
        return CheckReport(
            "comparison", False, np.nan, 1e-8, "inconclusive: a solve did not converge"
        )
    gap = float((rep_lo.solution.values - rep_hi.solution.values).max())
    return CheckReport("comparison", gap <= 1e-8, gap, 1e-8, "max(v_low - v_high)")


def aleksandrov_ratio_field(fld: ScalarField, omega: ConvexPolygon, mass: float = None):
    """Nodewise |w| / (diam^{n-1} dist(x, boundary) mass)^{1/n} inside omega.

    ``mass`` defaults to the discrete Monge-Ampere mass (sum of the central
    determinant times cell area over interior nodes of omega).
    """
    g = fld.grid
    X, Y = g.meshgrid()
    pts = np.column_stack([X.ravel(), Y.ravel()])
    inside = omega.contains_many(pts, tol=-1e-12).reshape(X.shape)
    inside &= interior_mask(g, 1)
    if (fld.values[inside] > 1e-12).any():
        raise DomainError("field must be <= 0 inside the polygon")
    if mass is None:
        det, dmask = hessian_determinant_central(fld)
        cell = g.hx * g.hy
        mass = float(det.values[inside & dmask].sum() * cell)
    dist = distance_to_polygon(pts, omega).reshape(X.shape)
    diam = omega.diameter
    denom = (diam * dist * max(mass, 1e-300)) ** 0.5  # n = 2
    ratio = np.zeros_like(fld.values)
    ok = inside & (denom > 0)
    ratio[ok] = np.abs(fld.values[ok]) / denom[ok]
    return ratio, inside, mass


def aleksandrov_ratio(fld: ScalarField, omega: ConvexPolygon, mass: float = None) -> CheckReport:
    """Maximum-principle ratio check with a conservative planar threshold 1.0.

    The dimensional constant is unspecified; the report records the measured
    maximum ratio rather than fixing the constant.
    """
    ratio, inside, mass_used = aleksandrov_ratio_field(fld, omega, mass)
    if not inside.any():
        return CheckReport("aleksandrov_ratio", True, 0.0, 1.0, "vacuous: no interior nodes")
    stat = float(ratio[inside].max())
    if np.abs(fld.values[inside]).max() == 0.0:
        return CheckReport("aleksandrov_ratio", True, 0.0, 1.0, "vacuous: zero field")
    return CheckReport(
        "aleksandrov_ratio", stat <= 1.0, stat, 1.0, f"mass={mass_used:.6g}"
    )


def volume_scaling(
    fld: ScalarField, heights, n: int = 2, q: float = 0.0, x0=(0.0, 0.0)
) -> CheckReport:
    """Log-log slope of centered-section area against height: the two-sided
    volume law predicts exponent (n - q) / 2 (tolerance 0.15).
    """
    areas = []
    used = []
    for h in heights:
        try:
            sec = centered_section(fld, x0, h)
        except Exception:
            continue
        areas.append(sec.region.area)
        used.append(h)
    if len(used) < 4:
        raise WindowError("fewer than 4 heights produced centered sections")
    slope, stderr = _loglog_fit(np.asarray(used), np.asarray(areas))
    target = (n - q) / 2.0
    return CheckReport(
        "volume_scaling",
        abs(slope - target) <= 0.15,
        slope,
        target,
        f"stderr={stderr:.3g} heights={len(used)}",
    )


def section_product(
    fld: ScalarField, heights, g=1.0, q: float = 0.0, x0=(0.0, 0.0), slope=(0.0, 0.0)
) -> CheckReport:
    """min over h of mass(S_h) * area(S_h) / h^2 with mass = integral of
    g v^q over the section; positivity (>= 0.1) is the testable content.
    """
    grid = fld.grid
    X, Y = grid.meshgrid()
    cell = grid.hx * grid.hy
    gv = g.values if isinstance(g, ScalarField) else np.full_like(fld.values, float(g))
    ratios = []
    for h in heights:
        sec = sublevel_polygon(fld, x0, slope, h)
        pts = np.column_stack([X.ravel(), Y.ravel()])
        inside = sec.region.contains_many(pts).reshape(X.shape)
        vq = np.where(fld.values > 0, fld.values, 0.0) ** q if q > 0 else np.ones_like(fld.values)
        mass = float((gv * vq)[inside].sum() * cell)
        ratios.append(mass * sec.region.area / h ** 2)
    stat = float(min(ratios))
    spread = float(max(ratios) / max(min(ratios), 1e-300))
    return CheckReport(
        "section_product",
        stat >= 0.1,
        stat,
        0.1,
        f"spread={spread:.3g} ratios={[round(r, 4) for r in ratios]}",
    )


def pogorelov_sup(u: ScalarField, c1: float, refine_stride: int = 2) -> CheckReport:
    """sup over {w < 0} (shrunk by a 3h collar) of (-w) |D^2 w|_2 for
    w = u + c1 * y_n; stability is judged against a strided subsample.
    """

    def statistic(fld: ScalarField) -> float:
        g = fld.grid
        X, Y = g.meshgrid()
        w = fld.values + c1 * Y
        neg = w < 0
        if not neg.any():
            raise DomainError("section {u + c1 y_n < 0} is empty")
        hx2, hy2 = g.hx ** 2, g.hy ** 2
        wxx = np.zeros_like(w)
        wyy = np.zeros_like(w)
        wxy = np.zeros_like(w)
        wxx[1:-1, 1:-1] = (w[2:, 1:-1] - 2 * w[1:-1, 1:-1] + w[:-2, 1:-1]) / hx2
        wyy[1:-1, 1:-1] = (w[1:-1, 2:] - 2 * w[1:-1, 1:-1] + w[1:-1, :-2]) / hy2
        wxy[1:-1, 1:-1] = (w[2:, 2:] - w[2:, :-2] - w[:-2, 2:] + w[:-2, :-2]) / (4 * g.hx * g.hy)
        # spectral norm of the symmetric 2x2 Hessian
        tr = 0.5 * (wxx + wyy)
        dev = np.sqrt(0.25 * (wxx - wyy) ** 2 + wxy ** 2)
        norm = np.maximum(np.abs(tr + dev), np.abs(tr - dev))
        ok = neg.copy()
        for shift in range(1, 4):
            ok[shift:, :] &= neg[:-shift, :]
            ok[:-shift, :] &= neg[shift:, :]
            ok[:, shift:] &= neg[:, :-shift]
            ok[:, :-shift] &= neg[:, shift:]
        ok &= interior_mask(g, 3)
        if not ok.any():
            raise DomainError("section empties out after the 3h collar")
        return float(((-w) * norm)[ok].max())

    full = statistic(u)
    g = u.grid
    coarse_grid = Grid(
        g.xmin,
        g.xmin + g.hx * refine_stride * ((g.nx - 1) // refine_stride),
        g.ymin,
        g.ymin + g.hy * refine_stride * ((g.ny - 1) // refine_stride),
        (g.nx - 1) // refine_stride + 1,
        (g.ny - 1) // refine_stride + 1,
    )
    coarse = ScalarField(
        coarse_grid, u.values[:: refine_stride, :: refine_stride][: coarse_grid.nx, : coarse_grid.ny]
    )
    half = statistic(coarse)
    rel = abs(full - half) / max(abs(full), 1e-300)
    passed = np.isfinite(full) and rel <= 0.2
    return CheckReport(
        "pogorelov_sup", passed, full, 0.2, f"coarse={half:.6g} rel_change={rel:.3g}"
    )


def lipschitz_and_gradient_band(
    fld: ScalarField,
    fb: FreeBoundary,
    probes: ProbeConfig = ProbeConfig(),
    n: int = 2,
    q: float = 0.0,
) -> CheckReport:
    """Fits of log |grad v| against log dist along normal rays.

    Passes iff both envelope slopes are positive (the gradient vanishes on
    approach to the coincidence set) and the lower-envelope slope is at least
    the upper one minus 0.1 (band consistency).
    """
    from .fields import gradient_central

    gx, gy = gradient_central(fld)
    gnorm = ScalarField(fld.grid, np.hypot(gx, gy) + 1e-300)
    ge = growth_exponent(gnorm, fb, probes, n=n, q=q)
    up, lo = ge.upper.exponent, ge.lower.exponent
    passed = up > 0 and lo > 0 and lo >= up - 0.1
    return CheckReport(
        "gradient_band",
        bool(passed),
        ge.fit.exponent,
        (n + 1.0) / (n - q) - 1.0,
        f"upper={up:.4f} lower={lo:.4f}",
    )


def checks_to_csv(reports, path_or_buf) -> None:
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    f = open(path_or_buf, "w") if own else path_or_buf
    try:
        f.write(CSV_SCHEMA_LINE + "\n")
        f.write("name,passed,statistic,threshold\n")
        for r in reports:
            f.write(f"{r.name},{str(r.passed).lower()},{r.statistic:.17g},{r.threshold:.17g}\n")
    finally:
        if own:
            f.close()


def checks_report_text(reports) -> str:
    lines = []
    for r in reports:
        lines.append(f"check={r.name}")
        lines.append(f"  passed={str(r.passed).lower()}")
        lines.append(f"  statistic={r.statistic:.10g}")
        lines.append(f"  threshold={r.threshold:.10g}")
        if r.details:
            lines.append(f"  details={r.details}")
    return "\n".join(lines) + "\n"
