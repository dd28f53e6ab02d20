"""Discrete Monge-Ampere determinants and the smoothed right-hand side.

Two discretizations of det D^2 v are provided: a 9-point centered scheme and
a monotone wide-stencil scheme taking the minimum over orthogonal lattice
direction pairs of the product of clamped second differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError
from .fields import Grid, ScalarField, interior_mask, second_difference_array


@dataclass(frozen=True)
class SchemeConfig:
    """Which determinant scheme to use, and how wide the monotone stencil is."""

    scheme: str = "monotone_wide"
    stencil_radius: int = 3

    def __post_init__(self):
        if self.scheme not in ("central", "monotone_wide"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.stencil_radius < 1:
            raise ValueError("stencil_radius must be >= 1")


@lru_cache(maxsize=None)
def direction_pairs(radius: int) -> tuple[tuple[tuple[int, int], tuple[int, int]], ...]:
    """Orthogonal lattice direction pairs (e, e_perp), coprime, max-norm <= radius.

    Each unordered pair appears once; the axis pair comes first.
    """
    dirs = []
    for a in range(-radius, radius + 1):
        for b in range(-radius, radius + 1):
            if (a, b) == (0, 0):
                continue
            if math.gcd(abs(a), abs(b)) != 1:
                continue
            if a < 0 or (a == 0 and b < 0):
                continue
            dirs.append((a, b))
    seen = set()
    pairs = []
    for e in dirs:
        f = (-e[1], e[0])
        if f[0] < 0 or (f[0] == 0 and f[1] < 0):
            f = (-f[0], -f[1])
        if max(abs(f[0]), abs(f[1])) > radius:
            continue
        key = frozenset((e, f))
        if key in seen:
            continue
        seen.add(key)
        pairs.append((e, f))
    pairs.sort(key=lambda p: (max(abs(c) for d in p for c in d), p))
    return tuple(pairs)


@dataclass(frozen=True)
class SmoothedRhs:
    """Smoothed replacement for v^q: two closed-form branches glued by a
    monotone C^1 cubic Hermite bridge on (-eps^3, 0).

    value(t) = (t + eps)^q for t >= 0 and eps^{q+1} for t <= -eps^3.

    ``bridge_width`` (default eps^3) exists for the solver's internal
    continuation only: widening the bridge tames the near-discontinuity at
    small eps; the final solve always uses the default width.
    """

    q: float
    eps: float
    bridge_width: float = None

    def __post_init__(self):
        if self.q < 0:
            raise DomainError("q must be >= 0")
        if not (0.0 < self.eps < 0.5):
            raise DomainError("eps must lie in (0, 1/2)")
        w = self.eps ** 3 if self.bridge_width is None else float(self.bridge_width)
        if w < self.eps ** 3 * (1.0 - 1e-12):
            raise DomainError("bridge_width must be >= eps^3")
        object.__setattr__(self, "bridge_width", w)

    def _bridge_nodes(self):
        v0 = self.eps ** (self.q + 1.0)
        v1 = self.eps ** self.q
        m1 = 0.0 if self.q == 0 else self.q * self.eps ** (self.q - 1.0)
        return self.bridge_width, v0, v1, m1

    def value(self, t):
        t = np.asarray(t, dtype=float)
        q, eps = self.q, self.eps
        d, v0, v1, m1 = self._bridge_nodes()
        out = np.empty_like(t)
        hi = t >= 0.0
        lo = t <= -d
        mid = ~(hi | lo)
        out[hi] = (t[hi] + eps) ** q
        out[lo] = v0
        if mid.any():
            u = (t[mid] + d) / d
            h00 = 2 * u ** 3 - 3 * u ** 2 + 1
            h01 = -2 * u ** 3 + 3 * u ** 2
            h11 = u ** 3 - u ** 2
            out[mid] = h00 * v0 + h01 * v1 + h11 * d * m1
        return out if out.shape else float(out)

    def value_scalar(self, t: float) -> float:
        q, eps = self.q, self.eps
        d, v0, v1, m1 = self._bridge_nodes()
        if t >= 0.0:
            return (t + eps) ** q
        if t <= -d:
            return v0
        u = (t + d) / d
        return (2 * u ** 3 - 3 * u ** 2 + 1) * v0 + (-2 * u ** 3 + 3 * u ** 2) * v1 + (u ** 3 - u ** 2) * d * m1

    def slope(self, t):
        t = np.asarray(t, dtype=float)
        q, eps = self.q, self.eps
        d, v0, v1, m1 = self._bridge_nodes()
        out = np.zeros_like(t)
        hi = t >= 0.0
        mid = (~hi) & (t > -d)
        if q > 0:
            out[hi] = q * (t[hi] + eps) ** (q - 1.0)
        if mid.any():
            u = (t[mid] + d) / d
            dh00 = 6 * u ** 2 - 6 * u
            dh01 = -dh00
            dh11 = 3 * u ** 2 - 2 * u
            out[mid] = (dh00 * v0 + dh01 * v1) / d + dh11 * m1
        return out if out.shape else float(out)

    __call__ = value


def a_eps(rhs: SmoothedRhs, t):
    """Functional form of :meth:`SmoothedRhs.value`."""
    return rhs.value(t)


def hessian_determinant_central(fld: ScalarField) -> tuple[ScalarField, np.ndarray]:
    """v_xx v_yy - v_xy^2 with centered differences on the interior.

    Returns (field, mask); the boundary ring carries the flag value 0 and
    mask False.  Exact for quadratics; invariant under adding affines.
    """
    g = fld.grid
    v = fld.values
    det = np.zeros_like(v)
    hx2, hy2 = g.hx ** 2, g.hy ** 2
    vxx = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / hx2
    vyy = (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / hy2
    vxy = (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (4 * g.hx * g.hy)
    det[1:-1, 1:-1] = vxx * vyy - vxy ** 2
    return ScalarField(g, det), interior_mask(g, 1)


def _check_square_cells(grid: Grid):
    if abs(grid.hx - grid.hy) > 1e-12 * max(grid.hx, grid.hy):
        raise DomainError("monotone wide stencil requires square cells (hx == hy)")


def monotone_ma(fld: ScalarField, cfg: SchemeConfig) -> ScalarField:
    """Monotone determinant: min over orthogonal direction pairs of the
    product of positively-clamped second differences.

    Near the boundary each node uses the pairs whose stencil fits (the axis
    pair always does on the interior); the ring carries 0.
    """
    _check_square_cells(fld.grid)
    best = None
    for e, f in direction_pairs(cfg.stencil_radius):
        da, ma = second_difference_array(fld, e)
        db, mb = second_difference_array(fld, f)
        prod = np.where(ma & mb, np.maximum(da, 0.0) * np.maximum(db, 0.0), np.inf)
        best = prod if best is None else np.minimum(best, prod)
    out = np.where(np.isfinite(best), best, 0.0)
    out[~interior_mask(fld.grid, 1)] = 0.0
    return ScalarField(fld.grid, out)


def monotone_ma_parts(fld: ScalarField, cfg: SchemeConfig):
    """Internal: (ma, active_pair_index, diffs) used by the Newton linearization.

    The value extends the clamped product by the linear negative parts
    min(delta, 0) of both factors, which penalizes concave iterates instead
    of flattening them to zero; on discretely convex fields (in particular at
    any converged solution with positive right-hand side) it coincides with
    :func:`monotone_ma`.  diffs[p] = (delta_e, delta_f, fits) for pair p;
    active_pair_index is the argmin over fitting pairs (-1 outside).
    """
    _check_square_cells(fld.grid)
    pairs = direction_pairs(cfg.stencil_radius)
    stack = np.full((len(pairs),) + fld.values.shape, np.inf)
    diffs = []
    for p, (e, f) in enumerate(pairs):
        da, ma = second_difference_array(fld, e)
        db, mb = second_difference_array(fld, f)
        fits = ma & mb
        stack[p][fits] = (
            np.maximum(da[fits], 0.0) * np.maximum(db[fits], 0.0)
            + np.minimum(da[fits], 0.0)
            + np.minimum(db[fits], 0.0)
        )
        diffs.append((da, db, fits))
    active = np.argmin(stack, axis=0)
    ma_vals = np.take_along_axis(stack, active[None], axis=0)[0]
    inner = interior_mask(fld.grid, 1)
    ma_vals[~inner] = 0.0
    active[~inner] = -1
    return ScalarField(fld.grid, ma_vals), active, diffs


def monotone_ma_frozen(fld: ScalarField, cfg: SchemeConfig, active: np.ndarray):
    """Extended monotone operator with a frozen pair policy.

    Same formula as :func:`monotone_ma_parts` but each node uses the supplied
    pair index instead of the argmin; used by policy iteration.
    """
    _check_square_cells(fld.grid)
    pairs = direction_pairs(cfg.stencil_radius)
    vals = np.zeros_like(fld.values)
    diffs = []
    for p, (e, f) in enumerate(pairs):
        da, ma = second_difference_array(fld, e)
        db, mb = second_difference_array(fld, f)
        diffs.append((da, db, ma & mb))
        sel = active == p
        if sel.any():
            vals[sel] = (
                np.maximum(da[sel], 0.0) * np.maximum(db[sel], 0.0)
                + np.minimum(da[sel], 0.0)
                + np.minimum(db[sel], 0.0)
            )
    return vals, diffs


def ma_apply(fld: ScalarField, cfg: SchemeConfig) -> tuple[ScalarField, np.ndarray]:
    """Dispatch on the configured scheme; returns (values, validity mask)."""
    if cfg.scheme == "central":
        return hessian_determinant_central(fld)
    return monotone_ma(fld, cfg), interior_mask(fld.grid, 1)


def obstacle_residual(
    fld: ScalarField, g: ScalarField, rhs: SmoothedRhs, cfg: SchemeConfig
) -> tuple[ScalarField, np.ndarray]:
    """MA_h(v) - g * a_eps(v) nodewise on the scheme's interior."""
    ma, mask = ma_apply(fld, cfg)
    res = np.zeros_like(fld.values)
    res[mask] = ma.values[mask] - g.values[mask] * rhs.value(fld.values[mask])
    return ScalarField(fld.grid, res), mask
