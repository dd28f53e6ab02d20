"""Closed-form reference solutions of det D^2 v = g v^q chi_{v>0}, v >= 0.

These provide oracle values, boundary-data generators, and manufactured
problems for the grid solver.  Gradients and Hessians are analytic (chain
rule on the closed forms), never obtained by differencing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad

from .errors import DomainError, ExistenceRadiusError


def paraboloid_coefficient(n: int, q: float) -> float:
    """Coefficient c making c * max(|x'|^2/2 - x_n, 0)^((n+1)/(n-q)) a solution.

    c = (n-q)^{(n+1)/(n-q)} / ( (n+1)^{n/(n-q)} (q+1)^{1/(n-q)} ).
    """
    if n < 2:
        raise DomainError("dimension n must be >= 2")
    if not (0 <= q < n):
        raise DomainError(f"exponent q={q} outside [0, n)")
    m = n - q
    return float(m ** ((n + 1) / m) / ((n + 1) ** (n / m) * (q + 1) ** (1 / m)))


def paraboloid_value(n: int, q: float, x) -> float:
    x = np.asarray(x, dtype=float)
    c = paraboloid_coefficient(n, q)
    w = 0.5 * np.dot(x[:-1], x[:-1]) - x[-1]
    if w <= 0.0:
        return 0.0
    return float(c * w ** ((n + 1) / (n - q)))


def paraboloid_gradient(n: int, q: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    c = paraboloid_coefficient(n, q)
    beta = (n + 1) / (n - q)
    w = 0.5 * np.dot(x[:-1], x[:-1]) - x[-1]
    g = np.zeros_like(x)
    if w <= 0.0:
        return g
    dw = np.concatenate([x[:-1], [-1.0]])
    return c * beta * w ** (beta - 1) * dw


def paraboloid_hessian(n: int, q: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    c = paraboloid_coefficient(n, q)
    beta = (n + 1) / (n - q)
    w = 0.5 * np.dot(x[:-1], x[:-1]) - x[-1]
    H = np.zeros((len(x), len(x)))
    if w <= 0.0:
        return H
    dw = np.concatenate([x[:-1], [-1.0]])
    H += c * beta * (beta - 1) * w ** (beta - 2) * np.outer(dw, dw)
    d2w = np.eye(len(x))
    d2w[-1, -1] = 0.0
    H += c * beta * w ** (beta - 1) * d2w
    return H


# -- radial solution for q = 0 (coincidence set = unit ball) -----------------


def _radial_profile(n: int, rho: float) -> float:
    """integral_0^rho max(r^n - 1, 0)^{1/n} dr by adaptive quadrature.

    The integrand behaves like (r-1)^{1/n} at r = 1; the substitution
    r = 1 + tau^{n/(n+1)} removes the one-sided singularity.
    """
    if rho <= 1.0:
        return 0.0
    p = n / (n + 1.0)

    def integrand(tau):
        r = 1.0 + tau ** p
        return (r ** n - 1.0) ** (1.0 / n) * p * tau ** (p - 1.0)

    tmax = (rho - 1.0) ** (1.0 / p)
    val, _ = quad(integrand, 0.0, tmax, epsabs=1e-12, epsrel=1e-12, limit=200)
    return float(val)


def radial_q0_value(n: int, x) -> float:
    x = np.asarray(x, dtype=float)
    return _radial_profile(n, float(np.linalg.norm(x)))


def radial_q0_slope(n: int, rho: float) -> float:
    """Radial derivative max(rho^n - 1, 0)^{1/n}."""
    if rho <= 1.0:
        return 0.0
    return float((rho ** n - 1.0) ** (1.0 / n))


def radial_q0_gradient(n: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    rho = float(np.linalg.norm(x))
    if rho <= 1.0:
        return np.zeros_like(x)
    return radial_q0_slope(n, rho) * x / rho


def radial_q0_hessian(n: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = len(x)
    rho = float(np.linalg.norm(x))
    if rho <= 1.0:
        return np.zeros((d, d))
    vp = radial_q0_slope(n, rho)
    vpp = rho ** (n - 1) * (rho ** n - 1.0) ** (1.0 / n - 1.0)
    rhat = x / rho
    P = np.outer(rhat, rhat)
    return vpp * P + (vp / rho) * (np.eye(d) - P)


# -- non-strictly-convex 2-D example built from an ODE profile ---------------


@dataclass
class ZetaProfile:
    """Profile zeta(t) with alpha(1+alpha) zeta zeta'' - (1+alpha)^2 zeta'^2
    = (1 + |t|^alpha zeta)^{2 alpha}, zeta(0) = 1, zeta'(0) = 0.

    Integrated by classical RK4 with a fixed step; even in t.  The validated
    radius is the largest |t| reached before positivity or convexity of zeta
    would fail numerically (the solution blows up in finite time).
    """

    alpha: float
    step: float = 2e-5
    tmax: float = 4.0
    ts: np.ndarray = field(default=None, repr=False)
    zs: np.ndarray = field(default=None, repr=False)
    dzs: np.ndarray = field(default=None, repr=False)
    radius: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise DomainError("alpha must lie in (0, 1)")
        if self.step > 1e-4:
            raise ValueError("ODE step must be <= 1e-4")
        self._integrate()

    def rhs(self, t, y):
        z, dz = y
        num = (1.0 + self.alpha) ** 2 * dz * dz + (1.0 + abs(t) ** self.alpha * z) ** (2 * self.alpha)
        return np.array([dz, num / (self.alpha * (1.0 + self.alpha) * z)])

    def _integrate(self):
        h = self.step
        nmax = int(self.tmax / h) + 1
        ts = np.empty(nmax + 1)
        zs = np.empty(nmax + 1)
        dzs = np.empty(nmax + 1)
        t, y = 0.0, np.array([1.0, 0.0])
        ts[0], zs[0], dzs[0] = t, y[0], y[1]
        m = 0
        for i in range(nmax):
            k1 = self.rhs(t, y)
            k2 = self.rhs(t + h / 2, y + h / 2 * k1)
            k3 = self.rhs(t + h / 2, y + h / 2 * k2)
            k4 = self.rhs(t + h, y + h * k3)
            ynew = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            tnew = t + h
            if not np.all(np.isfinite(ynew)) or ynew[0] <= 0.0 or ynew[0] > 1e8:
                break
            curv = self.rhs(tnew, ynew)[1]
            if not np.isfinite(curv) or curv <= 0.0:
                break
            t, y = tnew, ynew
            m = i + 1
            ts[m], zs[m], dzs[m] = t, y[0], y[1]
        self.ts = ts[: m + 1]
        self.zs = zs[: m + 1]
        self.dzs = dzs[: m + 1]
        self.radius = float(self.ts[-1])

    def value(self, t: float) -> float:
        at = abs(t)
        if at > self.radius:
            raise ExistenceRadiusError(f"|t|={at} beyond validated radius {self.radius}")
        return float(np.interp(at, self.ts, self.zs))

    def derivative(self, t: float) -> float:
        at = abs(t)
        if at > self.radius:
            raise ExistenceRadiusError(f"|t|={at} beyond validated radius {self.radius}")
        return float(np.sign(t) * np.interp(at, self.ts, self.dzs))

    def second_derivative(self, t: float) -> float:
        return float(self.rhs(abs(t), [self.value(t), abs(self.derivative(t))])[1])


_ZETA_CACHE: dict[float, ZetaProfile] = {}


def zeta_profile(q: float) -> ZetaProfile:
    if not (0.0 < q < 2.0):
        raise DomainError("nsc example requires q in (0, 2)")
    key = round(q, 12)
    if key not in _ZETA_CACHE:
        _ZETA_CACHE[key] = ZetaProfile(alpha=q / 2.0)
    return _ZETA_CACHE[key]


def nsc_example_value(q: float, x) -> float:
    """Lipschitz non-strictly-convex local solution: zero on {x2 <= 0}."""
    zp = zeta_profile(q)
    a = q / 2.0
    y = max(float(x[1]), 0.0)
    if y == 0.0:
        # still validate the requested abscissa
        zp.value(float(x[0]))
        return 0.0
    return y + y ** (1.0 + a) * zp.value(float(x[0]))


def nsc_example_gradient(q: float, x) -> np.ndarray:
    zp = zeta_profile(q)
    a = q / 2.0
    t, y = float(x[0]), float(x[1])
    if y <= 0.0:
        zp.value(t)
        return np.zeros(2)
    return np.array(
        [
            y ** (1.0 + a) * zp.derivative(t),
            1.0 + (1.0 + a) * y ** a * zp.value(t),
        ]
    )


def nsc_example_hessian(q: float, x) -> np.ndarray:
    zp = zeta_profile(q)
    a = q / 2.0
    t, y = float(x[0]), float(x[1])
    if y <= 0.0:
        zp.value(t)
        return np.zeros((2, 2))
    z, dz, d2z = zp.value(t), zp.derivative(t), zp.second_derivative(t)
    return np.array(
        [
            [y ** (1.0 + a) * d2z, (1.0 + a) * y ** a * dz],
            [(1.0 + a) * y ** a * dz, a * (1.0 + a) * y ** (a - 1.0) * z],
        ]
    )


def nsc_effective_weight(q: float, x) -> float:
    """Weight g(x) under which the composite solves det D^2 w = g w^q exactly.

    Equals ((1 + |x1|^a zeta(x1)) / (1 + x2^a zeta(x1)))^{2a} on {x2 > 0};
    bounded, positive, and -> 1 at the origin.
    """
    zp = zeta_profile(q)
    a = q / 2.0
    t, y = float(x[0]), float(x[1])
    z = zp.value(t)
    if y <= 0.0:
        return 1.0
    return float(((1.0 + abs(t) ** a * z) / (1.0 + y ** a * z)) ** (2.0 * a))


# -- the exact-solution carrier with affine equivalence -----------------------

_KINDS = ("paraboloid", "radial_q0", "quadratic", "nsc_example")


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form solution with analytic value/gradient/Hessian.

    An optional affine map (A, b) realizes u(x) = |det A|^{-2/n} base(Ax + b).
    For q > 0 a non-unimodular A rescales the constant weight: the carried
    solution satisfies det D^2 u = weight_scale * u^q where it is smooth.
    """

    kind: str
    n: int
    q: float
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DomainError(f"unknown solution kind {self.kind!r}")
        if self.kind == "radial_q0" and self.q != 0:
            raise DomainError("radial_q0 requires q = 0")
        if self.kind == "paraboloid" and not (0 <= self.q < self.n):
            raise DomainError("paraboloid requires 0 <= q < n")
        if self.A is not None:
            A = np.asarray(self.A, dtype=float)
            if abs(np.linalg.det(A)) < 1e-14:
                raise DomainError("affine matrix must be invertible")
            object.__setattr__(self, "A", A)
            b = np.zeros(self.n) if self.b is None else np.asarray(self.b, dtype=float)
            object.__setattr__(self, "b", b)

    # constructors
    @classmethod
    def paraboloid(cls, n: int, q: float) -> "ExactSolution":
        paraboloid_coefficient(n, q)
        return cls("paraboloid", n, q)

    @classmethod
    def radial_q0(cls, n: int) -> "ExactSolution":
        return cls("radial_q0", n, 0.0)

    @classmethod
    def quadratic(cls, n: int) -> "ExactSolution":
        return cls("quadratic", n, 0.0)

    @classmethod
    def nsc_example(cls, q: float) -> "ExactSolution":
        zeta_profile(q)
        return cls("nsc_example", 2, q)

    @property
    def weight_scale(self) -> float:
        if self.A is None or self.q == 0:
            return 1.0
        return float(abs(np.linalg.det(self.A)) ** (2.0 * self.q / self.n))

    def _map(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.A is None:
            return x
        return self.A @ x + self.b

    def _scale(self) -> float:
        if self.A is None:
            return 1.0
        return float(abs(np.linalg.det(self.A)) ** (-2.0 / self.n))

    def _base_value(self, z) -> float:
        if self.kind == "paraboloid":
            return paraboloid_value(self.n, self.q, z)
        if self.kind == "radial_q0":
            return radial_q0_value(self.n, z)
        if self.kind == "quadratic":
            return 0.5 * float(np.dot(z, z))
        return nsc_example_value(self.q, z)

    def _base_gradient(self, z) -> np.ndarray:
        if self.kind == "paraboloid":
            return paraboloid_gradient(self.n, self.q, z)
        if self.kind == "radial_q0":
            return radial_q0_gradient(self.n, z)
        if self.kind == "quadratic":
            return np.asarray(z, dtype=float)
        return nsc_example_gradient(self.q, z)

    def _base_hessian(self, z) -> np.ndarray:
        if self.kind == "paraboloid":
            return paraboloid_hessian(self.n, self.q, z)
        if self.kind == "radial_q0":
            return radial_q0_hessian(self.n, z)
        if self.kind == "quadratic":
            return np.eye(self.n)
        return nsc_example_hessian(self.q, z)

    def value(self, x) -> float:
        return self._scale() * self._base_value(self._map(x))

    def gradient(self, x) -> np.ndarray:
        g = self._base_gradient(self._map(x))
        if self.A is None:
            return g
        return self._scale() * (self.A.T @ g)

    def hessian(self, x) -> np.ndarray:
        H = self._base_hessian(self._map(x))
        if self.A is None:
            return H
        return self._scale() * (self.A.T @ H @ self.A)

    def equation_residual(self, x) -> float:
        """det(Hessian) - weight_scale * value^q at a smooth point."""
        v = self.value(x)
        det = float(np.linalg.det(self.hessian(x)))
        rhs = self.weight_scale * (v ** self.q if v > 0 else 0.0)
        return det - rhs

    def boundary_function(self):
        """(x, y) -> value, for use as solver boundary data (n = 2 only)."""
        if self.n != 2:
            raise DomainError("boundary_function is for planar solutions")
        return lambda p: self.value(np.asarray(p, dtype=float))


def apply_affine_equivalence(sol: ExactSolution, A, b) -> ExactSolution:
    """u1(x) = |det A|^{-2/n} u2(Ax + b), composing with any existing map."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if abs(np.linalg.det(A)) < 1e-14:
        raise DomainError("affine matrix must be invertible")
    if sol.A is None:
        return ExactSolution(sol.kind, sol.n, sol.q, A, b)
    return ExactSolution(sol.kind, sol.n, sol.q, sol.A @ A, sol.A @ b + sol.b)


# -- dual-side closed forms ---------------------------------------------------


def paraboloid_conjugate(n: int, q: float, y) -> float:
    """Convex conjugate of the paraboloid solution, finite on {y_n < 0}.

    value = ( |y'|^2 / (2 y_n^2) + |y_n|^k / (k (k+1)^{1/(q+1)}) ) * |y_n|
    with k = (n - q) / (q + 1).
    """
    if not (0 <= q < n):
        raise DomainError(f"exponent q={q} outside [0, n)")
    y = np.asarray(y, dtype=float)
    yn = float(y[-1])
    if yn >= 0.0:
        raise DomainError("conjugate attained/infinite unless y_n < 0")
    k = (n - q) / (q + 1.0)
    yp2 = float(np.dot(y[:-1], y[:-1]))
    return (0.5 * yp2 / yn ** 2 + abs(yn) ** k / (k * (k + 1.0) ** (1.0 / (q + 1.0)))) * abs(yn)


def dual_quadratic_coefficient(n: int, q: float) -> float:
    """Coefficient of -s^2 in the slope-coordinate quadratic profile."""
    if not (0 <= q < n):
        raise DomainError(f"exponent q={q} outside [0, n)")
    return float((q + 1.0) ** ((q + 2.0) / (q + 1.0)) / ((n - q) * (n + 1.0) ** (1.0 / (q + 1.0))))


def dual_quadratic(n: int, q: float, yprime, s) -> float:
    """Global quadratic profile |y'|^2 / 2 - coeff * s^2 in slope coordinates."""
    yprime = np.atleast_1d(np.asarray(yprime, dtype=float))
    return float(0.5 * np.dot(yprime, yprime) - dual_quadratic_coefficient(n, q) * float(s) ** 2)


def lp_surface_weight(f, n: int, p: float, x) -> float:
    """Weight induced by a spherical density f for the surface-measure problem.

    g(x) = (1 + |x|^2)^{-n/2 - p} * f( (-x, 1) / sqrt(1 + |x|^2) ),
    to be used with exponent q = p - 1.
    """
    if not (1.0 < p < n + 1.0):
        raise DomainError(f"p={p} outside (1, n+1)")
    x = np.asarray(x, dtype=float)
    r2 = float(np.dot(x, x))
    denom = np.sqrt(1.0 + r2)
    theta = np.concatenate([-x, [1.0]]) / denom
    fv = float(f(theta))
    if fv <= 0.0:
        raise DomainError(f"spherical density must be positive, got {fv} at {theta}")
    return (1.0 + r2) ** (-n / 2.0 - p) * fv
