"""Rate-function calculus.

``theta`` functions (concave, on ``(1, inf)``) give total-variation rates
``r(t) = theta(Theta^{-1}(t))`` with ``Theta(t) = int_1^t du / theta(u)``.
``psi`` functions (convex, vanishing only at 0) give the comparison
function ``Psi_g(t) = int_t^g ds / psi(s)`` whose inverse bounds the decay
of coupled distances.

Closed forms are used for power and linear families; anything else goes
through quadrature in the log variable and bracketed bisection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, stats

from . import errors

QUAD_RTOL = 1e-13
PSI_LOWER_CLIP = 1e-14
BISECT_MAX_ITER = 200


@dataclass(frozen=True)
class RateSpec:
    """A ``theta`` (concave) or ``psi`` (convex) rate function.

    ``form`` is ``"power"`` (``u**exponent``), ``"linear"`` (``kappa*u``) or
    ``"custom"`` (``func``).
    """

    family: str
    form: str
    exponent: float | None = None
    kappa: float | None = None
    func: Callable | None = None

    def __post_init__(self):
        if self.family not in ("theta", "psi"):
            raise ValueError(f"family must be 'theta' or 'psi', got {self.family!r}")
        if self.form == "power" and self.exponent is None:
            raise ValueError("power form needs an exponent")
        if self.form == "linear" and (self.kappa is None or self.kappa <= 0):
            raise ValueError("linear form needs kappa > 0")
        if self.form == "custom" and self.func is None:
            raise ValueError("custom form needs func")

    def __call__(self, u):
        u = np.asarray(u, float)
        if self.form == "power":
            return u ** self.exponent
        if self.form == "linear":
            return self.kappa * u
        return np.asarray(self.func(u), float)

    def d1(self, u):
        u = np.asarray(u, float)
        if self.form == "power":
            return self.exponent * u ** (self.exponent - 1)
        if self.form == "linear":
            return np.full_like(u, self.kappa)
        h = 1e-5 * np.maximum(1.0, np.abs(u))
        return (self(u + h) - self(u - h)) / (2 * h)

    def d2(self, u):
        u = np.asarray(u, float)
        if self.form == "power":
            p = self.exponent
            return p * (p - 1) * u ** (p - 2)
        if self.form == "linear":
            return np.zeros_like(u)
        h = 1e-4 * np.maximum(1.0, np.abs(u))
        return (self(u + h) - 2 * self(u) + self(u - h)) / h ** 2

    @property
    def homogeneous_degree_one(self) -> bool:
        return self.form == "linear" or (self.form == "power" and self.exponent == 1)

    def describe(self) -> dict:
        out = {"family": self.family, "form": self.form}
        if self.exponent is not None:
            out["exponent"] = self.exponent
        if self.kappa is not None:
            out["kappa"] = self.kappa
        return out

    def check_shape(self, grid=None) -> None:
        """Probe the shape constraints of the family."""
        if self.family == "theta":
            u = np.geomspace(1.0 + 1e-9, 1e8, 300) if grid is None else np.asarray(grid, float)
            v = self(u)
            if np.any(v <= 0):
                raise errors.NonPositiveTheta("theta must be positive on (1, inf)")
            if np.any(np.diff(v) < -1e-12 * np.abs(v[1:])):
                raise ValueError("theta must be non-decreasing")
            mid = self(0.5 * (u[:-1] + u[1:]))
            if np.any(mid < 0.5 * (v[:-1] + v[1:]) * (1 - 1e-12)):
                raise ValueError("theta must be concave")
        else:
            u = np.geomspace(1e-8, 1e8, 300) if grid is None else np.asarray(grid, float)
            v = self(u)
            if float(self(np.array(0.0))) != 0.0 or np.any(v <= 0):
                raise ValueError("psi must vanish exactly at 0")
            mid = self(0.5 * (u[:-1] + u[1:]))
            if np.any(mid > 0.5 * (v[:-1] + v[1:]) * (1 + 1e-12)):
                raise ValueError("psi must be convex")


def theta_power(p: float) -> RateSpec:
    return RateSpec("theta", "power", exponent=float(p))


def theta_linear(kappa: float = 1.0) -> RateSpec:
    return RateSpec("theta", "linear", kappa=float(kappa))


def psi_power(q: float) -> RateSpec:
    return RateSpec("psi", "power", exponent=float(q))


def psi_linear(kappa: float) -> RateSpec:
    return RateSpec("psi", "linear", kappa=float(kappa))


def custom(family: str, func: Callable) -> RateSpec:
    return RateSpec(family, "custom", func=func)


def numeric(spec: RateSpec) -> RateSpec:
    """Same function with closed forms disabled (forces quadrature)."""
    return RateSpec(spec.family, "custom", func=lambda u, s=spec: s(u))


# --------------------------------------------------------------------------
# quadrature and inversion helpers

def _log_integral(fn, lo: float, hi: float) -> float:
    """``int_lo^hi du / fn(u)`` computed as an integral over ``log u``."""
    if hi == lo:
        return 0.0
    a, b = math.log(lo), math.log(hi)

    def integrand(v):
        u = math.exp(v)
        val = float(fn(np.array(u)))
        if val <= 0:
            raise errors.NonPositiveTheta(f"rate function is {val} at u={u:g}")
        return u / val

    # split long ranges so the adaptive rule sees the integrand's scale changes
    pieces = max(1, int(math.ceil(abs(b - a) / 4.0)))
    knots = np.linspace(a, b, pieces + 1)
    total = 0.0
    for k0, k1 in zip(knots[:-1], knots[1:]):
        val, _ = integrate.quad(integrand, k0, k1, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)
        total += val
    return total


def _bisect_log(fn, target: float, lo: float, hi: float, increasing: bool,
                grow=None, shrink=None) -> float:
    """Solve ``fn(u) = target`` by bisection in ``log u``.

    The bracket is expanded geometrically (``hi`` doubled in log-space for
    increasing maps, ``lo`` squared toward 0 for decreasing ones).
    """
    a, b = math.log(lo), math.log(hi)

    def g(v):
        val = fn(math.exp(v)) - target
        return val if increasing else -val

    for _ in range(BISECT_MAX_ITER):
        if g(b) >= 0:
            break
        b = b + max(1.0, abs(b))
    else:
        raise errors.InversionFailed("could not bracket the root from above")
    for _ in range(BISECT_MAX_ITER):
        if g(a) <= 0:
            break
        a = a - max(1.0, abs(a))
    else:
        raise errors.InversionFailed("could not bracket the root from below")
    for _ in range(BISECT_MAX_ITER):
        m = 0.5 * (a + b)
        if m in (a, b) or b - a <= 1e-15 * max(1.0, abs(m)):
            return math.exp(m)
        if g(m) < 0:
            a = m
        else:
            b = m
    raise errors.InversionFailed(f"bisection did not converge in {BISECT_MAX_ITER} iterations")


# --------------------------------------------------------------------------
# theta side

@dataclass(frozen=True)
class ThetaProfile:
    spec: RateSpec
    closed: bool

    def Theta(self, t: float) -> float:
        """``int_1^t du / theta(u)`` for ``t >= 1``."""
        if t < 1:
            raise ValueError(f"Theta is defined on [1, inf), got t={t}")
        s = self.spec
        if self.closed and s.form == "power":
            p = s.exponent
            if p == 1:
                return math.log(t)
            return (t ** (1 - p) - 1) / (1 - p)
        if self.closed and s.form == "linear":
            return math.log(t) / s.kappa
        return _log_integral(s, 1.0, t)

    def Theta_inv(self, s_val: float) -> float:
        if s_val < 0:
            raise ValueError(f"Theta^-1 is defined on [0, inf), got {s_val}")
        s = self.spec
        if self.closed and s.form == "power":
            p = s.exponent
            if p == 1:
                return math.exp(s_val)
            return (1 + (1 - p) * s_val) ** (1 / (1 - p))
        if self.closed and s.form == "linear":
            return math.exp(s.kappa * s_val)
        if s_val == 0:
            return 1.0
        return _bisect_log(self.Theta, s_val, 1.0, 2.0, increasing=True)

    def rate(self, t: float) -> float:
        return float(self.spec(self.Theta_inv(t)))


def theta_profile(spec: RateSpec, use_closed_form: bool = True) -> ThetaProfile:
    if spec.family != "theta":
        raise ValueError("theta_profile needs a theta-family RateSpec")
    if spec.form == "power" and not 0 < spec.exponent <= 1:
        raise ValueError(f"theta(u) = u^p needs 0 < p <= 1, got {spec.exponent}")
    return ThetaProfile(spec, use_closed_form and spec.form != "custom")


def theta_rate(spec: RateSpec, t, use_closed_form: bool = True):
    """``r(t) = theta(Theta^{-1}(t))``; vectorized over ``t``."""
    prof = theta_profile(spec, use_closed_form)
    t_arr = np.asarray(t, float)
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    if prof.closed and spec.form == "power" and spec.exponent < 1:
        p = spec.exponent
        return (1 + (1 - p) * t_arr) ** (p / (1 - p))
    out = np.vectorize(prof.rate, otypes=[float])(t_arr)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# psi side

@dataclass(frozen=True)
class PsiProfile:
    spec: RateSpec
    gamma: float
    closed: bool

    def Psi(self, t: float) -> float:
        """``int_t^gamma ds / psi(s)`` for ``0 < t <= gamma``."""
        g = self.gamma
        if not 0 < t <= g * (1 + 1e-15):
            raise errors.LevelOutOfRange(f"t = {t} outside (0, {g}]")
        t = min(t, g)
        s = self.spec
        if self.closed and s.form == "power":
            q = s.exponent
            return (t ** (1 - q) - g ** (1 - q)) / (q - 1)
        if self.closed and s.form == "linear":
            return math.log(g / t) / s.kappa
        return _log_integral(s, max(t, PSI_LOWER_CLIP), g)

    def Psi_inv(self, s_val: float) -> float:
        if s_val < 0:
            raise errors.LevelOutOfRange(f"Psi^-1 needs a nonnegative argument, got {s_val}")
        g = self.gamma
        s = self.spec
        if self.closed and s.form == "power":
            q = s.exponent
            return (g ** (1 - q) + (q - 1) * s_val) ** (1 / (1 - q))
        if self.closed and s.form == "linear":
            return g * math.exp(-s.kappa * s_val)
        if s_val == 0:
            return g
        return _bisect_log(self.Psi, s_val, 0.5 * g, g, increasing=False)


def psi_profile(spec: RateSpec, gamma: float, use_closed_form: bool = True) -> PsiProfile:
    """Comparison function ``Psi_gamma`` and its inverse."""
    if spec.family != "psi":
        raise ValueError("psi_profile needs a psi-family RateSpec")
    if not gamma > 0:
        raise errors.LevelOutOfRange(f"gamma = {gamma} must be positive")
    if spec.form == "power" and spec.exponent <= 1:
        raise errors.InvalidExponent(f"psi(u) = u^q needs q > 1, got {spec.exponent}")
    return PsiProfile(spec, float(gamma), use_closed_form and spec.form != "custom")


# --------------------------------------------------------------------------
# predicted constants

def _mixture(Gamma, lam) -> float:
    Gamma = np.asarray(Gamma, float)
    lam = np.asarray(lam, float)
    if Gamma.shape != lam.shape:
        raise ValueError("Gamma and lambda must have the same length")
    mix = float(Gamma @ lam)
    if mix >= 0:
        raise errors.NonNegativeMixture(f"sum Gamma_i lambda_i = {mix} must be negative")
    return mix


def predicted_polynomial_constant(Gamma, lam, q: float) -> float:
    """``((1 - q)/2 * sum Gamma_i lambda_i) ** (1/(1 - q))``."""
    if q < 1 + 1e-9:
        raise errors.InvalidExponent(f"q = {q} is too close to (or below) 1")
    mix = _mixture(Gamma, lam)
    return ((1 - q) / 2 * mix) ** (1 / (1 - q))


def exponential_rate_bound(Gamma, lam, kappa: float, vartheta: float, p: float = 1.0) -> float:
    """Supremum of admissible exponential rates ``min(vartheta/p, -kappa * mix)``."""
    if kappa <= 0 or vartheta <= 0 or p < 1:
        raise ValueError("need kappa > 0, vartheta > 0, p >= 1")
    mix = _mixture(Gamma, lam)
    return min(vartheta / p, -kappa * mix)


# --------------------------------------------------------------------------
# log-log fitting

@dataclass(frozen=True)
class RateCurveFit:
    slope: float
    intercept: float
    r_squared: float
    window: tuple
    slope_stderr: float
    n: int

    @property
    def ci_halfwidth(self) -> float:
        """95% normal-approximation half width of the slope."""
        return 1.96 * self.slope_stderr

    def summary(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared,
                "window": list(self.window), "slope_stderr": self.slope_stderr,
                "ci_halfwidth": self.ci_halfwidth, "n": self.n}


def rate_fit(times, values, window=None) -> RateCurveFit:
    """Unweighted least squares of ``log(value)`` on ``log(t)`` over ``window``."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    if window is None:
        window = (float(t.min()), float(t.max()))
    lo, hi = window
    m = (t >= lo) & (t <= hi)
    if m.sum() < 5:
        raise errors.InsufficientData(f"{int(m.sum())} points in window {window}; need 5")
    if np.any(v[m] <= 0) or np.any(t[m] <= 0):
        raise errors.NonPositiveValue("log-log fit needs strictly positive times and values")
    res = stats.linregress(np.log(t[m]), np.log(v[m]))
    r2 = float(res.rvalue ** 2) if np.isfinite(res.rvalue) else 1.0
    return RateCurveFit(float(res.slope), float(res.intercept), r2, (float(lo), float(hi)),
                        float(res.stderr), int(m.sum()))
