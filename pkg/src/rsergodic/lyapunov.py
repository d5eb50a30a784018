"""Numerical checks of Foster-Lyapunov drift conditions and matrix certificates.

Every verdict here is numerical evidence collected on finite probe grids,
not a proof: a limit or limsup can only be probed through its trend on
growing annuli.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import errors
from .chain import (StateDependentGenerator, _require_irreducible, as_generator_matrix,
                    invariant_distribution)
from .rates import RateSpec
from .sde import RSModel

GRAD_STEP = 1e-6
HESS_STEP = 1e-4


def _rows(x, dim=None) -> np.ndarray:
    x = np.asarray(x, float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None] if dim in (None, 1) else x[None, :]
    return x


class SmoothFunction:
    """A ``C^2`` test function ``F(x)`` or ``F(x, i)`` evaluated on rows of ``x``.

    Missing derivatives fall back to central finite differences with steps
    ``1e-6 (1 + |x|)`` (gradient) and ``1e-4 (1 + |x|)`` (Hessian).
    """

    def __init__(self, f: Callable, grad: Callable | None = None, hess: Callable | None = None,
                 regime_dependent: bool = False, name: str = "F"):
        self.f = f
        self._grad = grad
        self._hess = hess
        self.regime_dependent = regime_dependent
        self.name = name

    def _call(self, fn, x, i):
        return fn(x, i) if self.regime_dependent else fn(x)

    def value(self, x, i: int = 0) -> np.ndarray:
        return np.asarray(self._call(self.f, _rows(x), i), float).reshape(-1)

    def grad(self, x, i: int = 0) -> np.ndarray:
        x = _rows(x)
        if self._grad is not None:
            return np.asarray(self._call(self._grad, x, i), float).reshape(x.shape)
        h = GRAD_STEP * (1.0 + np.sqrt(np.sum(x * x, axis=1)))
        out = np.empty_like(x)
        for k in range(x.shape[1]):
            e = np.zeros(x.shape[1])
            e[k] = 1.0
            step = h[:, None] * e
            out[:, k] = (self.value(x + step, i) - self.value(x - step, i)) / (2 * h)
        return out

    def hess(self, x, i: int = 0) -> np.ndarray:
        x = _rows(x)
        M, d = x.shape
        if self._hess is not None:
            return np.asarray(self._call(self._hess, x, i), float).reshape(M, d, d)
        h = HESS_STEP * (1.0 + np.sqrt(np.sum(x * x, axis=1)))
        eye = np.eye(d)
        f0 = self.value(x, i)
        out = np.empty((M, d, d))
        for a in range(d):
            ea = h[:, None] * eye[a]
            out[:, a, a] = (self.value(x + ea, i) - 2 * f0 + self.value(x - ea, i)) / h ** 2
            for b in range(a + 1, d):
                eb = h[:, None] * eye[b]
                v = (self.value(x + ea + eb, i) - self.value(x + ea - eb, i)
                     - self.value(x - ea + eb, i) + self.value(x - ea - eb, i)) / (4 * h ** 2)
                out[:, a, b] = out[:, b, a] = v
        return out


def quadratic_function(scale: float = 1.0) -> SmoothFunction:
    """``V(x) = 1 + scale |x|^2`` with analytic derivatives."""
    return SmoothFunction(lambda x: 1.0 + scale * np.sum(x * x, axis=1),
                          lambda x: 2.0 * scale * x,
                          lambda x: np.broadcast_to(2.0 * scale * np.eye(x.shape[1]),
                                                    (x.shape[0], x.shape[1], x.shape[1])),
                          name=f"1+{scale:g}|x|^2")


def compose(theta: RateSpec, V: SmoothFunction) -> SmoothFunction:
    """``theta(V(x))`` with chain-rule derivatives."""
    def f(x, i=0):
        return theta(V.value(x, i))

    def grad(x, i=0):
        return theta.d1(V.value(x, i))[:, None] * V.grad(x, i)

    def hess(x, i=0):
        v = V.value(x, i)
        g = V.grad(x, i)
        return (theta.d1(v)[:, None, None] * V.hess(x, i)
                + theta.d2(v)[:, None, None] * g[:, :, None] * g[:, None, :])

    if V.regime_dependent:
        return SmoothFunction(f, grad, hess, True, f"theta({V.name})")
    return SmoothFunction(lambda x: f(x), lambda x: grad(x), lambda x: hess(x), False,
                          f"theta({V.name})")


@dataclass(frozen=True)
class LyapunovSpec:
    """Candidate ``V`` (values > 1), concave rate ``theta`` and constants ``c_i``."""

    V: SmoothFunction
    theta: RateSpec
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, float))
        if self.theta.family != "theta":
            raise ValueError("LyapunovSpec needs a theta-family rate")

    def check(self, probes) -> None:
        v = self.V.value(probes)
        if np.any(v <= 1):
            raise ValueError("V must exceed 1 on every probe")
        if np.any(self.theta(v) <= 0):
            raise errors.NonPositiveTheta("theta(V) must be positive")


@dataclass
class DriftCertificate:
    kind: str
    constants: dict
    verdict: str
    evidence: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.verdict == "feasible"

    def summary(self) -> dict:
        return {"kind": self.kind, "constants": _jsonable(self.constants),
                "verdict": self.verdict, "evidence": _jsonable(self.evidence),
                "notes": list(self.notes), "status": "numerical evidence"}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


# --------------------------------------------------------------------------
# generator action

def _q_rows(model: RSModel, x):
    """Generator matrices per row: ``(M, n, n)``."""
    sw = model.switching
    if isinstance(sw, StateDependentGenerator):
        return np.stack([sw.at(row) for row in x])
    q = as_generator_matrix(sw).q
    return np.broadcast_to(q, (x.shape[0],) + q.shape)


def diffusion_action(model: RSModel, F: SmoothFunction, x, i: int) -> np.ndarray:
    """``L_i F = <b(x,i), grad F> + (1/2) Tr(sigma sigma^T Hess F)`` at regime ``i``."""
    x = _rows(x, model.dim)
    b = model.drift(x, i)
    sig = np.broadcast_to(model.diffusion(x, i), (x.shape[0], model.dim, model.noise_dim))
    a = np.einsum("mik,mjk->mij", sig, sig)
    g = F.grad(x, i)
    H = F.hess(x, i)
    out = np.sum(b * g, axis=1) + 0.5 * np.einsum("mij,mji->m", a, H)
    if not np.all(np.isfinite(out)):
        raise errors.NonFiniteDerivative(f"non-finite L_{i}{F.name} at some probe")
    return out


def generator_action(model: RSModel, F: SmoothFunction, x, i: int) -> np.ndarray:
    """``L F(x, i) = L_i F(x, i) + sum_j q_ij(x) F(x, j)``."""
    x = _rows(x, model.dim)
    out = diffusion_action(model, F, x, i)
    q = _q_rows(model, x)
    vals = np.stack([F.value(x, j) for j in range(model.n_regimes)], axis=1)
    out = out + np.sum(q[:, i, :] * vals, axis=1)
    if not np.all(np.isfinite(out)):
        raise errors.NonFiniteDerivative(f"non-finite L{F.name} at some probe")
    return out


# --------------------------------------------------------------------------
# probe geometry

def _directions(dim: int, directions=None) -> np.ndarray:
    if directions is not None:
        d = np.asarray(directions, float).reshape(-1, dim)
        return d / np.linalg.norm(d, axis=1, keepdims=True)
    eye = np.eye(dim)
    out = [eye, -eye]
    if dim > 1:
        diag = np.ones(dim) / math.sqrt(dim)
        out += [diag[None], -diag[None]]
    return np.concatenate(out)


def annulus_points(R: float, dim: int, directions=None, n_radii: int = 5) -> np.ndarray:
    """Probe points on the shell ``R <= |x| <= 2R``."""
    dirs = _directions(dim, directions)
    radii = np.linspace(R, 2 * R, n_radii)
    return (radii[:, None, None] * dirs[None]).reshape(-1, dim)


# --------------------------------------------------------------------------
# subgeometric drift (trend tests)

def check_subgeometric_drift(spec: LyapunovSpec, model: RSModel, annuli, directions=None,
                             margin_frac: float = 0.05, trend_tol: float = 1e-9
                             ) -> DriftCertificate:
    """Trend tests for the four limit conditions of the subgeometric criterion.

    On each shell ``[R_k, 2 R_k]``:

    * ``L_i V / theta(V)`` (maximum over the shell) must sit below
      ``c_i - margin`` on the two outermost shells and be non-increasing;
    * ``theta'(V)``, ``theta(V)/V`` and ``sup_i L_i theta(V) / theta(V)``
      (largest magnitude over the shell) must be non-increasing toward 0.

    ``sum_i c_i lambda_i < 0`` is checked separately.
    """
    radii = np.asarray(annuli, float)
    if radii.size < 3 or np.any(np.diff(radii) <= 0):
        raise ValueError("need K >= 3 increasing annulus radii")
    n = model.n_regimes
    c = spec.c
    if c.size != n:
        raise errors.LengthMismatch(f"{c.size} constants for {n} regimes")
    thV = compose(spec.theta, spec.V)
    ratio = np.empty((n, radii.size))
    d1 = np.empty(radii.size)
    tv_ratio = np.empty(radii.size)
    sup_ratio = np.empty(radii.size)
    for k, R in enumerate(radii):
        pts = annulus_points(R, model.dim, directions)
        spec.check(pts)
        V = spec.V.value(pts)
        th = spec.theta(V)
        per_i = np.stack([diffusion_action(model, thV, pts, i) / th for i in range(n)])
        for i in range(n):
            ratio[i, k] = np.max(diffusion_action(model, spec.V, pts, i) / th)
        d1[k] = np.max(np.abs(spec.theta.d1(V)))
        tv_ratio[k] = np.max(th / V)
        sup_ratio[k] = np.max(np.abs(per_i.max(axis=0)))
    margin = margin_frac * np.abs(c)
    checks = {}
    for i in range(n):
        outer = ratio[i, -2:]
        checks[f"LV/theta(V) regime {i} < c_i"] = bool(
            np.all(outer < c[i] - margin[i]) and outer[1] <= outer[0] + trend_tol)
    for name, vals in (("theta'(V) -> 0", d1), ("theta(V)/V -> 0", tv_ratio),
                       ("sup_i L_i theta(V)/theta(V) -> 0", sup_ratio)):
        checks[name] = bool(vals[-1] <= vals[-2] + trend_tol)
    lam = invariant_distribution(model.switching if not isinstance(
        model.switching, StateDependentGenerator) else model.switching.base)
    mixture = float(c @ lam)
    checks["sum c_i lambda_i < 0"] = mixture < 0
    verdict = "feasible" if all(checks.values()) else "infeasible"
    notes = ["limits probed by trend on finite annuli"]
    if not spec.theta.homogeneous_degree_one:
        notes.append("theta is not degree-one homogeneous: ratios are not scale invariant in V")
    return DriftCertificate(
        "subgeometric-TV",
        {"c": c, "lambda": lam, "mixture": mixture, "margin": margin,
         "theta": spec.theta.describe(), "theta_homogeneous": spec.theta.homogeneous_degree_one},
        verdict,
        {"radii": radii, "LV_over_thetaV": ratio, "theta_prime": d1, "thetaV_over_V": tv_ratio,
         "sup_L_thetaV_over_thetaV": sup_ratio, "checks": checks},
        notes)


# --------------------------------------------------------------------------
# Poisson system and composite function

def poisson_solve(Q, c, residual_tol: float = 1e-10):
    """Solve ``Q gamma = -c - beta 1`` with ``beta = -sum_i c_i lambda_i`` and ``gamma_0 = 0``.

    Returns
    -------
    beta : float
    gamma : ndarray
    """
    gen = as_generator_matrix(Q)
    _require_irreducible(gen)
    c = np.asarray(c, float)
    if c.size != gen.n:
        raise errors.LengthMismatch(f"{c.size} constants for {gen.n} states")
    lam = invariant_distribution(gen)
    beta = -float(c @ lam)
    if beta <= 0:
        raise errors.InfeasibleBeta(f"beta = {beta} <= 0 (sum c_i lambda_i >= 0)")
    rhs = -c - beta
    gamma = np.zeros(gen.n)
    if gen.n > 1:
        sol, *_ = np.linalg.lstsq(gen.q[:, 1:], rhs, rcond=None)
        gamma[1:] = sol
        # one refinement step against roundoff
        corr, *_ = np.linalg.lstsq(gen.q[:, 1:], rhs - gen.q @ gamma, rcond=None)
        gamma[1:] += corr
    res = float(np.max(np.abs(gen.q @ gamma - rhs)))
    if res > residual_tol * max(1.0, float(np.max(np.abs(rhs)))):
        raise errors.GeneratorError(f"Poisson residual {res:.3e} exceeds tolerance")
    return beta, gamma


@dataclass
class CompositeLyapunov:
    """``W(x, i) = (m / beta) (V(x) + gamma_i theta(V(x))) + shift``."""

    spec: LyapunovSpec
    gamma: np.ndarray
    m: float
    beta: float
    shift: float
    function: SmoothFunction
    report: DriftCertificate


def composite_lyapunov(spec: LyapunovSpec, gamma, beta: float, model: RSModel, m: float | None = None,
                       R: float = 100.0, inner_radius: float = 10.0, directions=None
                       ) -> CompositeLyapunov:
    """Build the regime-dependent composite function and verify ``LW <= -theta(W)``.

    The check runs on the shell ``R <= |x| <= 2R``.  If ``W <= 1`` somewhere on
    the inner ball, a constant shift is added (it changes ``theta(W)`` but not
    ``LW``) and recorded.
    """
    gamma = np.asarray(gamma, float)
    if m is None:
        m = max(beta, 2.0) + 1.0
    if not m > max(beta, 2.0):
        raise errors.InfeasibleM(f"m = {m} must exceed max(beta, 2) = {max(beta, 2.0)}")
    th = spec.theta
    V = spec.V
    scale = m / beta

    def raw(x, i):
        v = V.value(x)
        return scale * (v + gamma[i] * th(v))

    inner = np.concatenate([annulus_points(r, model.dim, directions, 3)
                            for r in np.linspace(0, inner_radius, 41)[1:]] + [np.zeros((1, model.dim))])
    lowest = min(float(np.min(raw(inner, i))) for i in range(model.n_regimes))
    shift = 0.0 if lowest > 1 else 1.0 - lowest + 1e-6

    def f(x, i):
        return raw(x, i) + shift

    def grad(x, i):
        v = V.value(x)
        return scale * (1.0 + gamma[i] * th.d1(v))[:, None] * V.grad(x)

    def hess(x, i):
        v = V.value(x)
        g = V.grad(x)
        return scale * ((1.0 + gamma[i] * th.d1(v))[:, None, None] * V.hess(x)
                        + (gamma[i] * th.d2(v))[:, None, None] * g[:, :, None] * g[:, None, :])

    W = SmoothFunction(f, grad, hess, regime_dependent=True, name="W")
    pts = annulus_points(R, model.dim, directions)
    margins = []
    for i in range(model.n_regimes):
        LW = generator_action(model, W, pts, i)
        margins.append(float(np.max(LW + th(W.value(pts, i)))))
    ok = max(margins) <= 0
    report = DriftCertificate(
        "subgeometric-TV",
        {"beta": beta, "gamma": gamma, "m": m, "shift": shift, "R": R},
        "feasible" if ok else "infeasible",
        {"shell": [R, 2 * R], "max_LW_plus_thetaW": margins},
        ["composite check on one shell only"])
    return CompositeLyapunov(spec, gamma, m, beta, shift, W, report)


# --------------------------------------------------------------------------
# M-matrices

@dataclass(frozen=True)
class MMatrixVerdict:
    verdict: str
    leading_minors: np.ndarray
    min_real_eig: float
    eigen_verdict: str

    @property
    def agree(self) -> bool:
        return self.verdict == self.eigen_verdict


def m_matrix_test(M, tol: float = 1e-10) -> MMatrixVerdict:
    """Classify ``M`` as a nonsingular, singular or non M-matrix.

    The primary verdict uses principal minors (all leading minors positive
    for nonsingular; all principal minors nonnegative for singular); the
    eigenvalue criterion (sign of the smallest real part) is recorded as a
    cross-check.
    """
    from itertools import combinations

    M = np.atleast_2d(np.asarray(M, float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("m_matrix_test needs a square matrix")
    n = M.shape[0]
    scale = max(1.0, float(np.max(np.abs(M))))
    off = M - np.diag(np.diag(M))
    offdiag_ok = bool(np.all(off <= tol * scale))
    lead = np.array([np.linalg.det(M[:k, :k]) for k in range(1, n + 1)])
    ev = np.linalg.eigvals(M) if n else np.array([0.0])
    lo = float(np.min(ev.real))
    etol = tol * scale
    if not offdiag_ok:
        return MMatrixVerdict("not-M", lead, lo, "not-M")
    eig_v = "nonsingular-M" if lo > etol else ("singular-M" if lo >= -etol else "not-M")
    # minors of order k scale like scale**k
    mtol = np.array([tol * scale ** k for k in range(1, n + 1)])
    if np.all(lead > mtol):
        return MMatrixVerdict("nonsingular-M", lead, lo, eig_v)
    for k in range(1, n + 1):
        for idx in combinations(range(n), k):
            if np.linalg.det(M[np.ix_(idx, idx)]) < -mtol[k - 1]:
                return MMatrixVerdict("not-M", lead, lo, eig_v)
    return MMatrixVerdict("singular-M", lead, lo, eig_v)


def m_matrix_plus_c(Q, c) -> np.ndarray:
    """``-Q + diag(c)``: the nonsingular-M criterion with positive ``c`` signs."""
    return -as_generator_matrix(Q).q + np.diag(np.asarray(c, float))


def m_matrix_minus_c(Q, c) -> np.ndarray:
    """``-(Q + diag(c))``: the criterion in the spectral-certificate convention."""
    return -(as_generator_matrix(Q).q + np.diag(np.asarray(c, float)))


def m_matrix_certificates(Q, c) -> dict:
    """Run both sign conventions and report each verdict."""
    return {"-Q+diag(c)": m_matrix_test(m_matrix_plus_c(Q, c)).verdict,
            "-(Q+diag(c))": m_matrix_test(m_matrix_minus_c(Q, c)).verdict}


# --------------------------------------------------------------------------
# geometric spectral certificate

def perron_eigen(A, tol: float = 1e-12, max_iter: int = 200000):
    """Perron eigenpair of a Metzler matrix by shifted power iteration.

    Returns
    -------
    value : float
    vector : ndarray
        Positive, normalized to sum 1.
    """
    A = np.asarray(A, float)
    n = A.shape[0]
    s = float(np.max(np.abs(np.diag(A)))) + 1.0
    B = A + s * np.eye(n)
    v = np.full(n, 1.0 / n)
    lam = 0.0
    for _ in range(max_iter):
        w = B @ v
        new_lam = float(w.sum())
        w /= new_lam
        if np.max(np.abs(w - v)) <= tol and abs(new_lam - lam) <= tol * max(1.0, abs(new_lam)):
            v = w
            lam = new_lam
            break
        v, lam = w, new_lam
    else:
        # slow spectral gap: fall back to a dense eigensolver
        ev, vec = np.linalg.eig(A)
        k = int(np.argmax(ev.real))
        v = np.abs(vec[:, k].real)
        v /= v.sum()
        return float(ev[k].real), v
    value = float(v @ (A @ v) / (v @ v))
    return value, v


def geometric_spectral_certificate(Q, c, eta_min: float = 1e-6, n_scan: int = 999
                                   ) -> DriftCertificate:
    """Find ``zeta in (0, 1)``, ``eta > 0`` and ``gamma > 0`` with ``(Q + zeta diag c) gamma = -eta gamma``.

    The Perron eigenvalue is convex in ``zeta``; a scan locates a feasible
    point, then bisection pushes ``zeta`` to the largest value whose Perron
    eigenvalue is at most ``-eta_min``.
    """
    gen = as_generator_matrix(Q)
    _require_irreducible(gen)
    c = np.asarray(c, float)
    D = np.diag(c)

    def eig(z):
        return perron_eigen(gen.q + z * D)

    zs = np.linspace(0, 1, n_scan + 2)[1:-1]
    vals = np.array([eig(z)[0] for z in zs])
    ok = vals <= -eta_min
    if not ok.any():
        raise errors.NoFeasibleZeta("Perron eigenvalue >= -eta_min on the whole zeta scan")
    last = int(np.flatnonzero(ok)[-1])
    lo = float(zs[last])
    hi = float(zs[last + 1]) if last + 1 < zs.size else 1.0 - 1e-12
    if eig(hi)[0] <= -eta_min:
        lo = hi
    else:
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if eig(mid)[0] <= -eta_min:
                lo = mid
            else:
                hi = mid
    value, gamma = eig(lo)
    eta = -value
    res = float(np.max(np.abs((gen.q + lo * D) @ gamma + eta * gamma)))
    return DriftCertificate(
        "geometric-spectral",
        {"zeta": lo, "eta": eta, "gamma": gamma, "eta_min": eta_min},
        "feasible",
        {"residual": res, "scan_zeta": zs[ok][[0, -1]], "min_gamma": float(gamma.min())},
        ["largest zeta with Perron eigenvalue <= -eta_min"])


# --------------------------------------------------------------------------
# negative drift LW <= -g

def check_negative_drift(model: RSModel, W: SmoothFunction, annuli, directions=None,
                         outer: int | None = None) -> DriftCertificate:
    """``g_hat(R) = min_{shell, i} (-LW)``; feasible if positive and increasing outward."""
    radii = np.asarray(annuli, float)
    if radii.size == 0:
        raise ValueError("need at least one annulus")
    g_hat = np.empty(radii.size)
    for k, R in enumerate(radii):
        pts = annulus_points(R, model.dim, directions)
        g_hat[k] = min(float(np.min(-generator_action(model, W, pts, i)))
                       for i in range(model.n_regimes))
    outer = max(2, radii.size // 2) if outer is None else outer
    tail = g_hat[-outer:]
    ok = bool(np.all(tail > 0) and np.all(np.diff(tail) > 0))
    return DriftCertificate("wasserstein-existence",
                            {"outer_annuli": outer}, "feasible" if ok else "infeasible",
                            {"radii": radii, "g_hat": g_hat}, [])
