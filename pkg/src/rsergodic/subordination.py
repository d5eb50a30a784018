"""Subordinators, Bernstein functions and Bochner time changes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from . import errors
from .rng import as_generator
from .sde import Trajectory

N_BATCHES = 20


@dataclass(frozen=True)
class SubordinatorSpec:
    """Drift-only, alpha-stable or compound-Poisson-plus-drift subordinator.

    ``jump_sampler(rng, size)`` draws positive jumps; ``jump_laplace(u)``
    returns ``E[exp(-u J)]`` if known (otherwise ``jump_density`` on
    ``(0, inf)`` is integrated, or the atoms in ``jump_atoms`` are summed).
    """

    kind: str
    beta: float = 0.0
    alpha: float | None = None
    rate: float = 0.0
    jump_atoms: tuple = ()
    jump_density: Callable | None = field(default=None, compare=False)
    jump_sampler: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("drift", "stable", "cpp"):
            raise errors.ConfigError(f"unknown subordinator kind {self.kind!r}")
        if self.beta < 0:
            raise ValueError("drift beta must be >= 0")
        if self.kind == "stable" and not (self.alpha is not None and 0 < self.alpha < 1):
            raise ValueError(f"stable index alpha = {self.alpha} must lie in (0, 1)")
        if self.kind == "cpp":
            if self.rate < 0:
                raise ValueError("jump rate must be >= 0")
            if not self.jump_atoms and self.jump_sampler is None:
                raise ValueError("cpp needs jump_atoms or a jump_sampler")
            if any(v <= 0 or w < 0 for v, w in self.jump_atoms):
                raise ValueError("jump atoms need positive sizes and nonnegative weights")

    def describe(self) -> dict:
        out = {"kind": self.kind, "beta": self.beta}
        if self.kind == "stable":
            out["alpha"] = self.alpha
        if self.kind == "cpp":
            out["rate"] = self.rate
            out["jump_atoms"] = [list(a) for a in self.jump_atoms]
        return out


def drift_subordinator(beta: float = 1.0) -> SubordinatorSpec:
    return SubordinatorSpec("drift", beta=beta)


def stable_subordinator(alpha: float) -> SubordinatorSpec:
    return SubordinatorSpec("stable", alpha=alpha)


def cpp_subordinator(rate: float, atoms=((1.0, 1.0),), beta: float = 0.0) -> SubordinatorSpec:
    """Compound Poisson with a discrete jump law ``[(size, weight), ...]`` plus drift."""
    w = np.array([a[1] for a in atoms], float)
    atoms = tuple((float(v), float(p)) for (v, _), p in zip(atoms, w / w.sum()))
    return SubordinatorSpec("cpp", beta=beta, rate=rate, jump_atoms=atoms)


def subordinator_from_config(cfg: dict) -> SubordinatorSpec:
    kind = cfg.get("kind", "stable")
    if kind == "drift":
        return drift_subordinator(float(cfg.get("beta", 1.0)))
    if kind == "stable":
        return stable_subordinator(float(cfg["alpha"]))
    if kind == "cpp":
        atoms = cfg.get("jumps", [[1.0, 1.0]])
        return cpp_subordinator(float(cfg.get("rate", 1.0)), atoms, float(cfg.get("beta", 0.0)))
    raise errors.ConfigError(f"unknown subordinator kind {kind!r}")


def _jump_laplace(spec: SubordinatorSpec, u: float) -> float:
    if spec.jump_atoms:
        return float(sum(p * math.exp(-u * v) for v, p in spec.jump_atoms))
    if spec.jump_density is not None:
        val, _ = integrate.quad(lambda y: math.exp(-u * y) * spec.jump_density(y), 0, math.inf,
                                epsabs=1e-12, epsrel=1e-10)
        return float(val)
    raise errors.UnsupportedModel("cpp jump law has no Laplace transform or density")


def bernstein_phi(spec: SubordinatorSpec, u):
    """Laplace exponent: ``E exp(-u S(t)) = exp(-t phi(u))``."""
    u_arr = np.asarray(u, float)
    if np.any(u_arr <= 0):
        raise errors.NonPositiveArgument("phi is evaluated at u > 0")
    if spec.kind == "drift":
        out = spec.beta * u_arr
    elif spec.kind == "stable":
        out = u_arr ** spec.alpha
    else:
        jl = np.vectorize(lambda v: _jump_laplace(spec, v))(u_arr)
        out = spec.beta * u_arr + spec.rate * (1.0 - jl)
    return float(out) if np.ndim(out) == 0 else out


def _stable_unit(alpha: float, size, rng) -> np.ndarray:
    """Positive alpha-stable draws with ``E exp(-u S) = exp(-u^alpha)``.

    Kanter's representation (the one-sided Chambers-Mallows-Stuck form).
    """
    U = rng.uniform(0.0, math.pi, size)
    E = rng.exponential(1.0, size)
    a = alpha
    return (np.sin(a * U) / np.sin(U) ** (1.0 / a)
            * (np.sin((1.0 - a) * U) / E) ** ((1.0 - a) / a))


def _jumps(spec: SubordinatorSpec, size: int, rng) -> np.ndarray:
    if spec.jump_sampler is not None:
        return np.asarray(spec.jump_sampler(rng, size), float)
    v = np.array([a[0] for a in spec.jump_atoms])
    p = np.array([a[1] for a in spec.jump_atoms])
    return v[rng.choice(v.size, size=size, p=p)]


def sample_subordinator(spec: SubordinatorSpec, t: float, rng=None, size: int | None = None):
    """Draw ``S(t)`` (``size`` independent copies, or a scalar)."""
    if t < 0:
        raise errors.NegativeTime(f"t = {t} < 0")
    rng = as_generator(rng)
    n = 1 if size is None else int(size)
    if spec.kind == "drift":
        out = np.full(n, spec.beta * t)
    elif spec.kind == "stable":
        out = t ** (1.0 / spec.alpha) * _stable_unit(spec.alpha, n, rng) if t > 0 else np.zeros(n)
    else:
        counts = rng.poisson(spec.rate * t, n)
        total = _jumps(spec, int(counts.sum()), rng)
        owner = np.repeat(np.arange(n), counts)
        out = spec.beta * t + np.bincount(owner, weights=total, minlength=n)
    return float(out[0]) if size is None else out


def sample_subordinator_path(spec: SubordinatorSpec, times, rng=None, size: int = 1) -> np.ndarray:
    """Joint draws of ``S`` at increasing ``times`` via independent increments: ``(size, len(times))``."""
    times = np.asarray(times, float)
    if np.any(np.diff(times) < 0) or (times.size and times[0] < 0):
        raise ValueError("times must be nonnegative and non-decreasing")
    rng = as_generator(rng)
    dt = np.diff(np.concatenate([[0.0], times]))
    inc = np.stack([sample_subordinator(spec, float(d), rng, size) for d in dt], axis=1)
    return np.cumsum(inc, axis=1)


@dataclass
class SubordinateRate:
    """Monte Carlo ``r_phi(t) = E[r(S(t))]`` with normal-approximation errors."""

    times: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    n: int
    batch_means: np.ndarray

    def rows(self):
        for t, e, s in zip(self.times, self.estimate, self.stderr):
            yield {"t": float(t), "estimate": float(e), "stderr": float(s), "n": self.n}


def _hill_index(x: np.ndarray) -> float:
    """Hill estimator of the tail index from the top ``ceil(sqrt(N))`` order statistics."""
    x = np.sort(x[x > 0])
    k = max(10, int(math.ceil(math.sqrt(x.size))))
    if x.size <= k + 1:
        return math.inf
    top = x[-k:]
    thresh = x[-k - 1]
    return float(1.0 / np.mean(np.log(top / thresh)))


def subordinate_rate(r: Callable, spec: SubordinatorSpec, times, N: int, rng=None,
                     p: float = 1.0, check_moments: bool = True) -> SubordinateRate:
    """Estimate ``(E[r(S(t))^p])^{1/p}`` at each time.

    Draws are split into 20 batches.  A :class:`MomentBlowup` is raised when
    one batch carries more than half of the total, or when the Hill tail
    index of ``r(S(t))`` falls below 1 (an infinite mean).
    """
    if N < 100:
        raise ValueError(f"N = {N} must be at least 100")
    rng = as_generator(rng)
    times = np.asarray(times, float)
    est, se, bm = [], [], []
    for t in times:
        s = sample_subordinator(spec, float(t), rng, N)
        vals = np.asarray(r(s), float) ** p
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise errors.MomentBlowup(f"r(S({t:g})) is negative or not finite")
        batches = np.array([b.mean() for b in np.array_split(vals, N_BATCHES)])
        if check_moments and spec.kind == "stable":
            share = float(batches.max() / batches.sum()) if batches.sum() > 0 else 0.0
            tail = _hill_index(vals)
            if share > 0.5 or tail < 1.0:
                raise errors.MomentBlowup(
                    f"unstable mean at t = {t:g}: largest batch share {share:.2f}, "
                    f"tail index {tail:.2f}")
        m = float(vals.mean())
        sm = float(vals.std(ddof=1) / math.sqrt(N))
        e = m ** (1.0 / p)
        est.append(e)
        se.append(sm * e / (p * m) if m > 0 else 0.0)
        bm.append(batches)
    return SubordinateRate(times, np.array(est), np.array(se), N, np.array(bm))


def subordinate_path(traj: Trajectory, spec: SubordinatorSpec, sample_times, rng=None) -> dict:
    """Evaluate a stored path at subordinated times ``S(t_k)``.

    Returns a dict with ``times``, subordinated times ``S``, states ``x`` and
    ``regimes``.  Raises :class:`HorizonExceeded` if some ``S(t_k)`` lies past
    the trajectory horizon.
    """
    t = np.asarray(sample_times, float)
    S = sample_subordinator_path(spec, t, rng, 1)[0]
    x = traj.value_at(S)
    reg = traj.regime_at(S)
    return {"times": t, "S": S, "x": x, "regimes": reg}
