"""Distances on R^d x S and empirical estimators between sample sets."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import errors


@dataclass(frozen=True)
class RhoProfile:
    """Concave profile ``f`` with ``f(0) = 0`` and an optional right derivative."""

    f: Callable
    bounded_sup: float = math.inf
    derivative: Callable | None = None
    name: str = "custom"

    def __call__(self, u):
        return self.f(np.asarray(u, float))

    def deriv(self, u, eps: float = 1e-7):
        """Right derivative (the minimal supergradient of a concave ``f``)."""
        u = np.asarray(u, float)
        if self.derivative is not None:
            return self.derivative(u)
        step = eps * np.maximum(1.0, u)
        return (self.f(u + step) - self.f(u)) / step

    def check_shape(self, grid=None) -> None:
        """Probe monotonicity, midpoint concavity and ``f(u) = 0 iff u = 0``."""
        if grid is None:
            grid = np.concatenate([[0.0], np.geomspace(1e-6, 1e6, 400)])
        u = np.asarray(grid, float)
        v = self.f(u)
        tol = 1e-12 * np.maximum(1.0, np.abs(v))
        if abs(float(self.f(np.array(0.0)))) > 0:
            raise errors.InvalidProfile(f"{self.name}: f(0) != 0")
        if np.any(v[u > 0] <= 0):
            raise errors.InvalidProfile(f"{self.name}: f vanishes away from 0")
        if np.any(np.diff(v) < -tol[1:]):
            raise errors.InvalidProfile(f"{self.name}: f is not non-decreasing")
        mid = self.f(0.5 * (u[:-1] + u[1:]))
        if np.any(mid < 0.5 * (v[:-1] + v[1:]) - tol[1:]):
            raise errors.InvalidProfile(f"{self.name}: f fails the midpoint concavity test")


def identity_profile() -> RhoProfile:
    return RhoProfile(lambda u: u, math.inf, lambda u: np.ones_like(u), "u")


def capped_profile(cap: float = 1.0) -> RhoProfile:
    """``f(u) = min(u, cap)``."""
    return RhoProfile(lambda u: np.minimum(u, cap), cap,
                      lambda u: np.where(u < cap, 1.0, 0.0), f"min(u,{cap:g})")


def saturating_profile() -> RhoProfile:
    """``f(u) = u / (1 + u)``: linear near 0, bounded by 1."""
    return RhoProfile(lambda u: u / (1.0 + u), 1.0, lambda u: 1.0 / (1.0 + u) ** 2, "u/(1+u)")


PROFILES = {"identity": identity_profile, "capped": capped_profile,
            "saturating": saturating_profile}


def profile_from_config(cfg) -> RhoProfile:
    if isinstance(cfg, str):
        cfg = {"kind": cfg}
    kind = cfg.get("kind", "identity")
    if kind == "capped":
        return capped_profile(float(cfg.get("cap", 1.0)))
    if kind in PROFILES:
        return PROFILES[kind]()
    raise errors.ConfigError(f"unknown profile {kind!r}")


def rho(profile: RhoProfile, a, b):
    """``1{i != j} + f(|x - y|)`` for points ``a = (x, i)`` and ``b = (y, j)``.

    ``x``/``y`` may carry leading batch axes; the last axis is space.
    """
    (x, i), (y, j) = a, b
    diff = np.asarray(x, float) - np.asarray(y, float)
    gap = np.sqrt(np.sum(np.atleast_1d(diff) ** 2, axis=-1)) if np.ndim(diff) else abs(diff)
    return (np.asarray(i) != np.asarray(j)).astype(float) + profile(gap)


def empirical_w1_1d(samples_a, samples_b) -> float:
    """Exact W_1 between two equal-size empirical measures on the line."""
    a = np.sort(np.asarray(samples_a, float).ravel())
    b = np.sort(np.asarray(samples_b, float).ravel())
    if a.size != b.size:
        raise errors.LengthMismatch(f"{a.size} vs {b.size} samples")
    if a.size == 0:
        raise errors.EmptySample("no samples")
    return float(np.mean(np.abs(a - b)))


def empirical_tv(samples_a, samples_b, regimes_a=None, regimes_b=None, bins=None) -> float:
    """Histogram estimate of the total variation distance.

    Bins are product cells (spatial bin x regime).  Spatial bins default to
    the Freedman-Diaconis rule on the pooled sample, separately per regime.
    The estimator is biased upward for finite samples and consistent as the
    bins refine with the sample size.
    """
    return _tv_cells(samples_a, samples_b, regimes_a, regimes_b, bins)[0]


def empirical_tv_stderr(samples_a, samples_b, regimes_a=None, regimes_b=None, bins=None) -> float:
    """Aggregate binomial standard error of :func:`empirical_tv`.

    ``0.5 * sum_cells sqrt(p_a(1-p_a)/n_a + p_b(1-p_b)/n_b)`` over the same
    product cells.  By the triangle inequality this bounds the standard
    deviation of the estimator, and it is also the scale of its upward bias.
    """
    return _tv_cells(samples_a, samples_b, regimes_a, regimes_b, bins)[1]


def _tv_cells(samples_a, samples_b, regimes_a, regimes_b, bins):
    xa = np.asarray(samples_a, float)
    xb = np.asarray(samples_b, float)
    if xa.size == 0 or xb.size == 0:
        raise errors.EmptySample("empirical_tv needs two nonempty samples")
    if xa.ndim > 1 and xa.shape[-1] != 1:
        raise ValueError("empirical_tv supports one spatial dimension")
    xa, xb = xa.ravel(), xb.ravel()
    ra = np.zeros(xa.size, int) if regimes_a is None else np.asarray(regimes_a, int).ravel()
    rb = np.zeros(xb.size, int) if regimes_b is None else np.asarray(regimes_b, int).ravel()
    na, nb = xa.size, xb.size
    total = 0.0
    agg = 0.0
    for reg in np.union1d(ra, rb):
        pa, pb = xa[ra == reg], xb[rb == reg]
        pooled = np.concatenate([pa, pb])
        if bins is None:
            edges = np.histogram_bin_edges(pooled, bins="fd")
        else:
            edges = np.histogram_bin_edges(pooled, bins=bins)
        ca, _ = np.histogram(pa, edges)
        cb, _ = np.histogram(pb, edges)
        fa, fb = ca / na, cb / nb
        total += float(np.sum(np.abs(fa - fb)))
        agg += float(np.sum(np.sqrt(fa * (1 - fa) / na + fb * (1 - fb) / nb)))
    return min(1.0, 0.5 * total), 0.5 * agg


def coupled_distance_samples(profile: RhoProfile, xa, ia, xb, ib) -> np.ndarray:
    """``rho`` for each coupled pair in a batch (``xa``, ``xb``: ``(N, d)``)."""
    gap = np.sqrt(np.sum((np.asarray(xa) - np.asarray(xb)) ** 2, axis=-1))
    return (np.asarray(ia) != np.asarray(ib)).astype(float) + profile(gap)
