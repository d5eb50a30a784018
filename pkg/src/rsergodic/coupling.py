"""Synchronous coupling of two regime-switching diffusions.

Construction: the chain ``Lam`` from ``i`` and an independent copy
``Lam_bar`` from ``j`` run until they first agree at ``tau_ij``; the second
path then follows ``Lam`` (the merged chain ``Lam_tilde``).  Both diffusion
components are driven by the same Brownian increments.  Once the full pairs
agree (gap below ``merge_tol`` with equal regimes) the second path is
aliased to the first.

The resulting ``E[rho^p]^{1/p}`` is an upper bound on the Wasserstein
distance ``W_{f,p}`` between the two time-``t`` laws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import chain as chainmod
from . import errors
from .distance import RhoProfile, coupled_distance_samples
from .rates import RateSpec
from .rng import as_generator
from .sde import (RSModel, Trajectory, _default_tamed, _Engine, _PaddedSource,
                  linear_growth_constant, time_grid)

MERGE_TOL = 1e-9


def _require_coupleable(model: RSModel):
    if not model.switching_state_free:
        raise errors.UnsupportedModel(f"{model.name}: switching depends on the position")
    if not model.diffusion_state_free:
        raise errors.UnsupportedModel(f"{model.name}: diffusion depends on the position")


@dataclass(frozen=True)
class CoupledTrajectory:
    path_a: Trajectory
    path_b: Trajectory
    tau_ij: float
    tau_full: float
    shared_seed: str = ""


@dataclass
class CoupledBatch:
    """Snapshots of ``N`` coupled pairs at ``times`` plus per-pair stopping times."""

    times: np.ndarray
    xa: np.ndarray
    ra: np.ndarray
    xb: np.ndarray
    rb: np.ndarray
    tau_ij: np.ndarray
    tau_full: np.ndarray
    x_at_tau_ij: np.ndarray | None = field(default=None, repr=False)


def _setup(model, from_a, from_b, T, size, rng):
    (x, i), (y, j) = from_a, from_b
    lam = chainmod.simulate_chain_batch(model.switching, int(i), T, rng, size=size)
    lam_bar = chainmod.simulate_chain_batch(model.switching, int(j), T, rng, size=size)
    tau_ij = chainmod.coalescence_times(lam, lam_bar)
    lam_tilde = chainmod.merged_batch(lam, lam_bar, tau_ij)
    xa = np.broadcast_to(np.asarray(x, float).reshape(model.dim), (size, model.dim))
    xb = np.broadcast_to(np.asarray(y, float).reshape(model.dim), (size, model.dim))
    return (np.stack([xa, xb]), np.stack([np.full(size, int(i)), np.full(size, int(j))]),
            [_PaddedSource(lam), _PaddedSource(lam_tilde)], tau_ij)


def _merge_check(eng: _Engine, tau_full, t, tol):
    gap = np.sqrt(np.sum((eng.x[0] - eng.x[1]) ** 2, axis=-1))
    new = (~eng.merged) & (gap <= tol) & (eng.regimes[0] == eng.regimes[1])
    if new.any():
        eng.merged |= new
        tau_full[new] = t
        eng._sync_merged()


def couple(model: RSModel, from_a, from_b, T: float, h: float, rng=None,
           merge_tol: float = MERGE_TOL, tamed: bool | None = None,
           seed_tag: str = "") -> CoupledTrajectory:
    """One coupled pair on ``[0, T]``, recorded at the grid and all switches."""
    _require_coupleable(model)
    if h > T:
        raise errors.StepTooLarge(f"h = {h} exceeds T = {T}")
    rng = as_generator(rng)
    x0, r0, sources, tau_ij = _setup(model, from_a, from_b, T, 1, rng)
    eng = _Engine(model, x0, r0, sources, rng, _default_tamed(h, tamed))
    eng.merged = np.zeros(1, bool)
    tau_full = np.full(1, np.inf)
    _merge_check(eng, tau_full, 0.0, merge_tol)
    times = [0.0]
    xs = [eng.x[:, 0].copy()]
    regs = [eng.regimes[:, 0].copy()]

    def snap(t):
        times.append(float(t))
        xs.append(eng.x[:, 0].copy())
        regs.append(eng.regimes[:, 0].copy())

    grid = time_grid(T, h)
    for t0, t1 in zip(grid[:-1], grid[1:]):
        eng.step(t0, t1, lambda rows, tev: snap(tev[0]))
        _merge_check(eng, tau_full, t1, merge_tol)
        if times[-1] < t1:
            snap(t1)
        else:
            xs[-1] = eng.x[:, 0].copy()
    xs, regs = np.array(xs), np.array(regs)
    t = np.array(times)
    pa = Trajectory(t, xs[:, 0], regs[:, 0], seed_tag)
    pb = Trajectory(t, xs[:, 1], regs[:, 1], seed_tag)
    return CoupledTrajectory(pa, pb, float(tau_ij[0]), float(tau_full[0]), seed_tag)


def coupled_batch(model: RSModel, from_a, from_b, T: float, h: float, size: int, rng=None,
                  record_times=(), merge_tol: float = MERGE_TOL, tamed: bool | None = None,
                  capture_tau_ij: bool = False) -> CoupledBatch:
    """Simulate ``size`` independent coupled pairs and snapshot them."""
    _require_coupleable(model)
    if h > T:
        raise errors.StepTooLarge(f"h = {h} exceeds T = {T}")
    rng = as_generator(rng)
    x0, r0, sources, tau_ij = _setup(model, from_a, from_b, T, size, rng)
    eng = _Engine(model, x0, r0, sources, rng, _default_tamed(h, tamed))
    eng.merged = np.zeros(size, bool)
    tau_full = np.full(size, np.inf)
    _merge_check(eng, tau_full, 0.0, merge_tol)
    rec = np.asarray(sorted(set(float(t) for t in record_times)) or [T])
    want = set(np.round(rec, 12))
    x_tau = None
    on_event = None
    if capture_tau_ij:
        x_tau = np.where(tau_ij[None, :, None] == 0.0, eng.x, np.nan)

        def on_event(rows, tev):
            m = tev == tau_ij[rows]
            if m.any():
                x_tau[:, rows[m]] = eng.x[:, rows[m]]

    snaps_x, snaps_r = [], []
    if 0.0 in want:
        snaps_x.append(eng.x.copy())
        snaps_r.append(eng.regimes.copy())
    grid = time_grid(T, h, rec)
    for t0, t1 in zip(grid[:-1], grid[1:]):
        eng.step(t0, t1, on_event)
        _merge_check(eng, tau_full, t1, merge_tol)
        if round(t1, 12) in want:
            snaps_x.append(eng.x.copy())
            snaps_r.append(eng.regimes.copy())
    sx = np.array(snaps_x)
    sr = np.array(snaps_r)
    return CoupledBatch(rec, sx[:, 0], sr[:, 0], sx[:, 1], sr[:, 1], tau_ij, tau_full, x_tau)


@dataclass
class DecayCurve:
    """``(E[rho^p])^{1/p}`` per time: an upper bound on ``W_{f,p}``."""

    times: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    n: int
    p: float = 1.0

    def rows(self):
        for t, e, s in zip(self.times, self.estimate, self.stderr):
            yield {"t": float(t), "estimate": float(e), "stderr": float(s), "n": self.n}

    @classmethod
    def from_samples(cls, times, rho_samples, p: float = 1.0):
        """``rho_samples`` has shape ``(len(times), N)``."""
        rp = np.asarray(rho_samples, float) ** p
        n = rp.shape[1]
        m = rp.mean(axis=1)
        se_m = rp.std(axis=1, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(m)
        est = m ** (1.0 / p)
        with np.errstate(divide="ignore", invalid="ignore"):
            # delta method for m -> m^(1/p)
            se = np.where(m > 0, se_m * est / (p * m), 0.0)
        return cls(np.asarray(times, float), est, se, n, p)


def rho_samples(batch: CoupledBatch, profile: RhoProfile) -> np.ndarray:
    return np.stack([coupled_distance_samples(profile, batch.xa[k], batch.ra[k],
                                              batch.xb[k], batch.rb[k])
                     for k in range(batch.times.size)])


def distance_decay_curve(model: RSModel, from_a, from_b, profile: RhoProfile, p: float, times,
                         N: int, h: float, rng=None, tamed: bool | None = None) -> DecayCurve:
    """Monte Carlo coupling bound on ``W_{f,p}`` at each time in ``times``."""
    if p < 1:
        raise ValueError(f"p = {p} must be >= 1")
    profile.check_shape()
    times = np.asarray(times, float)
    batch = coupled_batch(model, from_a, from_b, float(times.max()), h, N, rng, times,
                          tamed=tamed)
    return DecayCurve.from_samples(batch.times, rho_samples(batch, profile), p)


# --------------------------------------------------------------------------
# asymptotic flatness

def default_probe_pairs(dim: int = 1, extent: float = 5.0, n: int = 201, rng=None,
                        n_random: int = 20000):
    """Probe pairs ``(x, y)`` with ``x != y``.

    In one dimension: the full tensor grid on ``[-extent, extent]^2``.  In
    higher dimensions: uniform random pairs in the cube.
    """
    if dim == 1:
        g = np.linspace(-extent, extent, n)
        xx, yy = np.meshgrid(g, g, indexing="ij")
        m = xx != yy
        return xx[m][:, None], yy[m][:, None]
    rng = as_generator(rng)
    xs = rng.uniform(-extent, extent, (n_random, dim))
    ys = rng.uniform(-extent, extent, (n_random, dim))
    return xs, ys


def _flatness_ratios(model, profile, psi, i, xs, ys):
    xs = np.asarray(xs, float).reshape(-1, model.dim)
    ys = np.asarray(ys, float).reshape(-1, model.dim)
    diff = xs - ys
    gap = np.sqrt(np.sum(diff * diff, axis=1))
    if np.any(gap == 0):
        raise errors.DegenerateProbe("probe pairs must satisfy x != y")
    inner = np.sum(diff * (model.drift(xs, i) - model.drift(ys, i)), axis=1)
    fgap = profile(gap)
    num = profile.deriv(gap) * inner
    den = gap * psi(fgap)
    return num / den, gap, fgap


@dataclass(frozen=True)
class FlatnessResult:
    regime: int
    Gamma: float
    raw_max: float
    violated: bool
    witness: tuple
    n_probes: int
    eta: float = math.inf
    delta: float | None = None
    above_threshold_max: float | None = None

    def summary(self) -> dict:
        return {"regime": self.regime, "Gamma": self.Gamma, "raw_max": self.raw_max,
                "violated": self.violated,
                "witness": [np.asarray(w).tolist() for w in self.witness],
                "n_probes": self.n_probes, "eta": self.eta, "delta": self.delta,
                "above_threshold_max": self.above_threshold_max}


def flatness_constant(model: RSModel, profile: RhoProfile, psi: RateSpec, regime: int,
                      probe_pairs=None) -> FlatnessResult:
    """Largest probed ratio ``f'(|x-y|) <x-y, b(x,i)-b(y,i)> / (|x-y| psi(f(|x-y|)))``.

    A positive maximum means the flatness inequality fails for every
    ``Gamma_i <= 0``; the result is then flagged and ``Gamma`` clamped to 0.
    """
    xs, ys = default_probe_pairs(model.dim) if probe_pairs is None else probe_pairs
    ratio, _, _ = _flatness_ratios(model, profile, psi, regime, xs, ys)
    k = int(np.argmax(ratio))
    raw = float(ratio[k])
    xs = np.asarray(xs).reshape(-1, model.dim)
    ys = np.asarray(ys).reshape(-1, model.dim)
    return FlatnessResult(regime, min(raw, 0.0), raw, raw > 0, (xs[k], ys[k]), ratio.size)


def delta_constant(profile: RhoProfile, eta: float) -> float:
    """``inf{t >= 0 : f(1/t) <= eta}`` by bisection (``f`` non-decreasing)."""
    if profile.bounded_sup <= eta:
        return 0.0
    lo, hi = 0.0, 1.0
    while float(profile(1.0 / hi)) > eta:
        lo, hi = hi, 2 * hi
        if hi > 1e300:
            raise errors.ThresholdTooSmall(f"f(1/t) stays above eta = {eta}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if mid > 0 and float(profile(1.0 / mid)) <= eta:
            hi = mid
        else:
            lo = mid
    return hi


def flatness_constant_thresholded(model: RSModel, profile: RhoProfile, psi: RateSpec, eta: float,
                                  regime: int, probe_pairs=None) -> FlatnessResult:
    """Flatness constant over probes with ``f(|x-y|) <= eta``.

    Probes above the threshold must have a nonpositive left-hand side; the
    worst of them is reported in ``above_threshold_max``.
    """
    inf_f = float(profile(np.array(1e-300)))
    if not eta > inf_f:
        raise errors.ThresholdTooSmall(f"eta = {eta} must exceed inf f = {inf_f}")
    xs, ys = default_probe_pairs(model.dim) if probe_pairs is None else probe_pairs
    xs = np.asarray(xs).reshape(-1, model.dim)
    ys = np.asarray(ys).reshape(-1, model.dim)
    ratio, gap, fgap = _flatness_ratios(model, profile, psi, regime, xs, ys)
    below = fgap <= eta
    if not below.any():
        raise errors.DegenerateProbe(f"no probe pair has f(|x-y|) <= {eta}")
    idx = np.flatnonzero(below)
    k = idx[int(np.argmax(ratio[below]))]
    raw = float(ratio[k])
    above_max = None
    violated = raw > 0
    if (~below).any():
        # sign of the left-hand side is the sign of the ratio (den > 0)
        above_max = float(np.max(ratio[~below]))
        violated = violated or above_max > 0
    return FlatnessResult(regime, min(raw, 0.0), raw, violated, (xs[k], ys[k]), int(below.sum()),
                          float(eta), delta_constant(profile, eta), above_max)


@dataclass(frozen=True)
class FlatnessCertificate:
    Gamma: np.ndarray
    lam: np.ndarray
    mixture: float
    f_tag: str
    psi_tag: dict
    eta: float
    results: tuple
    feasible: bool
    grid: dict

    def summary(self) -> dict:
        return {"kind": "wasserstein-flatness", "Gamma": self.Gamma.tolist(),
                "lambda": self.lam.tolist(), "mixture": self.mixture, "f": self.f_tag,
                "psi": self.psi_tag, "eta": self.eta, "feasible": self.feasible,
                "grid": self.grid, "regimes": [r.summary() for r in self.results],
                "unchecked_hypotheses": ["b(., i) locally Lipschitz (bounded-f variant exempt)"]}


def flatness_certificate(model: RSModel, profile: RhoProfile, psi: RateSpec, probe_pairs=None,
                         eta: float | None = None, grid_spec: dict | None = None
                         ) -> FlatnessCertificate:
    """Per-regime flatness constants and the verdict ``sum Gamma_i lambda_i < 0``."""
    _require_coupleable(model)
    results = []
    for i in range(model.n_regimes):
        if eta is None:
            results.append(flatness_constant(model, profile, psi, i, probe_pairs))
        else:
            results.append(flatness_constant_thresholded(model, profile, psi, eta, i,
                                                         probe_pairs))
    Gamma = np.array([r.Gamma for r in results])
    lam = chainmod.invariant_distribution(model.switching)
    mix = float(Gamma @ lam)
    feasible = mix < 0 and not any(r.violated for r in results)
    return FlatnessCertificate(Gamma, lam, mix, profile.name, psi.describe(),
                               math.inf if eta is None else float(eta), tuple(results), feasible,
                               grid_spec or {"kind": "default", "dim": model.dim})


def unbounded_constant_estimate(model: RSModel, from_a, from_b, profile: RhoProfile, eta: float,
                                Gamma, q: float, N: int, h: float, T: float, rng=None) -> dict:
    """Monte Carlo estimate of the polynomial constant for unbounded ``f``.

    Returns ``E[ceil(delta |X_a - X_b|(tau_ij))^2]^{1/2}`` times the bounded
    constant.  This is an estimate, not a certificate.
    """
    from .rates import predicted_polynomial_constant

    lam = chainmod.invariant_distribution(model.switching)
    base = predicted_polynomial_constant(Gamma, lam, q)
    delta = delta_constant(profile, eta)
    batch = coupled_batch(model, from_a, from_b, T, h, N, rng, capture_tau_ij=True)
    xt = batch.x_at_tau_ij
    seen = np.all(np.isfinite(xt[0]), axis=-1) & np.all(np.isfinite(xt[1]), axis=-1)
    gap = np.sqrt(np.sum((xt[0, seen] - xt[1, seen]) ** 2, axis=-1))
    factor = float(np.sqrt(np.mean(np.ceil(delta * gap) ** 2))) if seen.any() else math.nan
    K = linear_growth_constant(model)
    return {"delta": delta, "moment_factor": factor, "bounded_constant": base,
            "constant": factor * base, "n_observed": int(seen.sum()), "n": N,
            "K_hat": K.K_hat, "K_below_vartheta": K.below_vartheta, "is_estimate": True}
