"""Regime-switching SDE models and their Euler-Maruyama integration.

Evaluators are vectorized over leading axes: ``drift(x, i)`` takes ``x`` of
shape ``(..., d)`` and returns ``(..., d)``; ``diffusion(x, i)`` returns
``(..., d, n)`` (or a broadcastable ``(d, n)`` when it does not depend on
``x``).

The integrator steps on a uniform grid that is split exactly at switching
times.  When a step is split, the Brownian increment of the step is drawn
first and the sub-increments are sampled from the Brownian bridge, so any
number of paths sharing the same step increments (the synchronous
coupling) see consistent noise on a common refinement.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import chain as chainmod
from . import errors
from .chain import ChainBatch, GeneratorMatrix, StateDependentGenerator
from .rng import as_generator

TAME_AUTO_THRESHOLD = 1e-3


@dataclass(frozen=True)
class RSModel:
    dim: int
    noise_dim: int
    drift: Callable
    diffusion: Callable
    switching: GeneratorMatrix | StateDependentGenerator
    diffusion_state_free: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def n_regimes(self) -> int:
        return self.switching.n

    @property
    def switching_state_free(self) -> bool:
        return isinstance(self.switching, GeneratorMatrix)

    def sigma(self, i: int, x=None) -> np.ndarray:
        """Diffusion matrix in regime ``i`` (at ``x`` if state dependent)."""
        if x is None:
            if not self.diffusion_state_free:
                raise errors.StateDependentDiffusion(f"{self.name}: sigma depends on x")
            x = np.zeros(self.dim)
        return np.broadcast_to(self.diffusion(np.asarray(x, float), i),
                               np.shape(x)[:-1] + (self.dim, self.noise_dim))

    def self_check(self, radius: float = 10.0, n_probe: int = 200, rng=None) -> None:
        """Probe drift and diffusion on a ball: finite and correctly shaped."""
        rng = as_generator(rng)
        x = rng.uniform(-radius, radius, size=(n_probe, self.dim))
        for i in range(self.n_regimes):
            b = np.asarray(self.drift(x, i))
            s = np.broadcast_to(self.diffusion(x, i), (n_probe, self.dim, self.noise_dim))
            if b.shape != (n_probe, self.dim) or not np.all(np.isfinite(b)):
                raise ValueError(f"{self.name}: drift is not total/finite in regime {i}")
            if not np.all(np.isfinite(s)):
                raise ValueError(f"{self.name}: diffusion is not finite in regime {i}")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    regimes: np.ndarray
    seed_tag: str = ""

    def value_at(self, t) -> np.ndarray:
        """Linear interpolation of the diffusion component."""
        t = np.atleast_1d(np.asarray(t, float))
        if np.any(t < self.times[0]) or np.any(t > self.times[-1]):
            raise errors.HorizonExceeded(f"requested time beyond [0, {self.times[-1]:g}]")
        return np.stack([np.interp(t, self.times, self.x[:, k]) for k in range(self.x.shape[1])],
                        axis=-1)

    def regime_at(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, float))
        if np.any(t > self.times[-1]):
            raise errors.HorizonExceeded(f"requested time beyond {self.times[-1]:g}")
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.regimes[idx]

    def write_csv(self, path):
        d = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x_{k + 1}" for k in range(d)] + ["regime"])
            for t, xv, r in zip(self.times, self.x, self.regimes):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in xv] + [int(r)])


# --------------------------------------------------------------------------
# built-in models

def _sgn_pow(x, q):
    return np.sign(x) * np.abs(x) ** q


def _two_state(rate):
    return chainmod.validate_generator([[-rate, rate], [rate, -rate]])


def _const_sigma(values):
    sig = np.asarray(values, float).reshape(-1, 1, 1)
    return lambda x, i: sig[i]


def tv_example(b: float = 1.0, s: float = 2.0, sigma=(1.0, 1.0), rate: float = 1.0) -> RSModel:
    """Drift ``b`` in regime 0 and ``-sgn(x)|x|^s`` in regime 1, constant noise."""
    def drift(x, i):
        return np.full_like(x, b) if i == 0 else -_sgn_pow(x, s)
    return RSModel(1, 1, drift, _const_sigma(sigma), _two_state(rate), True, "tv-example",
                   {"b": b, "s": s, "sigma": list(sigma), "rate": rate})


def ode_example(b: float = 0.0, q: float = 2.0, rate: float = 1.0) -> RSModel:
    """Deterministic flows ``x + bt`` (regime 0) and ``-sgn(x)|x|^q`` (regime 1)."""
    if q <= 1:
        raise errors.InvalidExponent(f"q = {q} must exceed 1")

    def drift(x, i):
        return np.full_like(x, b) if i == 0 else -_sgn_pow(x, q)
    return RSModel(1, 1, drift, _const_sigma((0.0, 0.0)), _two_state(rate), True, "ode-example",
                   {"b": b, "q": q, "rate": rate})


def noise_example(b: float = 0.0, q: float = 2.0, sigma=(1.0, 1.0), rate: float = 1.0) -> RSModel:
    """The ODE example driven by additive regime-dependent noise."""
    if q <= 1:
        raise errors.InvalidExponent(f"q = {q} must exceed 1")

    def drift(x, i):
        return np.full_like(x, b) if i == 0 else -_sgn_pow(x, q)
    return RSModel(1, 1, drift, _const_sigma(sigma), _two_state(rate), True, "noise-example",
                   {"b": b, "q": q, "sigma": list(sigma), "rate": rate})


def degenerate_example(dim: int = 2, contraction: float = 1.0, expansion: float = 0.5,
                       radius: float = 1.0, sigma_inner: float = 1.0, sigma_outer: float = 0.5,
                       rate: float = 1.0) -> RSModel:
    """Diffusion that degenerates outside a ball in regime 0.

    Regime 0 contracts radially with noise supported on ``|x| < radius``
    (a C^1 bump); regime 1 is a linear drift with everywhere-positive noise.
    """
    eye = np.eye(dim)

    def drift(x, i):
        return -contraction * x if i == 0 else expansion * x

    def diffusion(x, i):
        x = np.asarray(x, float)
        if i == 0:
            r2 = np.sum(x * x, axis=-1) / radius ** 2
            amp = sigma_inner * np.clip(1.0 - r2, 0.0, None) ** 2
        else:
            amp = np.full(x.shape[:-1], sigma_outer)
        return amp[..., None, None] * eye

    return RSModel(dim, dim, drift, diffusion, _two_state(rate), False, "degenerate-example",
                   {"dim": dim, "contraction": contraction, "expansion": expansion,
                    "radius": radius, "sigma_inner": sigma_inner,
                    "sigma_outer": sigma_outer, "rate": rate})


BUILTIN_MODELS = {
    "tv-example": tv_example,
    "ode-example": ode_example,
    "noise-example": noise_example,
    "degenerate-example": degenerate_example,
}


def builtin_model(name: str, **params) -> RSModel:
    try:
        factory = BUILTIN_MODELS[name]
    except KeyError:
        raise errors.ConfigError(f"unknown model {name!r}; known: {sorted(BUILTIN_MODELS)}") from None
    if "sigma" in params:
        params["sigma"] = tuple(params["sigma"])
    return factory(**params)


def exact_example_solution(x: float, i: int, t: float, b: float = 0.0, q: float = 2.0) -> float:
    """Closed-form flows of the frozen-regime ODE example."""
    if q <= 1:
        raise errors.InvalidExponent(f"q = {q} must exceed 1")
    if t < 0:
        raise errors.NegativeTime(f"t = {t} < 0")
    if i == 0:
        return x + b * t
    if x == 0:
        return 0.0
    return math.copysign((abs(x) ** (1 - q) + (q - 1) * t) ** (1 / (1 - q)), x)


# --------------------------------------------------------------------------
# switching sources for the integrator

class _PaddedSource:
    """Replays pre-simulated chain events."""

    def __init__(self, batch: ChainBatch):
        self.times = np.concatenate([batch.times, np.full((batch.size, 1), np.inf)], axis=1)
        self.states = np.concatenate([batch.states, np.full((batch.size, 1), -1)], axis=1)
        self.ptr = np.zeros(batch.size, dtype=int)
        self._rows = np.arange(batch.size)

    def next_times(self):
        return self.times[self._rows, self.ptr]

    def fire(self, rows, x_rows, regimes_rows, rng):
        new = self.states[rows, self.ptr[rows]]
        self.ptr[rows] += 1
        return new


class _ThinningSource:
    """Candidate switches at rate ``rate_bound``, accepted with ``q_ij(x)/rate_bound``."""

    def __init__(self, gen: StateDependentGenerator, size: int, rng):
        self.gen = gen
        self.bound = gen.rate_bound
        if self.bound > 0:
            self.next = rng.exponential(1.0 / self.bound, size)
        else:
            self.next = np.full(size, np.inf)

    def next_times(self):
        return self.next

    def fire(self, rows, x_rows, regimes_rows, rng):
        new = regimes_rows.copy()
        u = rng.random(rows.size) * self.bound
        for k, (xr, s) in enumerate(zip(x_rows, regimes_rows)):
            probs = np.clip(self.gen.at(xr)[s], 0.0, None)
            probs[s] = 0.0
            j = int(np.searchsorted(np.cumsum(probs), u[k], side="right"))
            if j < self.gen.n:
                new[k] = j
        self.next[rows] += rng.exponential(1.0 / self.bound, rows.size)
        return new


def _make_source(model: RSModel, i0, size, T, rng):
    if isinstance(model.switching, StateDependentGenerator):
        return _ThinningSource(model.switching, size, rng)
    return _PaddedSource(chainmod.simulate_chain_batch(model.switching, i0, T, rng, size=size))


def _default_tamed(h, tamed):
    return h > TAME_AUTO_THRESHOLD if tamed is None else bool(tamed)


def time_grid(T: float, h: float, extra: Sequence[float] = ()) -> np.ndarray:
    """Uniform grid of step ``h`` on ``[0, T]`` merged with ``extra`` times."""
    n = int(math.floor(T / h + 1e-9))
    grid = np.arange(n + 1) * h
    grid = np.concatenate([grid, [T], np.asarray(extra, float)])
    grid = np.unique(grid[(grid >= 0) & (grid <= T)])
    # drop slivers created by floating point near-duplicates
    keep = np.concatenate([[True], np.diff(grid) > 1e-12 * max(1.0, T)])
    return grid[keep]


class _Engine:
    """Euler-Maruyama for ``K`` path families sharing Brownian increments.

    ``x`` has shape ``(K, N, d)``; ``regimes`` ``(K, N)``; ``sources`` holds one
    switching source per family.
    """

    def __init__(self, model: RSModel, x, regimes, sources, rng, tamed: bool):
        self.model = model
        self.x = np.array(x, float)
        self.regimes = np.array(regimes, int)
        self.sources = sources
        self.rng = rng
        self.tamed = tamed
        self.K, self.N, self.d = self.x.shape
        self.n = model.noise_dim
        self.n_reg = model.n_regimes
        self.state_free_sigma = model.diffusion_state_free
        if self.state_free_sigma:
            self._sig = np.stack([np.broadcast_to(model.diffusion(np.zeros(self.d), i),
                                                  (self.d, self.n))
                                  for i in range(self.n_reg)])
            self._zero_noise = not np.any(self._sig)
        else:
            self._zero_noise = False
        self.merged = None

    def _drift(self, x, reg):
        if self.n_reg == 1:
            return self.model.drift(x, 0)
        out = np.empty_like(x)
        for i in range(self.n_reg):
            m = reg == i
            if m.any():
                out[m] = self.model.drift(x[m], i)
        return out

    def _noise(self, x, reg, inc):
        if self._zero_noise:
            return 0.0
        if self.state_free_sigma:
            sig = self._sig[reg]
        else:
            sig = np.empty(x.shape + (self.n,))
            for i in range(self.n_reg):
                m = reg == i
                if m.any():
                    sig[m] = np.broadcast_to(self.model.diffusion(x[m], i),
                                             (int(m.sum()), self.d, self.n))
        if self.d == 1 and self.n == 1:
            return sig[..., 0, 0:1] * inc
        return np.einsum("...ij,...j->...i", sig, inc)

    def _advance(self, rows, dt, inc):
        """Move families at ``rows`` by time ``dt`` (per row) and noise ``inc``."""
        dtc = dt[:, None]
        for k in range(self.K):
            x = self.x[k] if rows is None else self.x[k, rows]
            reg = self.regimes[k] if rows is None else self.regimes[k, rows]
            b = self._drift(x, reg)
            if self.tamed:
                norm = np.sqrt(np.sum(b * b, axis=-1, keepdims=True))
                step = b * dtc / (1.0 + dtc * norm)
            else:
                step = b * dtc
            new = x + step + self._noise(x, reg, inc)
            if rows is None:
                self.x[k] = new
            else:
                self.x[k, rows] = new
        if self.merged is not None:
            self._sync_merged()

    def _sync_merged(self):
        m = self.merged
        if m.any():
            for k in range(1, self.K):
                self.x[k, m] = self.x[0, m]

    def step(self, t0, t1, on_event=None):
        N, n = self.N, self.n
        h = t1 - t0
        dw = self.rng.standard_normal((N, n)) * math.sqrt(h)
        cur = np.full(N, t0)
        while True:
            nts = np.stack([s.next_times() for s in self.sources])
            nt = nts.min(axis=0)
            hit = nt <= t1
            if not hit.any():
                break
            rows = np.flatnonzero(hit)
            tev = nt[rows]
            sub = tev - cur[rows]
            span = t1 - cur[rows]
            w = np.divide(sub, span, out=np.ones_like(sub), where=span > 0)
            z = self.rng.standard_normal((rows.size, n))
            inc = w[:, None] * dw[rows] + np.sqrt(np.clip(sub * (1.0 - w), 0.0, None))[:, None] * z
            self._advance(rows, sub, inc)
            dw[rows] -= inc
            cur[rows] = tev
            for k, src in enumerate(self.sources):
                fire = nts[k, rows] == tev
                if fire.any():
                    fr = rows[fire]
                    self.regimes[k, fr] = src.fire(fr, self.x[k, fr], self.regimes[k, fr], self.rng)
            if on_event is not None:
                on_event(rows, tev)
        self._advance(None, t1 - cur, dw)
        if not np.all(np.isfinite(self.x)):
            k, r = np.argwhere(~np.all(np.isfinite(self.x), axis=-1))[0]
            raise errors.NonFiniteState(t1, int(self.regimes[k, r]))


def integrate(model: RSModel, x0, i0: int, T: float, h: float, rng=None,
              tamed: bool | None = None, seed_tag: str = "") -> Trajectory:
    """One trajectory on ``[0, T]`` with step ``h``, split at every switch.

    The recorded grid contains the uniform grid and every switching time;
    at a switching time the recorded regime is the post-jump regime while
    the step ending there used the pre-jump regime.
    """
    if T <= 0:
        raise ValueError(f"T = {T} must be positive")
    if h <= 0:
        raise ValueError(f"h = {h} must be positive")
    if h > T:
        raise errors.StepTooLarge(f"h = {h} exceeds T = {T}")
    rng = as_generator(rng)
    x0 = np.atleast_1d(np.asarray(x0, float)).reshape(model.dim)
    src = _make_source(model, np.array([i0]), 1, T, rng)
    eng = _Engine(model, x0[None, None, :], [[i0]], [src], rng, _default_tamed(h, tamed))
    times, xs, regs = [0.0], [x0.copy()], [int(i0)]

    def on_event(rows, tev):
        times.append(float(tev[0]))
        xs.append(eng.x[0, 0].copy())
        regs.append(int(eng.regimes[0, 0]))

    grid = time_grid(T, h)
    for t0, t1 in zip(grid[:-1], grid[1:]):
        eng.step(t0, t1, on_event)
        if times[-1] < t1:
            times.append(float(t1))
            xs.append(eng.x[0, 0].copy())
            regs.append(int(eng.regimes[0, 0]))
    return Trajectory(np.array(times), np.array(xs), np.array(regs, dtype=int), seed_tag)


@dataclass
class BatchRecord:
    """Snapshots of ``N`` replicates at ``times``: ``x`` ``(T, N, d)``, ``regimes`` ``(T, N)``."""

    times: np.ndarray
    x: np.ndarray
    regimes: np.ndarray


def simulate_batch(model: RSModel, x0, i0, T: float, h: float, size: int, rng=None,
                   record_times: Sequence[float] = (), tamed: bool | None = None) -> BatchRecord:
    """Integrate ``size`` independent replicates and snapshot them."""
    if h > T:
        raise errors.StepTooLarge(f"h = {h} exceeds T = {T}")
    rng = as_generator(rng)
    x0 = np.broadcast_to(np.asarray(x0, float).reshape(-1, model.dim), (size, model.dim))
    i0 = np.broadcast_to(np.asarray(i0, int), (size,)).copy()
    src = _make_source(model, i0, size, T, rng)
    eng = _Engine(model, x0[None], i0[None], [src], rng, _default_tamed(h, tamed))
    rec = np.asarray(sorted(set(float(t) for t in record_times)) or [T])
    grid = time_grid(T, h, rec)
    xs, regs = [], []
    want = set(np.round(rec, 12))
    if 0.0 in want:
        xs.append(eng.x[0].copy())
        regs.append(eng.regimes[0].copy())
    for t0, t1 in zip(grid[:-1], grid[1:]):
        eng.step(t0, t1)
        if round(t1, 12) in want:
            xs.append(eng.x[0].copy())
            regs.append(eng.regimes[0].copy())
    return BatchRecord(rec, np.array(xs), np.array(regs))


# --------------------------------------------------------------------------
# diagnostics

@dataclass(frozen=True)
class GrowthReport:
    K_hat: float
    grid: np.ndarray
    margin: tuple
    vartheta: float | None
    below_vartheta: bool | None

    def summary(self) -> dict:
        return {"K_hat": self.K_hat, "argmax_x": np.asarray(self.margin[0]).tolist(),
                "argmax_regime": int(self.margin[1]), "vartheta": self.vartheta,
                "K_below_vartheta": self.below_vartheta}


def _probe_points(radial_grid, directions, dim):
    radii = np.asarray(radial_grid, float)
    if directions is None:
        directions = np.vstack([np.eye(dim), -np.eye(dim)])
    dirs = np.asarray(directions, float).reshape(-1, dim)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    return (radii[:, None, None] * dirs[None]).reshape(-1, dim)


def linear_growth_constant(model: RSModel, radial_grid=None, directions=None) -> GrowthReport:
    """Grid estimate of the smallest ``K`` with ``2<x,b> + Tr(ss^T) <= K(1+|x|^2)``."""
    if not model.diffusion_state_free:
        raise errors.StateDependentDiffusion(f"{model.name}: sigma must depend on the regime only")
    if radial_grid is None:
        radial_grid = np.concatenate([[0.0], np.geomspace(1e-3, 1e3, 241)])
    pts = _probe_points(radial_grid, directions, model.dim)
    if pts.size == 0:
        raise ValueError("probe grid is empty")
    best, where = -np.inf, (None, None)
    for i in range(model.n_regimes):
        sig = model.sigma(i)
        tr = float(np.trace(sig @ sig.T))
        b = np.asarray(model.drift(pts, i))
        ratio = (2.0 * np.sum(pts * b, axis=1) + tr) / (1.0 + np.sum(pts * pts, axis=1))
        k = int(np.argmax(ratio))
        if ratio[k] > best:
            best, where = float(ratio[k]), (pts[k].copy(), i)
    vartheta = below = None
    if model.switching_state_free and model.switching.irreducible and model.n_regimes > 1:
        vartheta = chainmod.coupling_constants(model.switching).vartheta
        below = bool(0 < best < vartheta)
    return GrowthReport(best, pts, where, vartheta, below)


@dataclass
class MomentCurve:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n: int
    bound: np.ndarray
    K: float


def second_moment_curve(model: RSModel, x0, i0: int, times, N: int, h: float = 1e-2, rng=None,
                        K: float | None = None, tamed: bool | None = None) -> MomentCurve:
    """Monte Carlo ``E|X(t)|^2`` with the growth bound ``(1+|x0|^2) e^{Kt}``."""
    if N < 100:
        raise ValueError(f"N = {N} < 100 replicates")
    times = np.asarray(times, float)
    if K is None:
        K = linear_growth_constant(model).K_hat
    rec = simulate_batch(model, x0, i0, float(times.max()), h, N, rng, times, tamed)
    sq = np.sum(rec.x ** 2, axis=-1)
    mean = sq.mean(axis=1)
    se = sq.std(axis=1, ddof=1) / math.sqrt(N)
    x0 = np.atleast_1d(np.asarray(x0, float))
    bound = (1.0 + float(x0 @ x0)) * np.exp(K * rec.times)
    return MomentCurve(rec.times, mean, se, N, bound, float(K))
