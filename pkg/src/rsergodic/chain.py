"""Finite-state continuous-time Markov chains.

Generator validation, invariant law, transition semigroup by
uniformization, the coupling constants ``zeta`` / ``vartheta`` and
simulation (exact, thinned, and vectorized over replicates).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import errors
from .rng import as_generator

ROW_SUM_TOL = 1e-12
UNIFORMIZATION_TAIL = 1e-12
# Poisson weights e^{-L} underflow for large L; the semigroup is split so
# each factor has L <= this value.
_MAX_POISSON_MEAN = 30.0


@dataclass(frozen=True)
class GeneratorMatrix:
    """Validated generator of a finite-state chain (rates per unit time)."""

    q: np.ndarray
    irreducible: bool

    def __post_init__(self):
        self.q.setflags(write=False)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.q)

    def jump_matrix(self) -> np.ndarray:
        """Embedded jump chain; absorbing states keep a unit diagonal."""
        rates = self.exit_rates
        out = np.zeros_like(self.q)
        for i in range(self.n):
            if rates[i] > 0:
                out[i] = self.q[i] / rates[i]
                out[i, i] = 0.0
            else:
                out[i, i] = 1.0
        return out

    def to_config(self) -> dict:
        return {"rates": self.q.tolist()}


def validate_generator(raw) -> GeneratorMatrix:
    """Check a rate matrix and wrap it as a :class:`GeneratorMatrix`.

    Off-diagonal entries must be nonnegative and each row must sum to zero
    within ``1e-12``.  Irreducibility is decided by strong connectivity of
    the digraph of strictly positive rates.
    """
    q = np.array(raw, dtype=float)
    if q.size == 0:
        raise errors.EmptyMatrix("generator has no entries")
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise errors.GeneratorError(f"generator must be square, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise errors.GeneratorError("generator has non-finite entries")
    off = q - np.diag(np.diag(q))
    if np.any(off < 0):
        i, j = np.argwhere(off < 0)[0]
        raise errors.NegativeOffDiagonal(f"q[{i},{j}] = {q[i, j]} < 0")
    sums = q.sum(axis=1)
    bad = np.abs(sums) > ROW_SUM_TOL
    if np.any(bad):
        i = int(np.argmax(bad))
        raise errors.RowSumNonzero(f"row {i} sums to {sums[i]:.3g}")
    n_comp, _ = connected_components(off > 0, directed=True, connection="strong")
    return GeneratorMatrix(q=q, irreducible=bool(n_comp == 1))


def as_generator_matrix(gen) -> GeneratorMatrix:
    return gen if isinstance(gen, GeneratorMatrix) else validate_generator(gen)


def generator_from_config(cfg: dict) -> GeneratorMatrix:
    """Build a generator from ``{"rates": [[...], ...]}`` (dense, row-major).

    The shortcut ``{"symmetric": r, "n": 2}`` gives the two-state chain with
    both switching rates equal to ``r``.
    """
    if "rates" in cfg:
        return validate_generator(cfg["rates"])
    if "symmetric" in cfg:
        r = float(cfg["symmetric"])
        n = int(cfg.get("n", 2))
        q = np.full((n, n), r / (n - 1)) if n > 1 else np.zeros((1, 1))
        np.fill_diagonal(q, 0.0)
        np.fill_diagonal(q, -q.sum(axis=1))
        return validate_generator(q)
    raise errors.ConfigError("generator config needs 'rates' or 'symmetric'")


@dataclass(frozen=True)
class StateDependentGenerator:
    """Position-dependent switching rates ``Q(x)`` with a uniform bound.

    ``rate_bound`` must dominate every exit rate ``-q_ii(x)``; it is the
    thinning majorant.  Violations are detected lazily on evaluation.
    """

    base: Callable[[np.ndarray], np.ndarray]
    rate_bound: float
    n: int

    def at(self, x) -> np.ndarray:
        q = np.asarray(self.base(np.asarray(x, dtype=float)), dtype=float)
        if q.shape != (self.n, self.n):
            raise errors.GeneratorError(f"Q(x) has shape {q.shape}, expected {(self.n, self.n)}")
        off = q - np.diag(np.diag(q))
        if np.any(off < 0) or np.any(np.abs(q.sum(axis=1)) > ROW_SUM_TOL):
            raise errors.GeneratorError(f"Q(x) at x={x} is not a generator")
        worst = float(np.max(-np.diag(q)))
        if worst > self.rate_bound * (1 + 1e-12):
            raise errors.RateBoundViolated(
                f"exit rate {worst:g} at x={x} exceeds the bound {self.rate_bound:g}"
            )
        return q

    @classmethod
    def constant(cls, gen: GeneratorMatrix, rate_bound: float | None = None):
        """Wrap a constant generator (used to test the thinning path)."""
        q = gen.q.copy()
        bound = float(np.max(gen.exit_rates)) if rate_bound is None else float(rate_bound)
        return cls(base=lambda x: q, rate_bound=bound, n=gen.n)


@dataclass(frozen=True)
class ChainPath:
    """Right-continuous piecewise-constant path on ``[0, horizon]``."""

    initial_state: int
    times: np.ndarray
    states: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.states, dtype=int)
        if t.size:
            if np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] > self.horizon:
                raise ValueError("event times must be strictly increasing in (0, horizon]")
            prev = np.concatenate([[self.initial_state], s[:-1]])
            if np.any(prev == s):
                raise ValueError("consecutive states must differ")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    def state_at(self, t):
        """Regime at time(s) ``t`` (right-continuous)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        vals = np.concatenate([[self.initial_state], self.states])
        return vals[idx]

    def occupation(self, n_states: int) -> np.ndarray:
        """Time spent in each state over ``[0, horizon]``."""
        edges = np.concatenate([[0.0], self.times, [self.horizon]])
        vals = np.concatenate([[self.initial_state], self.states])
        return np.bincount(vals, weights=np.diff(edges), minlength=n_states)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "state"])
            w.writerow([repr(0.0), self.initial_state])
            for t, s in zip(self.times, self.states):
                w.writerow([repr(float(t)), int(s)])

    @classmethod
    def read_csv(cls, path, horizon: float):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        times = [float(r["time"]) for r in rows[1:]]
        states = [int(r["state"]) for r in rows[1:]]
        return cls(int(rows[0]["state"]), np.array(times), np.array(states, dtype=int), horizon)


@dataclass(frozen=True)
class CouplingConstants:
    zeta: float
    vartheta: float

    def tail_bound(self, t):
        """``exp(-vartheta * floor(t))``, the coalescence-time survival bound."""
        return np.exp(-self.vartheta * np.floor(np.asarray(t, dtype=float)))


def _require_irreducible(gen: GeneratorMatrix):
    if not gen.irreducible:
        raise errors.ReducibleChain("chain is not irreducible")


def invariant_distribution(gen) -> np.ndarray:
    """Solve ``lam Q = 0``, ``sum(lam) = 1`` for an irreducible generator.

    The last balance equation is replaced by the normalization row, which
    makes the system nonsingular for irreducible chains.
    """
    gen = as_generator_matrix(gen)
    _require_irreducible(gen)
    a = gen.q.T.copy()
    a[-1, :] = 1.0
    rhs = np.zeros(gen.n)
    rhs[-1] = 1.0
    lam = np.linalg.solve(a, rhs)
    # one step of iterative refinement keeps the residual at roundoff level
    resid = rhs - a @ lam
    lam = lam + np.linalg.solve(a, resid)
    return lam


def _uniformized(q: np.ndarray, t: float) -> np.ndarray:
    n = q.shape[0]
    rate = float(np.max(-np.diag(q)))
    if rate == 0.0 or t == 0.0:
        return np.eye(n)
    p = np.eye(n) + q / rate
    mean = rate * t
    w = math.exp(-mean)
    term = np.eye(n)
    out = w * term
    total = w
    k = 0
    k_max = int(mean + 40.0 * math.sqrt(mean) + 60)
    while 1.0 - total > UNIFORMIZATION_TAIL and k < k_max:
        k += 1
        term = term @ p
        w *= mean / k
        out += w * term
        total += w
    return out


def transition_matrix(gen, t: float) -> np.ndarray:
    """``P(t) = exp(tQ)`` by uniformization.

    The Poisson series is truncated once the remaining mass is below
    ``1e-12``.  Large ``rate * t`` is handled by splitting ``t`` into equal
    pieces and multiplying the factors (Chapman-Kolmogorov).
    """
    gen = as_generator_matrix(gen)
    if t < 0:
        raise errors.NegativeTime(f"t = {t} < 0")
    rate = float(np.max(gen.exit_rates)) if gen.n else 0.0
    pieces = max(1, math.ceil(rate * t / _MAX_POISSON_MEAN))
    step = _uniformized(gen.q, t / pieces)
    return np.linalg.matrix_power(step, pieces) if pieces > 1 else step


def coupling_constants(gen) -> CouplingConstants:
    """``zeta = min_ij P_ij(1)`` and ``vartheta = -log(1 - zeta)``."""
    gen = as_generator_matrix(gen)
    _require_irreducible(gen)
    if gen.n < 2:
        raise errors.ReducibleChain("a one-state chain has no coupling constants")
    zeta = float(np.min(transition_matrix(gen, 1.0)))
    return CouplingConstants(zeta=zeta, vartheta=-math.log1p(-zeta))


def simulate_chain(gen, i0: int, T: float, rng=None, position_feed=None) -> ChainPath:
    """Simulate one chain path on ``[0, T]``.

    A constant generator is simulated exactly (exponential holding times).
    A :class:`StateDependentGenerator` is simulated by thinning: candidate
    times arrive at rate ``rate_bound``, and at a candidate time ``t`` the
    move ``i -> j`` is accepted with probability ``q_ij(x(t)) / rate_bound``
    where ``x(t) = position_feed(t)``.
    """
    if T < 0:
        raise errors.NegativeTime(f"T = {T} < 0")
    rng = as_generator(rng)
    times, states = [], []
    t, s = 0.0, int(i0)
    if isinstance(gen, StateDependentGenerator):
        if position_feed is None:
            raise ValueError("a state-dependent generator needs position_feed")
        bound = gen.rate_bound
        if bound <= 0:
            return ChainPath(s, np.empty(0), np.empty(0, dtype=int), T)
        while True:
            t += rng.exponential(1.0 / bound)
            if t > T:
                break
            q = gen.at(position_feed(t))
            probs = np.clip(q[s], 0.0, None)
            probs[s] = 0.0
            u = rng.random() * bound
            cum = np.cumsum(probs)
            j = int(np.searchsorted(cum, u, side="right"))
            if j < gen.n:
                s = j
                times.append(t)
                states.append(s)
    else:
        gen = as_generator_matrix(gen)
        rates = gen.exit_rates
        jump = gen.jump_matrix()
        while rates[s] > 0:
            t += rng.exponential(1.0 / rates[s])
            if t > T:
                break
            s = int(rng.choice(gen.n, p=jump[s]))
            times.append(t)
            states.append(s)
    return ChainPath(int(i0), np.array(times), np.array(states, dtype=int), float(T))


@dataclass
class ChainBatch:
    """Padded event arrays for ``N`` independent paths.

    ``times[r, k]`` is the k-th event time of path ``r`` (``inf`` padding),
    ``states[r, k]`` the state entered at that time (``-1`` padding).
    """

    initial: np.ndarray
    times: np.ndarray
    states: np.ndarray
    horizon: float

    @property
    def size(self) -> int:
        return self.initial.shape[0]

    def path(self, r: int) -> ChainPath:
        m = np.isfinite(self.times[r])
        return ChainPath(int(self.initial[r]), self.times[r, m], self.states[r, m], self.horizon)

    def state_at(self, t: float) -> np.ndarray:
        idx = (self.times <= t).sum(axis=1)
        full = np.concatenate([self.initial[:, None], self.states], axis=1)
        return full[np.arange(self.size), idx]


def simulate_chain_batch(gen, i0, T: float, rng=None, size: int | None = None) -> ChainBatch:
    """Vectorized exact simulation of many constant-generator paths."""
    gen = as_generator_matrix(gen)
    rng = as_generator(rng)
    i0 = np.asarray(i0, dtype=int)
    if i0.ndim == 0:
        i0 = np.full(size or 1, int(i0))
    n_paths = i0.shape[0]
    rates = gen.exit_rates
    cum = np.cumsum(gen.jump_matrix(), axis=1)
    cur_t = np.zeros(n_paths)
    cur_s = i0.copy()
    active = rates[cur_s] > 0
    cols_t, cols_s = [], []
    while np.any(active):
        idx = np.flatnonzero(active)
        dt = rng.exponential(1.0, idx.size) / rates[cur_s[idx]]
        new_t = cur_t[idx] + dt
        alive = new_t <= T
        u = rng.random(idx.size)
        nxt = (u[:, None] >= cum[cur_s[idx]]).sum(axis=1)
        nxt = np.minimum(nxt, gen.n - 1)
        col_t = np.full(n_paths, np.inf)
        col_s = np.full(n_paths, -1)
        keep = idx[alive]
        col_t[keep] = new_t[alive]
        col_s[keep] = nxt[alive]
        cur_t[keep] = new_t[alive]
        cur_s[keep] = nxt[alive]
        active[idx[~alive]] = False
        active[keep] = rates[cur_s[keep]] > 0
        cols_t.append(col_t)
        cols_s.append(col_s)
    if cols_t:
        times = np.stack(cols_t, axis=1)
        states = np.stack(cols_s, axis=1)
    else:
        times = np.full((n_paths, 0), np.inf)
        states = np.full((n_paths, 0), -1)
    return ChainBatch(i0, times, states, float(T))


@dataclass(frozen=True)
class CouplingSample:
    """Coalescence time of two independent chains and the merged pair.

    ``path_a`` is the chain from ``i``; ``path_b`` follows the independent
    copy from ``j`` before ``tau`` and ``path_a`` afterwards.
    """

    tau: float
    path_a: ChainPath
    path_b: ChainPath = field(repr=False)


def sample_coupling_time(gen, i: int, j: int, rng=None, horizon: float | None = None,
                         max_events: int = 10_000_000) -> CouplingSample:
    """Run two independent chains from ``i`` and ``j`` until they agree.

    Agreement is checked after every event of either chain (both are
    constant in between).  The returned paths extend to
    ``max(tau, horizon)``.
    """
    gen = as_generator_matrix(gen)
    _require_irreducible(gen)
    rng = as_generator(rng)
    rates = gen.exit_rates
    jump = gen.jump_matrix()
    ta, sa, tb, sb = [], [], [], []
    t, a, b = 0.0, int(i), int(j)
    events = 0
    while a != b:
        ra, rb = rates[a], rates[b]
        t += rng.exponential(1.0 / (ra + rb))
        if rng.random() * (ra + rb) < ra:
            a = int(rng.choice(gen.n, p=jump[a]))
            ta.append(t)
            sa.append(a)
        else:
            b = int(rng.choice(gen.n, p=jump[b]))
            tb.append(t)
            sb.append(b)
        events += 1
        if events >= max_events:
            raise errors.CouplingTimeout(f"no coalescence after {max_events} events (t={t:g})")
    tau = t
    end = tau if horizon is None else max(tau, float(horizon))
    if end > tau:
        tail = simulate_chain(gen, a, end - tau, rng)
        ta.extend(tau + tail.times)
        sa.extend(tail.states)
    path_a = ChainPath(int(i), np.array(ta), np.array(sa, dtype=int), end)
    after = np.array(ta) > tau
    merged_t = np.concatenate([np.array(tb), np.array(ta)[after]])
    merged_s = np.concatenate([np.array(sb, dtype=int), np.array(sa, dtype=int)[after]])
    path_b = ChainPath(int(j), merged_t, merged_s, end)
    return CouplingSample(tau=tau, path_a=path_a, path_b=path_b)


def sample_coupling_times(gen, i: int, j: int, size: int, rng=None,
                          max_rounds: int = 10_000_000) -> np.ndarray:
    """Vectorized draw of ``size`` independent coalescence times."""
    gen = as_generator_matrix(gen)
    _require_irreducible(gen)
    rng = as_generator(rng)
    rates = gen.exit_rates
    cum = np.cumsum(gen.jump_matrix(), axis=1)
    tau = np.zeros(size)
    if i == j:
        return tau
    a = np.full(size, int(i))
    b = np.full(size, int(j))
    live = np.arange(size)
    rounds = 0
    while live.size:
        ra, rb = rates[a[live]], rates[b[live]]
        total = ra + rb
        tau[live] += rng.exponential(1.0, live.size) / total
        move_a = rng.random(live.size) * total < ra
        src = np.where(move_a, a[live], b[live])
        nxt = (rng.random(live.size)[:, None] >= cum[src]).sum(axis=1)
        nxt = np.minimum(nxt, gen.n - 1)
        a[live[move_a]] = nxt[move_a]
        b[live[~move_a]] = nxt[~move_a]
        live = live[a[live] != b[live]]
        rounds += 1
        if rounds >= max_rounds:
            raise errors.CouplingTimeout(f"{live.size} pairs not coalesced after {rounds} rounds")
    return tau


def coalescence_times(batch_a: ChainBatch, batch_b: ChainBatch) -> np.ndarray:
    """First time two batches of paths agree (``inf`` if not by the horizon).

    Vectorized: both event grids are merged per row and the states compared
    at every merged event time.
    """
    n = batch_a.size
    horizon = batch_a.horizon
    start_equal = batch_a.initial == batch_b.initial
    ev = np.concatenate([batch_a.times, batch_b.times], axis=1)
    ev = np.sort(ev, axis=1)
    out = np.full(n, np.inf)
    out[start_equal] = 0.0
    if ev.shape[1] == 0:
        return out
    sa = _states_at_rowwise(batch_a, ev)
    sb = _states_at_rowwise(batch_b, ev)
    hit = (sa == sb) & np.isfinite(ev) & (ev <= horizon)
    first = np.argmax(hit, axis=1)
    found = hit[np.arange(n), first] & ~start_equal
    out[found] = ev[np.arange(n), first][found]
    return out


def _states_at_rowwise(batch: ChainBatch, query: np.ndarray) -> np.ndarray:
    # per-row searchsorted via a row offset on a flattened, finite key
    n, m = batch.times.shape
    span = 2.0 * batch.horizon + 2.0
    offs = np.arange(n)[:, None] * span
    t = np.where(np.isfinite(batch.times), batch.times, batch.horizon + 1.0) + offs
    qv = np.where(np.isfinite(query), query, batch.horizon + 1.0) + offs
    if m == 0:
        return np.repeat(batch.initial[:, None], query.shape[1], axis=1)
    idx = np.searchsorted(t.ravel(), qv.ravel(), side="right").reshape(query.shape)
    idx = idx - (np.arange(n)[:, None] * m)
    full = np.concatenate([batch.initial[:, None], batch.states], axis=1)
    return np.take_along_axis(full, idx, axis=1)


def merged_batch(batch_a: ChainBatch, batch_b: ChainBatch, tau: np.ndarray) -> ChainBatch:
    """Chain ``b`` before ``tau`` and chain ``a`` after, row by row."""
    keep_b = batch_b.times <= tau[:, None]
    keep_a = batch_a.times > tau[:, None]
    times = np.concatenate([np.where(keep_b, batch_b.times, np.inf),
                            np.where(keep_a, batch_a.times, np.inf)], axis=1)
    states = np.concatenate([np.where(keep_b, batch_b.states, -1),
                             np.where(keep_a, batch_a.states, -1)], axis=1)
    order = np.argsort(times, axis=1, kind="stable")
    times = np.take_along_axis(times, order, axis=1)
    states = np.take_along_axis(states, order, axis=1)
    width = int(np.isfinite(times).sum(axis=1).max()) if times.size else 0
    return ChainBatch(batch_b.initial.copy(), times[:, :width], states[:, :width], batch_a.horizon)
