"""Running paths to first exceedance of a level and extracting the statistics
that enter the conditional limit theorems.

Paths are simulated in vectorized blocks: each round draws a ``(rows, K)``
matrix of cycles, accumulates the cycle-boundary walk and checks, cycle by
cycle, for a within-cycle exceedance (``Z_{n-1} + xi*_n > x``) or a drop
below the barrier ``-s x``.  A hit path keeps running until the embedded
walk itself exceeds ``x`` so that ``tau_rw``, ``T_pre`` and ``Z_before`` are
exact.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .models import ProcessModel

__all__ = [
    "StopRule",
    "ExceedanceRecord",
    "RecordBatch",
    "CSV_HEADER",
    "run_path",
    "simulate_paths",
    "quadruple",
    "decomposition_stats",
    "default_max_cycles",
    "JumpHazard",
    "mixture_paths",
]

CSV_HEADER = ["hit", "tau", "tau_rw", "tau_hat_rw", "T_pre", "t_in_cycle",
              "Z_before", "overshoot", "max_dev", "weight", "steps_run"]

# path status codes
ACTIVE, CONT, HIT, NOHIT, INCONCLUSIVE, READY, REJECT = range(7)

CHUNK_BUDGET = 1 << 19


def default_max_cycles(x: float, s: float, a: float) -> int:
    return int(min(max(math.ceil(100.0 * s * max(x, 1.0) / a), 10_000), 10_000_000))


@dataclass(frozen=True)
class StopRule:
    """Declare no-hit once ``Z_n < -s x``; give up (inconclusive) after ``max_cycles``."""

    s: float = 4.0
    max_cycles: int | None = None

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("barrier multiplier s must be positive")
        if self.max_cycles is not None and self.max_cycles < 1:
            raise ValueError("max_cycles must be >= 1")

    def cap(self, x: float, a: float) -> int:
        return self.max_cycles if self.max_cycles is not None else default_max_cycles(x, self.s, a)

    def missed_mass_bound(self, model: ProcessModel, x: float) -> float:
        """Asymptotic share of exceedances lost to the barrier."""
        den = float(model.asymptote(x))
        return float(model.asymptote((1.0 + self.s) * x)) / den if den > 0 else math.nan


@dataclass
class ExceedanceRecord:
    hit: bool
    tau: float = math.nan
    tau_rw: float = math.nan
    tau_hat_rw: float = math.nan
    T_pre: float = math.nan
    t_in_cycle: float = math.nan
    Z_before: float = math.nan
    overshoot: float = math.nan
    max_dev: float = math.nan
    weight: float = 1.0
    steps_run: int = 0
    inconclusive: bool = False


_COLS = ("tau", "tau_rw", "tau_hat_rw", "T_pre", "t_in_cycle", "Z_before", "overshoot", "max_dev")


@dataclass
class RecordBatch:
    """Columnar exceedance records; ``log_w`` holds log importance weights."""

    hit: np.ndarray
    tau: np.ndarray
    tau_rw: np.ndarray
    tau_hat_rw: np.ndarray
    T_pre: np.ndarray
    t_in_cycle: np.ndarray
    Z_before: np.ndarray
    overshoot: np.ndarray
    max_dev: np.ndarray
    log_w: np.ndarray
    steps_run: np.ndarray
    inconclusive: np.ndarray

    @classmethod
    def empty(cls, n: int = 0) -> "RecordBatch":
        nan = lambda: np.full(n, np.nan)
        return cls(np.zeros(n, bool), nan(), nan(), nan(), nan(), nan(), nan(), nan(), nan(),
                   np.zeros(n), np.zeros(n, np.int64), np.zeros(n, bool))

    def __len__(self):
        return len(self.hit)

    def select(self, mask) -> "RecordBatch":
        return RecordBatch(**{f.name: getattr(self, f.name)[mask] for f in fields(self)})

    @classmethod
    def concat(cls, parts) -> "RecordBatch":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(**{f.name: np.concatenate([getattr(p, f.name) for p in parts]) for f in fields(cls)})

    @property
    def weights(self) -> np.ndarray:
        """Self-normalized weights (sum to one)."""
        if len(self) == 0:
            return np.zeros(0)
        w = np.exp(self.log_w - self.log_w.max())
        return w / w.sum()

    @property
    def ess(self) -> float:
        w = self.weights
        return float(1.0 / np.sum(w * w)) if len(w) else 0.0

    def record(self, i: int) -> ExceedanceRecord:
        return ExceedanceRecord(
            hit=bool(self.hit[i]), **{c: float(getattr(self, c)[i]) for c in _COLS},
            weight=float(math.exp(self.log_w[i])), steps_run=int(self.steps_run[i]),
            inconclusive=bool(self.inconclusive[i]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        w = np.exp(self.log_w - self.log_w.max()) if len(self) else []
        for i in range(len(self)):
            row = [int(self.hit[i])] + [repr(float(getattr(self, c)[i])) for c in _COLS]
            row += [repr(float(w[i])), int(self.steps_run[i])]
            wr.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RecordBatch":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != CSV_HEADER:
            raise ValueError("unexpected record CSV header")
        data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(CSV_HEADER))
        col = {h: data[:, j] for j, h in enumerate(CSV_HEADER)}
        with np.errstate(divide="ignore"):
            log_w = np.log(col["weight"])
        return cls(col["hit"] > 0, *(col[c] for c in _COLS), log_w,
                   col["steps_run"].astype(np.int64), np.zeros(len(data), bool))


class _Paths:
    """Mutable per-path state for one vectorized block."""

    def __init__(self, n, y0, a):
        self.n = n
        self.Z = np.zeros(n)
        self.T = np.zeros(n)
        self.steps = np.zeros(n, np.int64)
        self.y = np.full(n, y0, np.int64)
        self.status = np.full(n, ACTIVE, np.int8)
        self.dev = np.zeros(n)
        self.logw = np.zeros(n)
        self.rec = RecordBatch.empty(n)
        self.a = a


def _first_true(mask):
    """Column index of the first True per row, or K when none."""
    K = mask.shape[1]
    j = np.argmax(mask, axis=1)
    return np.where(mask[np.arange(len(j)), j], j, K)


def _advance(P: _Paths, model: ProcessModel, x: float, rule_s: float, cap: np.ndarray,
             rng: np.random.Generator, full_stats: bool, horizon=None, hazard=None):
    """Run every ACTIVE/CONT path until it resolves or reaches its cycle cap.

    ``horizon`` (per path) marks pre-path mode: ACTIVE paths that complete
    exactly ``horizon`` cycles without an exceedance become READY.

    ``hazard`` switches ACTIVE paths to the jump-mixture proposal: before
    each cycle, with probability ``hazard(x - Z)`` the cycle is drawn by
    ``draw_big`` instead of ``draw``.  ``P.logw`` accumulates the log
    likelihood ratio of the target against this mixture.
    """
    kern = model.kernel
    barrier = -rule_s * x
    a = P.a
    while True:
        idx = np.flatnonzero((P.status == ACTIVE) | (P.status == CONT))
        if idx.size == 0:
            return
        lim = cap[idx] - P.steps[idx]
        if horizon is not None:
            act = P.status[idx] == ACTIVE
            lim = np.where(act, np.minimum(lim, horizon[idx] - P.steps[idx]), lim)
        K = int(np.clip(CHUNK_BUDGET // idx.size, 8, 4096))
        K = int(min(K, max(int(lim.max()), 1)))
        states, y_next = kern.state_paths(rng, P.y[idx], K)
        batch = kern.draw(rng, states.ravel())
        xi = batch.xi.reshape(-1, K)
        R = batch.R.reshape(-1, K)
        xs = batch.xi_star.reshape(-1, K)
        Zend = P.Z[idx, None] + np.cumsum(xi, axis=1)
        Zst = Zend - xi
        cols = np.arange(K)
        valid = cols[None, :] < lim[:, None]
        is_act = P.status[idx] == ACTIVE

        mix = hazard is not None and is_act.any()
        if mix:
            h = np.where(is_act[:, None], hazard(x - Zst), 0.0)
            forced = (rng.random(h.shape) < h) & valid
            j_f = _first_true(forced)
            j_c = _first_true((Zst + xs > x) & valid)
            j_b = _first_true((Zend < barrier) & valid)
            force_now = is_act & (j_f < K) & (j_f <= j_c) & (j_f <= j_b)
            # ordinary draws from the forced column on are discarded
            lim = np.where(force_now, j_f, lim)
            valid = cols[None, :] < lim[:, None]

        cross = (Zst + xs > x) & valid
        walk_up = (Zend > x) & valid
        bar = (Zend < barrier) & valid
        j_bar = _first_true(bar)
        j_hat = np.where(is_act, _first_true(cross), K)
        hit_now = is_act & (j_hat < K) & (j_hat <= j_bar)
        # for walk exceedance search, start at the hit column (or 0 when continuing)
        start = np.where(hit_now, j_hat, 0)
        wu = walk_up & (cols[None, :] >= start[:, None])
        j_rw = _first_true(wu)
        j_rw = np.where(is_act & ~hit_now, K, j_rw)
        # barrier after the hit column ends continuation
        bar_after = bar & (cols[None, :] >= start[:, None])
        j_bar2 = np.where(hit_now | ~is_act, _first_true(bar_after), j_bar)
        j_rw = np.where(j_bar2 < j_rw, K, j_rw)

        if full_stats:
            m_idx = P.steps[idx, None] + cols[None, :]
            D = np.abs(Zst + m_idx * a)
            stop_col = np.where(j_rw < K, j_rw, np.minimum(lim, K) - 1)
            Dm = np.where(cols[None, :] <= stop_col[:, None], D, 0.0)
            P.dev[idx] = np.maximum(P.dev[idx], Dm.max(axis=1))

        Tend = P.T[idx, None] + np.cumsum(R, axis=1)
        rows = np.arange(idx.size)

        # first exceedance inside a cycle
        if hit_now.any():
            r = rows[hit_now]
            j = j_hat[hit_now]
            g = idx[r]
            level = x - Zst[r, j]
            t, v = batch.passage(r * K + j, level)
            rec = P.rec
            rec.hit[g] = True
            rec.tau_hat_rw[g] = P.steps[g] + j + 1
            rec.t_in_cycle[g] = t
            rec.tau[g] = Tend[r, j] - R[r, j] + t
            rec.overshoot[g] = np.maximum(Zst[r, j] + v - x, 0.0)

        # embedded-walk exceedance
        done_rw = j_rw < K
        if done_rw.any():
            r = rows[done_rw]
            j = j_rw[done_rw]
            g = idx[r]
            n_rw = P.steps[g] + j + 1
            rec = P.rec
            rec.tau_rw[g] = n_rw
            rec.T_pre[g] = Tend[r, j] - R[r, j]
            rec.Z_before[g] = Zst[r, j]
            if full_stats:
                rec.max_dev[g] = P.dev[g] / n_rw
            P.status[g] = HIT
            P.steps[g] = n_rw

        # continuation ends at the barrier without a walk exceedance
        cont_bar = (hit_now | ~is_act) & ~done_rw & (j_bar2 < K)
        if cont_bar.any():
            g = idx[cont_bar]
            P.status[g] = HIT
            P.steps[g] = P.steps[g] + j_bar2[cont_bar] + 1

        nohit = is_act & ~hit_now & (j_bar < K)
        if mix:
            member, logc = kern.event(batch, states.ravel(), (x - Zst).ravel())
            member, logc = member.reshape(-1, K), logc.reshape(-1, K)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                l0 = np.log1p(-h)
                term = np.where(member, -np.logaddexp(l0, np.log(h) - logc), -l0)
            last = np.where(hit_now, j_hat, np.where(nohit, j_bar, np.minimum(lim, K) - 1))
            keep = (cols[None, :] <= last[:, None]) & is_act[:, None]
            P.logw[idx] += np.where(keep, term, 0.0).sum(axis=1)
        if nohit.any():
            g = idx[nohit]
            P.status[g] = NOHIT
            P.steps[g] = P.steps[g] + j_bar[nohit] + 1

        # survivors: carry state to the end of their valid columns
        surv = ~(done_rw | cont_bar | nohit)
        newly_cont = surv & hit_now
        if surv.any():
            r = rows[surv]
            used = np.minimum(lim[surv], K)
            g = idx[r]
            some = used > 0
            P.Z[g] = np.where(some, Zend[r, used - 1], P.Z[g])
            P.T[g] = np.where(some, Tend[r, used - 1], P.T[g])
            P.steps[g] = P.steps[g] + used
            full = used == K
            ynew = np.where(full, y_next[r], states[r, np.minimum(used, K - 1)])
            P.y[g] = ynew
            if newly_cont.any():
                P.status[idx[newly_cont]] = CONT
            out_of_budget = P.steps[g] >= cap[g]
            st = P.status[g]
            P.status[g] = np.where(out_of_budget & (st == ACTIVE), INCONCLUSIVE,
                                   np.where(out_of_budget & (st == CONT), HIT, st))
            if horizon is not None:
                st = P.status[g]
                P.status[g] = np.where((st == ACTIVE) & (P.steps[g] >= horizon[g]), READY, st)
        if mix and force_now.any():
            r = rows[force_now]
            _forced_cycle(P, model, x, barrier, cap, rng, idx[r], h[r, j_f[r]], full_stats)


def _forced_cycle(P: _Paths, model: ProcessModel, x, barrier, cap, rng, g, h, full_stats):
    """One ``draw_big`` cycle for ACTIVE paths ``g`` chosen by the jump mixture."""
    a = P.a
    u = x - P.Z[g]
    batch, logc = model.kernel.draw_big(rng, P.y[g], u)
    with np.errstate(divide="ignore"):
        P.logw[g] -= np.logaddexp(np.log1p(-h), np.log(h) - logc)
    if full_stats:
        P.dev[g] = np.maximum(P.dev[g], np.abs(P.Z[g] + P.steps[g] * a))
    ok = batch.xi_star > u
    Zend = P.Z[g] + batch.xi
    y_next = model.kernel.next_states(rng, P.y[g])
    if ok.any():
        r = np.flatnonzero(ok)
        gh = g[ok]
        t, v = batch.passage(r, u[ok])
        rec = P.rec
        rec.hit[gh] = True
        rec.tau_hat_rw[gh] = P.steps[gh] + 1
        rec.t_in_cycle[gh] = t
        rec.tau[gh] = P.T[gh] + t
        rec.overshoot[gh] = np.maximum(P.Z[gh] + v - x, 0.0)
        up = Zend[ok] > x
        gu = gh[up]
        rec.tau_rw[gu] = P.steps[gu] + 1
        rec.T_pre[gu] = P.T[gu]
        rec.Z_before[gu] = P.Z[gu]
        if full_stats:
            rec.max_dev[gu] = P.dev[gu] / (P.steps[gu] + 1)
        P.status[gu] = HIT
        P.status[gh[~up]] = CONT
    P.Z[g] = Zend
    P.T[g] = P.T[g] + batch.R
    P.steps[g] += 1
    P.y[g] = y_next
    st = P.status[g]
    st = np.where((st == ACTIVE) & (Zend < barrier), NOHIT, st)
    st = np.where((st == ACTIVE) & (P.steps[g] >= cap[g]), INCONCLUSIVE, st)
    st = np.where((st == CONT) & (P.steps[g] >= cap[g]), HIT, st)
    P.status[g] = st


def simulate_paths(model: ProcessModel, x: float, rule: StopRule, rng: np.random.Generator,
                   n: int, full_stats: bool = True) -> RecordBatch:
    """Crude simulation of ``n`` independent paths from ``Z_0 = 0`` (state ``y0``)."""
    if not x > 0:
        raise ValueError("level x must be positive")
    a = model.params.a
    if not full_stats and model.unit_cycles:
        return _walk_hits(model, x, rule, rng, n)
    P = _Paths(n, model.kernel.y0, a)
    cap = np.full(n, rule.cap(x, a), np.int64)
    _advance(P, model, x, rule.s, cap, rng, full_stats)
    P.rec.steps_run[:] = P.steps
    P.rec.inconclusive[:] = P.status == INCONCLUSIVE
    return P.rec


def _walk_hits(model: ProcessModel, x: float, rule: StopRule, rng, n: int) -> RecordBatch:
    """Hit indicators only, for unit-step walks where a within-step exceedance
    is the same event as the walk exceeding ``x``."""
    kern = model.kernel
    cap = rule.cap(x, model.params.a)
    barrier = -rule.s * x
    rec = RecordBatch.empty(n)
    Z = np.zeros(n)
    y = np.full(n, kern.y0, np.int64)
    steps = np.zeros(n, np.int64)
    live = np.arange(n)
    while live.size:
        K = int(min(np.clip(CHUNK_BUDGET // live.size, 8, 4096), cap - steps[live[0]]))
        states, y_next = kern.state_paths(rng, y[live], K)
        Zc = np.cumsum(kern.draw(rng, states.ravel()).xi.reshape(-1, K), axis=1)
        Zc += Z[live, None]
        j_up = _first_true(Zc > x)
        j_bar = _first_true(Zc < barrier)
        up = (j_up < K) & (j_up < j_bar)
        down = (j_bar < K) & ~up
        rec.hit[live[up]] = True
        steps[live[up]] += j_up[up] + 1
        steps[live[down]] += j_bar[down] + 1
        go = ~(up | down)
        live = live[go]
        Z[live] = Zc[go, -1]
        y[live] = y_next[go]
        steps[live] += K
        if live.size and steps[live[0]] >= cap:
            rec.inconclusive[live] = True
            break
    rec.steps_run[:] = steps
    return rec


def big_jump_paths(model: ProcessModel, x: float, rule: StopRule, rng: np.random.Generator,
                   n_index: np.ndarray, log_w_index: np.ndarray, full_stats: bool = True):
    """Single-big-jump proposals: ``n_index - 1`` free cycles, then a cycle whose
    heavy component is forced over the remaining distance.

    Returns the records (``log_w`` = log likelihood ratio, ``-inf`` when the
    proposal does not produce its first within-cycle exceedance at the chosen
    index) and the acceptance mask.
    """
    a = model.params.a
    n = len(n_index)
    P = _Paths(n, model.kernel.y0, a)
    cap = np.full(n, rule.cap(x, a), np.int64)
    horizon = np.asarray(n_index, np.int64) - 1
    P.status[horizon == 0] = READY
    _advance(P, model, x, rule.s, cap, rng, full_stats, horizon=horizon)
    ready = np.flatnonzero(P.status == READY)
    # any ACTIVE -> READY; everything else (earlier hit, barrier, inconclusive) is rejected
    rejected = P.status != READY
    P.status[rejected] = REJECT
    accept = np.zeros(n, bool)
    log_lr = np.full(n, -np.inf)
    if ready.size:
        u = x - P.Z[ready]
        batch, lr = model.kernel.draw_big(rng, P.y[ready], u)
        ok = batch.xi_star > u
        g = ready[ok]
        r = np.flatnonzero(ok)
        log_lr[g] = lr[ok]
        accept[g] = True
        if full_stats and g.size:
            m_idx = P.steps[g]
            P.dev[g] = np.maximum(P.dev[g], np.abs(P.Z[g] + m_idx * a))
        t, v = batch.passage(r, u[ok])
        rec = P.rec
        rec.hit[g] = True
        rec.tau_hat_rw[g] = P.steps[g] + 1
        rec.t_in_cycle[g] = t
        rec.tau[g] = P.T[g] + t
        rec.overshoot[g] = np.maximum(P.Z[g] + v - x, 0.0)
        Zend = P.Z[g] + batch.xi[ok]
        up = Zend > x
        gu = g[up]
        rec.tau_rw[gu] = P.steps[gu] + 1
        rec.T_pre[gu] = P.T[gu]
        rec.Z_before[gu] = P.Z[gu]
        if full_stats:
            rec.max_dev[gu] = P.dev[gu] / (P.steps[gu] + 1)
        P.steps[g] += 1
        P.status[gu] = HIT
        gc = g[~up]
        P.Z[gc] = Zend[~up]
        P.T[gc] = P.T[gc] + batch.R[ok][~up]
        P.y[gc] = model.kernel.next_states(rng, P.y[gc])
        P.status[gc] = CONT
        P.status[(P.status == READY)] = REJECT
        if gc.size:
            _advance(P, model, x, rule.s, cap, rng, full_stats)
    P.rec.steps_run[:] = P.steps
    P.rec.log_w[:] = np.where(accept, log_lr - log_w_index, -np.inf)
    return P.rec, accept


class JumpHazard:
    """Per-cycle probability of forcing a big jump at distance ``u`` below ``x``.

    ``h(u) = p(u) / (p(u) + A(u))`` with ``p`` the stationary one-cycle tail
    and ``A`` the ruin asymptote, capped at ``h_max``; tabulated on a log grid.
    """

    def __init__(self, model: ProcessModel, x: float, s: float, h_max: float = 0.5, n_grid: int = 256):
        lo = 1e-3 * min(1.0, x)
        hi = (2.0 + s) * x + 10.0
        u = np.geomspace(lo, hi, n_grid)
        p = np.asarray(model.tail_proxy(u), dtype=float)
        A = np.asarray(model.asymptote(u), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            h = np.where(p > 0, p / (p + A), 0.0)
        self.log_u = np.log(u)
        self.h = np.clip(np.nan_to_num(h), 0.0, h_max)
        self.lo = lo

    def __call__(self, u):
        u = np.maximum(np.asarray(u, dtype=float), self.lo)
        return np.interp(np.log(u), self.log_u, self.h)


def mixture_paths(model: ProcessModel, x: float, rule: StopRule, rng: np.random.Generator,
                  n: int, hazard: JumpHazard, full_stats: bool = True) -> RecordBatch:
    """Paths under the jump-mixture proposal; ``log_w`` is the log likelihood
    ratio for hit paths and ``-inf`` otherwise."""
    a = model.params.a
    P = _Paths(n, model.kernel.y0, a)
    cap = np.full(n, rule.cap(x, a), np.int64)
    _advance(P, model, x, rule.s, cap, rng, full_stats, hazard=hazard)
    P.rec.steps_run[:] = P.steps
    P.rec.inconclusive[:] = P.status == INCONCLUSIVE
    P.rec.log_w[:] = np.where(P.rec.hit, P.logw, -np.inf)
    return P.rec


def run_path(model: ProcessModel, x: float, rule: StopRule, rng: np.random.Generator) -> ExceedanceRecord:
    """Simulate one path to exceedance or to the stop rule."""
    return simulate_paths(model, x, rule, rng, 1).record(0)


def quadruple(rec: ExceedanceRecord, x: float, a: float, e_x: float):
    """``(a tau_rw / e, Z_before / e, max_dev, overshoot / e)`` of a hit record."""
    if not rec.hit:
        raise ValueError("quadruple needs a hit record")
    return (a * rec.tau_rw / e_x, rec.Z_before / e_x, rec.max_dev, rec.overshoot / e_x)


def decomposition_stats(rec: ExceedanceRecord, e_x: float):
    """``(T_pre / e, T_pre / tau_rw, t_in_cycle / e)`` of a hit record."""
    if not rec.hit:
        raise ValueError("decomposition_stats needs a hit record")
    return (rec.T_pre / e_x, rec.T_pre / rec.tau_rw if rec.tau_rw > 0 else math.nan, rec.t_in_cycle / e_x)
