"""Process models: i.i.d. and Markov-modulated walks, regenerative compound
cycles (including Bjork-Grandell), a two-stage fluid model and the discrete
rate construction with long cycles.

Each model owns a vectorized *kernel* that draws many cycles at once.  A
cycle carries its length ``R``, net increment ``xi``, within-cycle supremum
``xi_star = max(0, sup_[0,R] path)`` and can report the first within-cycle
time at which the path exceeds a level.  The scalar ``generate_cycle`` API
wraps a single kernel draw into a :class:`CyclePath` with explicit knots.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from . import dists
from .dists import Deterministic, DiscretePower, TailModel, dist_from_dict

__all__ = [
    "IncrementLaw",
    "CompoundLaw",
    "CyclePath",
    "CycleBatch",
    "TheoreticalParams",
    "ProcessModel",
    "IIDWalk",
    "ModulatedWalk",
    "Regenerative",
    "ModulatedRegenerative",
    "BjorkGrandell",
    "FluidTwoStage",
    "RateConstruction",
    "generate_cycle",
    "modulated_step",
    "bjork_grandell_cycle",
    "theoretical_params",
    "check_conditions",
    "model_from_dict",
    "stationary_distribution",
]

_QGRID = (np.arange(256) + 0.5) / 256.0


def stationary_distribution(P) -> np.ndarray:
    """Stationary law of an irreducible finite chain (rejects reducible ones)."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if P.shape != (n, n) or np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("transition matrix must be square, nonnegative with unit row sums")
    reach = (P > 0).astype(int) + np.eye(n, dtype=int)
    reach = np.linalg.matrix_power(reach, max(n - 1, 1)) > 0
    if not reach.all():
        raise ValueError("transition matrix is not irreducible")
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


# ---------------------------------------------------------------------------
# per-state laws


@dataclass(frozen=True)
class IncrementLaw:
    """Walk increment ``xi = B - shift`` with ``B ~ heavy`` w.p. ``heavy_prob``, else ``light``."""

    heavy: TailModel
    shift: float = 0.0
    heavy_prob: float = 1.0
    light: TailModel = Deterministic(0.0)

    def __post_init__(self):
        if not 0.0 < self.heavy_prob <= 1.0:
            raise ValueError("heavy_prob must lie in (0, 1]")

    def tail(self, v):
        v = np.asarray(v, dtype=float) + self.shift
        q = self.heavy_prob
        res = q * np.asarray(self.heavy.tail(v))
        if q < 1.0:
            res = res + (1.0 - q) * np.asarray(self.light.tail(v))
        return res

    def log_tail(self, v):
        v = np.asarray(v, dtype=float) + self.shift
        q = self.heavy_prob
        lh = math.log(q) + np.asarray(self.heavy.log_tail(v))
        if q == 1.0:
            return lh
        with np.errstate(divide="ignore"):
            ll = math.log1p(-q) + np.log(np.asarray(self.light.tail(v), dtype=float))
        return np.logaddexp(lh, ll)

    def mean(self) -> float:
        q = self.heavy_prob
        return q * self.heavy.mean() + (1.0 - q) * self.light.mean() - self.shift

    def integrated_tail(self, x):
        v = np.asarray(x, dtype=float) + self.shift
        q = self.heavy_prob
        res = q * np.asarray(self.heavy.tail_integral(v))
        if q < 1.0:
            res = res + (1.0 - q) * np.asarray(self.light.tail_integral(v))
        return res

    def sample(self, rng, n: int):
        q = self.heavy_prob
        out = self.heavy.sample(rng, n)
        if q < 1.0:
            pick = rng.random(n) < q
            out = np.where(pick, out, self.light.sample(rng, n))
        return np.asarray(out, dtype=float) - self.shift

    def sample_above(self, rng, u):
        """Exact draw of xi given xi > u (vector u); returns (draws, log P(xi > u))."""
        u = np.asarray(u, dtype=float)
        v = u + self.shift
        q = self.heavy_prob
        lh = math.log(q) + np.asarray(self.heavy.log_tail(v))
        if q == 1.0:
            return np.asarray(self.heavy.sample_above(v, rng, v.shape)) - self.shift, lh
        with np.errstate(divide="ignore"):
            ll = math.log1p(-q) + np.log(np.asarray(self.light.tail(v), dtype=float))
        lt = np.logaddexp(lh, ll)
        use_heavy = rng.random(v.shape) < np.exp(lh - lt)
        out = np.empty_like(v)
        if use_heavy.any():
            out[use_heavy] = self.heavy.sample_above(v[use_heavy], rng)
        if (~use_heavy).any():
            out[~use_heavy] = self.light.sample_above(v[~use_heavy], rng)
        return out - self.shift, lt

    def to_dict(self) -> dict:
        return {"heavy": self.heavy.to_dict(), "shift": self.shift,
                "heavy_prob": self.heavy_prob, "light": self.light.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "IncrementLaw":
        return cls(dist_from_dict(d["heavy"]), float(d.get("shift", 0.0)),
                   float(d.get("heavy_prob", 1.0)),
                   dist_from_dict(d["light"]) if "light" in d else Deterministic(0.0))


BIG_MODES = ("claims", "rate", "length")


@dataclass(frozen=True)
class CompoundLaw:
    """One compound-Poisson cycle with premium drain.

    Draw ``Lambda``; the cycle length is ``R_low`` if ``Lambda <= lam0`` and
    ``R_high`` otherwise; claims from ``claims`` arrive at rate ``Lambda`` and
    the path decreases at rate ``premium`` between claims.  ``big`` names the
    component that carries the heavy tail and steers the big-jump proposal.
    """

    rate: TailModel
    length: TailModel
    claims: TailModel
    premium: float = 1.0
    length_high: TailModel | None = None
    lam0: float = math.inf
    big: str = "claims"
    big_frac: float = 0.5

    def __post_init__(self):
        if self.big not in BIG_MODES:
            raise ValueError(f"big must be one of {BIG_MODES}")
        if not self.premium > 0:
            raise ValueError("premium must be positive")
        if not 0.0 < self.big_frac <= 1.0:
            raise ValueError("big_frac must lie in (0, 1]")
        if self.big == "rate" and math.isfinite(self.lam0):
            raise ValueError("big='rate' needs a cycle length independent of the rate (lam0 = inf)")
        if self.big == "length":
            if self.length_high is None or not math.isfinite(self.lam0):
                raise ValueError("big='length' needs length_high and a finite lam0")
            if self.lam0 * self.claims.mean() <= self.premium:
                raise ValueError("big='length' needs lam0 * E[claim] > premium")

    @property
    def _high(self) -> TailModel:
        return self.length_high if self.length_high is not None else self.length

    @property
    def p_high(self) -> float:
        return float(self.rate.tail(self.lam0)) if math.isfinite(self.lam0) else 0.0

    def mean_length(self) -> float:
        ph = self.p_high
        return (1.0 - ph) * self.length.mean() + ph * self._high.mean()

    def mean_lambda_length(self) -> float:
        """E[Lambda R]."""
        if not math.isfinite(self.lam0):
            return self.rate.mean() * self.length.mean()
        above = self.rate.partial_mean_above(self.lam0)
        return (self.rate.mean() - above) * self.length.mean() + above * self._high.mean()

    def mean_xi(self) -> float:
        return self.claims.mean() * self.mean_lambda_length() - self.premium * self.mean_length()

    @property
    def reference(self) -> TailModel:
        return {"claims": self.claims, "rate": self.rate, "length": self._high}[self.big]

    def _rate_given_above(self, n: int) -> np.ndarray:
        """Quantile grid of Lambda | Lambda > lam0."""
        lt = float(self.rate.log_tail(self.lam0))
        return np.asarray(self.rate.log_isf(lt + np.log(_QGRID[:n] if n < len(_QGRID) else _QGRID)))

    def tail_proxy(self, v):
        """Single-big-jump approximation of P(xi > v) (positive, vectorized)."""
        v = np.maximum(np.asarray(v, dtype=float), 0.0)
        m = self.claims.mean()
        if self.big == "claims":
            return self.mean_lambda_length() * np.asarray(self.claims.tail(v))
        if self.big == "rate":
            r = np.asarray(self.length.isf(_QGRID))
            return np.mean(np.asarray(self.rate.tail(v[..., None] / (m * r))), axis=-1)
        lam = self._rate_given_above(len(_QGRID))
        slope = lam * m - self.premium
        return self.p_high * np.mean(np.asarray(self._high.tail(v[..., None] / slope)), axis=-1)

    def integrated_proxy(self, x):
        """int_x^inf tail_proxy, via the scaling identity for each mixture atom."""
        x = np.asarray(x, dtype=float)
        m = self.claims.mean()
        if self.big == "claims":
            return self.mean_lambda_length() * np.asarray(self.claims.tail_integral(x))
        if self.big == "rate":
            s = m * np.asarray(self.length.isf(_QGRID))
            return np.mean(s * np.asarray(self.rate.tail_integral(x[..., None] / s)), axis=-1)
        slope = self._rate_given_above(len(_QGRID)) * m - self.premium
        return self.p_high * np.mean(slope * np.asarray(self._high.tail_integral(x[..., None] / slope)), axis=-1)

    def to_dict(self) -> dict:
        d = {"rate": self.rate.to_dict(), "length": self.length.to_dict(),
             "claims": self.claims.to_dict(), "premium": self.premium,
             "big": self.big, "big_frac": self.big_frac}
        if self.length_high is not None:
            d["length_high"] = self.length_high.to_dict()
        if math.isfinite(self.lam0):
            d["lam0"] = self.lam0
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CompoundLaw":
        return cls(
            rate=dist_from_dict(d["rate"]), length=dist_from_dict(d["length"]),
            claims=dist_from_dict(d["claims"]), premium=float(d.get("premium", 1.0)),
            length_high=dist_from_dict(d["length_high"]) if "length_high" in d else None,
            lam0=float(d.get("lam0", math.inf)), big=d.get("big", "claims"),
            big_frac=float(d.get("big_frac", 0.5)),
        )


# ---------------------------------------------------------------------------
# cycles


@dataclass
class CyclePath:
    """One cycle with its path given as knots ``(t, value)``.

    The path is linear between consecutive knots; a jump is two knots with
    the same time.  ``first_passage(level)`` is the first time the path is
    strictly above ``level`` (the time a jump lands or a linear piece
    crosses), or ``R`` when the cycle never exceeds it.
    """

    R: float
    knots: tuple
    xi: float
    xi_star: float

    @property
    def segments(self):
        return list(zip(self.knots[:-1], self.knots[1:]))

    def crosses(self, level: float) -> bool:
        return self.xi_star > level

    def first_passage(self, level: float) -> float:
        t0, v0 = self.knots[0]
        if v0 > level:
            return t0
        for (ta, va), (tb, vb) in self.segments:
            if vb > level:
                if tb == ta or va > level:
                    return tb if va <= level else ta
                return ta + (level - va) / (vb - va) * (tb - ta)
        return self.R


class CycleBatch:
    """Columnar batch of cycles drawn by a kernel."""

    def __init__(self, R, xi, xi_star, passage: Callable, knots: Callable):
        self.R = R
        self.xi = xi
        self.xi_star = xi_star
        self._passage = passage
        self._knots = knots

    def __len__(self):
        return len(self.R)

    def passage(self, idx, level):
        """Within-cycle crossing time and path value at the crossing, for cycles ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        return self._passage(idx, np.asarray(level, dtype=float))

    def cycle(self, i: int) -> CyclePath:
        return CyclePath(float(self.R[i]), tuple(self._knots(i)), float(self.xi[i]), float(self.xi_star[i]))


class _Kernel:
    """Shared state-chain logic; subclasses implement ``draw`` and ``draw_big``."""

    n_states = 1

    def __init__(self, P=None, y0: int = 0):
        self.P = None if P is None else np.asarray(P, dtype=float)
        self.n_states = 1 if P is None else self.P.shape[0]
        self.y0 = y0
        if self.P is not None:
            self._cum = np.cumsum(self.P, axis=1)
            self._cum[:, -1] = 1.0

    def next_states(self, rng, y):
        if self.n_states == 1:
            return y
        u = rng.random(len(y))
        return (u[:, None] >= self._cum[y]).sum(axis=1)

    def state_paths(self, rng, y, K: int):
        """States for K consecutive steps from current states ``y``; returns (B,K) and next states."""
        if self.n_states == 1:
            return np.zeros((len(y), K), dtype=np.int64), y
        out = np.empty((len(y), K), dtype=np.int64)
        for j in range(K):
            out[:, j] = y
            y = self.next_states(rng, y)
        return out, y

    # subclasses
    def draw(self, rng, y) -> CycleBatch:
        raise NotImplementedError

    def draw_big(self, rng, y, u):
        raise NotImplementedError

    def event(self, batch, y, u):
        """Membership of each cycle in the forcing event of ``draw_big(y, u)``
        and the log probability of that event given the unforced parts."""
        raise NotImplementedError

    def tail_proxy(self, y, v):
        raise NotImplementedError


class _WalkKernel(_Kernel):
    def __init__(self, laws: Sequence[IncrementLaw], P=None, y0=0):
        super().__init__(P, y0)
        self.laws = list(laws)

    def _batch(self, xi):
        R = np.ones_like(xi)
        xs = np.maximum(xi, 0.0)

        def passage(idx, level):
            x = xi[idx]
            return np.where(level < 0, 0.0, 1.0), np.where(level < 0, 0.0, x)

        def knots(i):
            return [(0.0, 0.0), (1.0, 0.0), (1.0, float(xi[i]))]

        return CycleBatch(R, xi, xs, passage, knots)

    def draw(self, rng, y):
        y = np.asarray(y)
        if len(self.laws) == 1:
            xi = self.laws[0].sample(rng, len(y))
        else:
            xi = np.empty(len(y))
            for s, law in enumerate(self.laws):
                m = y == s
                if m.any():
                    xi[m] = law.sample(rng, int(m.sum()))
        return self._batch(xi)

    def draw_big(self, rng, y, u):
        y = np.asarray(y)
        xi = np.empty(len(y))
        log_lr = np.empty(len(y))
        for s, law in enumerate(self.laws):
            m = y == s
            if m.any():
                xi[m], log_lr[m] = law.sample_above(rng, u[m])
        return self._batch(xi), log_lr

    def event(self, batch, y, u):
        y = np.asarray(y)
        logc = np.empty(len(y))
        for s, law in enumerate(self.laws):
            m = y == s
            if m.any():
                logc[m] = law.log_tail(u[m])
        return batch.xi > u, logc

    def tail_proxy(self, y, v):
        return self.laws[y].tail(v)


class _CompoundKernel(_Kernel):
    def __init__(self, laws: Sequence[CompoundLaw], P=None, y0=0):
        super().__init__(P, y0)
        self.laws = list(laws)

    def _lengths(self, rng, law, lam):
        R = np.asarray(law.length.sample(rng, len(lam)), dtype=float)
        if math.isfinite(law.lam0):
            hi = lam > law.lam0
            if hi.any():
                R[hi] = law._high.sample(rng, int(hi.sum()))
        return R

    def _assemble(self, rng, y, R, seg, claims, shuffle=False):
        """Place claims of each cycle at sorted uniform epochs and build the batch.

        ``seg`` (cycle id per claim) must be nondecreasing.  Sorted epochs come
        from normalized exponential spacings; ``shuffle`` randomizes the claim
        order inside each cycle when the claims are not exchangeable as given.
        """
        n = len(R)
        prem = np.array([law.premium for law in self.laws])[y]
        if shuffle and len(seg):
            order = np.argsort(seg + rng.random(len(seg)), kind="stable")
            seg, claims = seg[order], claims[order]
        counts = np.bincount(seg, minlength=n)
        sp = np.cumsum(rng.standard_exponential(len(seg) + n))
        ends = np.cumsum(counts + 1)
        before = np.concatenate([[0.0], sp[ends[:-1] - 1]])
        span = sp[ends - 1] - before
        keep = np.ones(len(sp), bool)
        keep[ends - 1] = False
        times = (sp[keep] - before[seg]) / span[seg] * R[seg]
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        csum = np.cumsum(claims)
        base = np.concatenate([[0.0], csum])[starts]
        cum = csum - np.repeat(base, counts)
        val = cum - prem[seg] * times
        xs = np.zeros(n)
        nz = counts > 0
        if nz.any():
            xs[nz] = np.maximum(np.maximum.reduceat(val, starts[nz]), 0.0)
        total = np.zeros(n)
        total[nz] = cum[starts[nz] + counts[nz] - 1]
        cmax = np.zeros(n)
        if nz.any():
            cmax[nz] = np.maximum.reduceat(claims, starts[nz])
        xi = total - prem * R

        def passage(idx, level):
            t = np.asarray(R[idx], dtype=float).copy()
            v = np.full(len(idx), np.nan)
            for k, (i, lv) in enumerate(zip(idx, np.broadcast_to(level, idx.shape))):
                if lv < 0:
                    t[k], v[k] = 0.0, 0.0
                    continue
                sl = slice(starts[i], starts[i] + counts[i])
                hit = np.flatnonzero(val[sl] > lv)
                if hit.size:
                    j = starts[i] + hit[0]
                    t[k], v[k] = times[j], val[j]
            return t, v

        def knots(i):
            p = prem[i]
            pts = [(0.0, 0.0)]
            for j in range(starts[i], starts[i] + counts[i]):
                before = val[j] - claims[j]
                pts += [(float(times[j]), float(before)), (float(times[j]), float(val[j]))]
            pts.append((float(R[i]), float(xi[i])))
            return pts

        batch = CycleBatch(R, xi, xs, passage, knots)
        batch.claim_max = cmax
        return batch

    def draw(self, rng, y):
        y = np.asarray(y)
        n = len(y)
        lam = np.empty(n)
        R = np.empty(n)
        for s, law in enumerate(self.laws):
            m = y == s
            if m.any():
                lam[m] = law.rate.sample(rng, int(m.sum()))
                R[m] = self._lengths(rng, law, lam[m])
        N = rng.poisson(lam * R)
        seg = np.repeat(np.arange(n), N)
        claims = self._claims(rng, y[seg], None, None)
        batch = self._assemble(rng, y, R, seg, claims)
        batch.lam = lam
        return batch

    def _claims(self, rng, ys, u, above):
        out = np.empty(len(ys))
        for s, law in enumerate(self.laws):
            m = ys == s
            if not m.any():
                continue
            if u is None:
                out[m] = law.claims.sample(rng, int(m.sum()))
            elif above:
                out[m] = law.claims.sample_above(u[m], rng)
            else:
                out[m] = law.claims.sample_below(u[m], rng)
        return out

    def draw_big(self, rng, y, u):
        """Cycle drawn with its heavy component forced above ``big_frac * u``.

        Returns the batch and the log probability of the forcing event given
        the prior-drawn parts, which is the likelihood ratio of this proposal.
        """
        y = np.asarray(y)
        u = np.maximum(np.asarray(u, dtype=float), 0.0)
        n = len(y)
        lam = np.empty(n)
        R = np.empty(n)
        log_lr = np.zeros(n)
        mode = np.empty(n, dtype=object)
        for s, law in enumerate(self.laws):
            m = y == s
            if not m.any():
                continue
            k = int(m.sum())
            us = law.big_frac * u[m]
            mc = law.claims.mean()
            mode[m] = law.big
            if law.big == "claims":
                lam[m] = law.rate.sample(rng, k)
                R[m] = self._lengths(rng, law, lam[m])
            elif law.big == "rate":
                R[m] = law.length.sample(rng, k)
                thr = us / (mc * R[m])
                log_lr[m] = law.rate.log_tail(thr)
                lam[m] = law.rate.sample_above(thr, rng)
            else:
                lam[m] = law.rate.sample_above(np.full(k, law.lam0), rng)
                thr = us / (lam[m] * mc - law.premium)
                log_lr[m] = float(law.rate.log_tail(law.lam0)) + np.asarray(law._high.log_tail(thr))
                R[m] = law._high.sample_above(thr, rng)
        is_cl = mode == "claims"
        mean_big = np.zeros(n)
        thr_c = np.zeros(n)
        if is_cl.any():
            for s, law in enumerate(self.laws):
                m = (y == s) & is_cl
                if m.any():
                    thr_c[m] = law.big_frac * u[m]
                    mean_big[m] = lam[m] * R[m] * np.asarray(law.claims.tail(thr_c[m]))
            log_lr[is_cl] = np.log(-np.expm1(-mean_big[is_cl]))
        # big claims: zero-truncated Poisson via the first-arrival construction
        n_big = np.zeros(n, dtype=np.int64)
        if is_cl.any():
            mb = mean_big[is_cl]
            e1 = -np.log1p(-rng.random(mb.size) * -np.expm1(-mb)) / mb
            n_big[is_cl] = 1 + rng.poisson(mb * np.clip(1.0 - e1, 0.0, 1.0))
        n_small = rng.poisson(np.maximum(lam * R - mean_big, 0.0))
        seg_b = np.repeat(np.arange(n), n_big)
        seg_s = np.repeat(np.arange(n), n_small)
        cb = self._claims(rng, y[seg_b], thr_c[seg_b], True)
        small_cut = np.where(is_cl, thr_c, np.inf)
        cs = self._claims(rng, y[seg_s], None, None) if not is_cl.any() else np.empty(0)
        if is_cl.any():
            cut = small_cut[seg_s]
            cs = np.empty(len(seg_s))
            fin = np.isfinite(cut)
            if fin.any():
                cs[fin] = self._claims(rng, y[seg_s][fin], cut[fin], False)
            if (~fin).any():
                cs[~fin] = self._claims(rng, y[seg_s][~fin], None, None)
        seg = np.concatenate([seg_b, seg_s])
        claims = np.concatenate([cb, cs])
        batch = self._assemble(rng, y, R, seg, claims, shuffle=True)
        batch.lam = lam
        return batch, log_lr

    def event(self, batch, y, u):
        y = np.asarray(y)
        u = np.maximum(np.asarray(u, dtype=float), 0.0)
        n = len(y)
        member = np.zeros(n, bool)
        logc = np.full(n, -np.inf)
        lam, R = batch.lam, batch.R
        with np.errstate(divide="ignore", invalid="ignore"):
            for s, law in enumerate(self.laws):
                m = np.flatnonzero(y == s)
                if not m.size:
                    continue
                us = law.big_frac * u[m]
                mc = law.claims.mean()
                if law.big == "claims":
                    member[m] = batch.claim_max[m] > us
                    mb = lam[m] * R[m] * np.asarray(law.claims.tail(us))
                    logc[m] = np.log(-np.expm1(-mb))
                elif law.big == "rate":
                    thr = us / (mc * R[m])
                    member[m] = lam[m] > thr
                    logc[m] = law.rate.log_tail(thr)
                else:
                    hi = lam[m] > law.lam0
                    k = m[hi]
                    thr = us[hi] / (lam[k] * mc - law.premium)
                    member[k] = R[k] > thr
                    logc[k] = float(law.rate.log_tail(law.lam0)) + np.asarray(law._high.log_tail(thr))
        return member, logc

    def tail_proxy(self, y, v):
        return self.laws[y].tail_proxy(v)


class _FluidKernel(_Kernel):
    def __init__(self, a1: float, up: TailModel):
        super().__init__()
        self.a1 = a1
        self.up = up

    def _batch(self, r2):
        a1 = self.a1
        R = a1 + r2
        xi = r2 - a1
        xs = np.maximum(xi, 0.0)

        def passage(idx, level):
            t = np.where(level < 0, 0.0, 2 * a1 + np.maximum(level, 0.0))
            return np.minimum(t, R[idx]), np.where(level < 0, 0.0, level)

        def knots(i):
            return [(0.0, 0.0), (a1, -a1), (float(R[i]), float(xi[i]))]

        return CycleBatch(R, xi, xs, passage, knots)

    def draw(self, rng, y):
        return self._batch(np.asarray(self.up.sample(rng, len(y)), dtype=float))

    def draw_big(self, rng, y, u):
        thr = np.asarray(u, dtype=float) + self.a1
        return self._batch(np.asarray(self.up.sample_above(thr, rng))), np.asarray(self.up.log_tail(thr))

    def event(self, batch, y, u):
        u = np.asarray(u, dtype=float)
        return batch.xi > u, np.asarray(self.up.log_tail(u + self.a1), dtype=float)

    def tail_proxy(self, y, v):
        return self.up.tail(np.asarray(v) + self.a1)


class _RateKernel(_Kernel):
    def __init__(self, F: DiscretePower, phi: Callable, b: float):
        super().__init__()
        self.F = F
        self.phi = phi
        self.b = b

    def _batch(self, X):
        pos = X > 0
        R = np.where(pos, self.phi(np.maximum(X, 1.0)), 1.0).astype(float)
        xi = np.where(pos, X, -self.b)
        xs = np.maximum(xi, 0.0)
        jump_t = np.where(pos, R - 1.0, 1.0)

        def passage(idx, level):
            ok = xi[idx] > level
            t = np.where(level < 0, 0.0, np.where(ok, jump_t[idx], R[idx]))
            return t, np.where(level < 0, 0.0, np.where(ok, xi[idx], np.nan))

        def knots(i):
            return [(0.0, 0.0), (float(jump_t[i]), 0.0), (float(jump_t[i]), float(xi[i])), (float(R[i]), float(xi[i]))]

        return CycleBatch(R, xi, xs, passage, knots)

    def draw(self, rng, y):
        return self._batch(np.asarray(self.F.sample(rng, len(y)), dtype=float))

    def draw_big(self, rng, y, u):
        u = np.maximum(np.asarray(u, dtype=float), 0.0)
        return self._batch(np.asarray(self.F.sample_above(u, rng), dtype=float)), np.asarray(self.F.log_tail(u))

    def event(self, batch, y, u):
        u = np.maximum(np.asarray(u, dtype=float), 0.0)
        return batch.xi > u, np.asarray(self.F.log_tail(u), dtype=float)

    def tail_proxy(self, y, v):
        return self.F.tail(v)


# ---------------------------------------------------------------------------
# models


@dataclass
class TheoreticalParams:
    a: float
    mu: float
    C: float
    kappa: float
    pi: np.ndarray
    c_y: np.ndarray
    b_const: float
    mu_regen: float | None = None

    def to_dict(self) -> dict:
        return {"a": self.a, "mu": self.mu, "C": self.C, "kappa": self.kappa,
                "pi": [float(v) for v in self.pi], "c_y": [float(v) for v in self.c_y],
                "b_const": self.b_const, "mu_regen": self.mu_regen}


class ProcessModel:
    """Base class. Subclasses provide a kernel, a reference tail and a scale."""

    kind: str = ""
    unit_cycles: bool = False

    @cached_property
    def kernel(self) -> _Kernel:
        raise NotImplementedError

    @property
    def reference(self) -> TailModel:
        raise NotImplementedError

    def _state_means(self) -> np.ndarray:
        raise NotImplementedError

    def _state_lengths(self) -> np.ndarray:
        return np.ones(self.kernel.n_states)

    def _state_integrated(self, y: int, x):
        raise NotImplementedError

    @cached_property
    def pi(self) -> np.ndarray:
        k = self.kernel
        return np.ones(1) if k.P is None else stationary_distribution(k.P)

    @cached_property
    def params(self) -> TheoreticalParams:
        pi = self.pi
        means = self._state_means()
        a = -float(pi @ means)
        if not a > 0:
            raise ValueError(f"{self.kind}: drift must be negative (E xi = {-a:.6g})")
        ref = self.reference
        v = float(ref.isf(1e-12))
        c_y = np.array([float(self._state_integrated(y, v)) for y in range(len(pi))])
        with np.errstate(divide="ignore", invalid="ignore"):
            # nan when the reference has bounded support (no tail coefficient)
            c_y = c_y / float(ref.tail_integral(v))
        C = float(pi @ c_y)
        mu = float(pi @ self._state_lengths())
        mu_regen = 1.0 / float(pi[self.kernel.y0]) if len(pi) > 1 else None
        return TheoreticalParams(a=a, mu=mu, C=C, kappa=float(np.max(-means)), pi=pi,
                                 c_y=c_y, b_const=C / a, mu_regen=mu_regen)

    def asymptote(self, x):
        """Ruin asymptote ``(1/a) sum_y pi(y) int_x^inf P(xi_y > v) dv``."""
        p = self.params
        tot = sum(p.pi[y] * np.asarray(self._state_integrated(y, x)) for y in range(len(p.pi)))
        return dists._out(x, tot / p.a)

    def tail_proxy(self, v):
        """Stationary-averaged P(xi > v) used to weight big-jump cycle indices."""
        k = self.kernel
        return sum(self.pi[y] * np.asarray(k.tail_proxy(y, v)) for y in range(k.n_states))

    def scale(self, x):
        return dists.scale_function(self.reference)(x)

    def limit_law(self) -> dists.LimitLawG:
        return dists.limit_law(self.reference)

    def cycle_length_tail(self, x):
        """P(R > x); zero for unit-step walks."""
        return dists._out(x, np.zeros(np.shape(x)))

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __post_init__(self):
        self.params  # validates drift and chain


@dataclass(eq=False)
class IIDWalk(ProcessModel):
    increment: IncrementLaw
    kind = "IIDWalk"
    unit_cycles = True

    @cached_property
    def kernel(self):
        return _WalkKernel([self.increment])

    @property
    def reference(self):
        return self.increment.heavy

    def _state_means(self):
        return np.array([self.increment.mean()])

    def _state_integrated(self, y, x):
        return self.increment.integrated_tail(x)

    def to_dict(self):
        return {"kind": self.kind, "params": {"increment": self.increment.to_dict()}}


@dataclass(eq=False)
class ModulatedWalk(ProcessModel):
    P: list
    laws: list
    y0: int = 0
    kind = "ModulatedWalk"
    unit_cycles = True

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.shape != (len(self.laws), len(self.laws)):
            raise ValueError("transition matrix size must match the number of state laws")
        super().__post_init__()

    @cached_property
    def kernel(self):
        return _WalkKernel(self.laws, self.P, self.y0)

    @property
    def reference(self):
        """Heavy component of the state with the heaviest tail far out."""
        v = 1e4
        scores = [float(law.heavy.tail(v)) if law.heavy.heavy else -1.0 for law in self.laws]
        return self.laws[int(np.argmax(scores))].heavy

    def _state_means(self):
        return np.array([law.mean() for law in self.laws])

    def _state_integrated(self, y, x):
        return self.laws[y].integrated_tail(x)

    def to_dict(self):
        return {"kind": self.kind, "params": {"y0": self.y0},
                "modulator": {"P": [list(map(float, r)) for r in self.P],
                              "state_laws": [law.to_dict() for law in self.laws]}}


class _CompoundModel(ProcessModel):
    def _claws(self) -> list:
        raise NotImplementedError

    @cached_property
    def kernel(self):
        laws = self._claws()
        P = getattr(self, "P", None)
        return _CompoundKernel(laws, P, getattr(self, "y0", 0))

    @property
    def reference(self):
        return self._claws()[0].reference

    def _state_means(self):
        return np.array([law.mean_xi() for law in self._claws()])

    def _state_lengths(self):
        return np.array([law.mean_length() for law in self._claws()])

    def _state_integrated(self, y, x):
        return self._claws()[y].integrated_proxy(x)

    def cycle_length_tail(self, x):
        x = np.asarray(x, dtype=float)
        tot = 0.0
        for y, law in enumerate(self._claws()):
            ph = law.p_high
            t = (1 - ph) * np.asarray(law.length.tail(x)) + ph * np.asarray(law._high.tail(x))
            tot = tot + self.pi[y] * t
        return tot


@dataclass(eq=False)
class Regenerative(_CompoundModel):
    """Compound-Poisson cycles: length from ``length``, claims at fixed ``rate``, premium drain."""

    length: TailModel
    claims: TailModel
    rate: float = 1.0
    premium: float = 1.0
    kind = "Regenerative"

    def _claws(self):
        return [CompoundLaw(Deterministic(self.rate), self.length, self.claims, self.premium)]

    def to_dict(self):
        return {"kind": self.kind, "params": {"length": self.length.to_dict(), "claims": self.claims.to_dict(),
                                              "rate": self.rate, "premium": self.premium}}


@dataclass(eq=False)
class BjorkGrandell(_CompoundModel):
    """Cox-process claims with random intensity held over a random cycle, premium rate 1."""

    rate_law: TailModel
    length: TailModel
    claims: TailModel
    length_high: TailModel | None = None
    lam0: float = math.inf
    big: str = "claims"
    big_frac: float = 0.5
    kind = "BjorkGrandell"

    def _claws(self):
        return [CompoundLaw(self.rate_law, self.length, self.claims, 1.0,
                            self.length_high, self.lam0, self.big, self.big_frac)]

    def to_dict(self):
        d = self._claws()[0].to_dict()
        d.pop("premium")
        return {"kind": self.kind, "params": {
            "rate_law": d.pop("rate"), **d}}


@dataclass(eq=False)
class ModulatedRegenerative(_CompoundModel):
    P: list
    laws: list
    y0: int = 0
    kind = "ModulatedRegenerative"

    def __post_init__(self):
        if np.asarray(self.P).shape != (len(self.laws), len(self.laws)):
            raise ValueError("transition matrix size must match the number of state laws")
        super().__post_init__()

    def _claws(self):
        return list(self.laws)

    def to_dict(self):
        return {"kind": self.kind, "params": {"y0": self.y0},
                "modulator": {"P": [list(map(float, r)) for r in self.P],
                              "state_laws": [law.to_dict() for law in self.laws]}}


@dataclass(eq=False)
class FluidTwoStage(ProcessModel):
    """Cycle: drain at unit rate for ``a1``, then rise at unit rate for ``R2``."""

    a1: float
    R2: TailModel
    kind = "FluidTwoStage"

    @cached_property
    def kernel(self):
        return _FluidKernel(self.a1, self.R2)

    @property
    def reference(self):
        return self.R2

    def _state_means(self):
        return np.array([self.R2.mean() - self.a1])

    def _state_lengths(self):
        return np.array([self.a1 + self.R2.mean()])

    def _state_integrated(self, y, x):
        return self.R2.tail_integral(np.asarray(x, dtype=float) + self.a1)

    def scale(self, x):
        return dists.scale_function(self.R2)(np.asarray(x, dtype=float) + self.a1)

    def cycle_length_tail(self, x):
        return self.R2.tail(np.asarray(x, dtype=float) - self.a1)

    def to_dict(self):
        return {"kind": self.kind, "params": {"a1": self.a1, "R2": self.R2.to_dict()}}


@dataclass(frozen=True)
class CeilPower:
    """Rate function ``phi(x) = ceil(x**beta)``."""

    beta: float

    def __call__(self, x):
        return np.ceil(np.power(np.asarray(x, dtype=float), self.beta))


@dataclass(eq=False)
class RateConstruction(ProcessModel):
    """Integer cycles: ``X ~ F``; ``X = 0`` gives a unit cycle with step ``-b``,
    ``X > 0`` a cycle of length ``phi(X)`` flat at 0 then jumping to ``X`` at
    within-cycle time ``phi(X) - 1``.  ``phi(x) = ceil(x**beta)``."""

    F: DiscretePower
    beta: float
    b: float | None = None
    kind = "RateConstruction"

    def __post_init__(self):
        f0 = float(self.F.pmf(0))
        above = self.F.mean()
        if self.b is None:
            self.b = 2.0 * above / f0
        if not self.b > above / f0:
            raise ValueError("RateConstruction needs b > E[X; X>0] / f_0 for negative drift")
        super().__post_init__()

    @property
    def phi(self):
        return CeilPower(self.beta)

    @cached_property
    def kernel(self):
        return _RateKernel(self.F, self.phi, self.b)

    @property
    def reference(self):
        return self.F

    def scale(self, x):
        return dists._out(x, np.asarray(x, dtype=float))

    def _state_means(self):
        return np.array([self.F.mean() - self.b * float(self.F.pmf(0))])

    @cached_property
    def _mean_length(self) -> tuple[float, float]:
        """E R on the truncated support and the share of the last decade (tail-sum evidence)."""
        F = self.F
        total, last = float(F.pmf(0)), 0.0
        chunk = 1 << 20
        for lo in range(1, F.cutoff + 1, chunk):
            k = np.arange(lo, min(lo + chunk, F.cutoff + 1), dtype=float)
            part = np.asarray(self.phi(k)) * np.asarray(F.pmf(k))
            total += float(part.sum())
            last += float(part[k > F.cutoff / 10].sum())
        return total, last

    def _state_lengths(self):
        return np.array([self._mean_length[0]])

    def _state_integrated(self, y, x):
        return self.F.tail_integral(x)

    def cycle_length_tail(self, x):
        # R > x iff phi(X) > x for X > 0
        xa = np.asarray(x, dtype=float)
        thr = np.floor(np.power(np.maximum(xa, 0.0), 1.0 / self.beta))
        return np.where(xa < 1, 1.0, np.asarray(self.F.tail(thr)))

    def to_dict(self):
        return {"kind": self.kind, "params": {"F": self.F.to_dict(), "beta": self.beta, "b": self.b}}


# ---------------------------------------------------------------------------
# operations


def generate_cycle(model: ProcessModel, rng: np.random.Generator, state: int | None = None) -> CyclePath:
    y = model.kernel.y0 if state is None else state
    return model.kernel.draw(rng, np.array([y])).cycle(0)


def modulated_step(model: ModulatedWalk, y: int, rng: np.random.Generator) -> tuple[float, int]:
    k = model.kernel
    if not 0 <= y < k.n_states:
        raise ValueError(f"state {y} outside 0..{k.n_states - 1}")
    b = k.draw(rng, np.array([y]))
    return float(b.xi[0]), int(k.next_states(rng, np.array([y]))[0])


def bjork_grandell_cycle(model: BjorkGrandell, rng: np.random.Generator) -> CyclePath:
    return generate_cycle(model, rng)


def theoretical_params(model: ProcessModel) -> TheoreticalParams:
    return model.params


@dataclass
class ConditionReport:
    grid: np.ndarray
    dominated: bool
    worst_domination: float
    c_y: np.ndarray
    c_converged: bool
    length_ratios: np.ndarray
    length_ok: bool

    @property
    def passed(self) -> bool:
        return self.dominated and self.c_converged and self.length_ok


def check_conditions(model: ProcessModel, reference: TailModel, grid: Sequence[float],
                     length_mult: float = 1.0, rtol: float = 0.02) -> ConditionReport:
    """Domination of every state tail by ``reference``, convergence of the tail
    coefficients ``c(y)``, and ``P(c R > x) / Fbar(x)`` shrinking along the grid."""
    x = np.asarray(grid, dtype=float)
    fb = np.asarray(reference.tail(x))
    k = model.kernel
    ratios = np.array([np.asarray(k.tail_proxy(y, x)) / fb for y in range(k.n_states)])
    worst = float(ratios.max())
    c_y = ratios[:, -1]
    conv = bool(np.all(np.abs(ratios[:, -1] - ratios[:, -2]) <= rtol * np.maximum(c_y, 1e-300)))
    lr = np.asarray(model.cycle_length_tail(x / length_mult)) / fb
    length_ok = bool(lr[-1] <= lr[0] and lr[-1] < 0.05 * max(lr[0], 1e-300) + 1e-12) or bool(np.all(lr == 0))
    return ConditionReport(x, worst <= 1.0 + 1e-9, worst, c_y, conv, lr, length_ok)


# ---------------------------------------------------------------------------
# serialization

_MODELS = {c.kind: c for c in (IIDWalk, ModulatedWalk, Regenerative, ModulatedRegenerative,
                               BjorkGrandell, FluidTwoStage, RateConstruction)}


def model_from_dict(d: dict) -> ProcessModel:
    kind = d.get("kind")
    p = dict(d.get("params", {}))
    mod = d.get("modulator")
    if kind == "IIDWalk":
        return IIDWalk(IncrementLaw.from_dict(p["increment"]))
    if kind == "ModulatedWalk":
        return ModulatedWalk(mod["P"], [IncrementLaw.from_dict(s) for s in mod["state_laws"]], int(p.get("y0", 0)))
    if kind == "ModulatedRegenerative":
        return ModulatedRegenerative(mod["P"], [CompoundLaw.from_dict(s) for s in mod["state_laws"]], int(p.get("y0", 0)))
    if kind == "Regenerative":
        return Regenerative(dist_from_dict(p["length"]), dist_from_dict(p["claims"]),
                            float(p.get("rate", 1.0)), float(p.get("premium", 1.0)))
    if kind == "BjorkGrandell":
        return BjorkGrandell(
            dist_from_dict(p["rate_law"]), dist_from_dict(p["length"]), dist_from_dict(p["claims"]),
            dist_from_dict(p["length_high"]) if "length_high" in p else None,
            float(p.get("lam0", math.inf)), p.get("big", "claims"), float(p.get("big_frac", 0.5)))
    if kind == "FluidTwoStage":
        return FluidTwoStage(float(p["a1"]), dist_from_dict(p["R2"]))
    if kind == "RateConstruction":
        F = dist_from_dict(p["F"])
        if not isinstance(F, DiscretePower):
            raise ValueError("RateConstruction needs a DiscretePower F")
        return RateConstruction(F, float(p["beta"]), p.get("b"))
    raise ValueError(f"unknown model kind {kind!r}")
