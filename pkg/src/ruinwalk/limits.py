"""Asymptotic reference laws and the statistics used to compare simulated
conditional samples with them: weighted KS distances, KS-trend verdicts,
Bjork-Grandell tail constants and the growth-rate bound check for discrete
cycle constructions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .dists import (DiscretePower, LimitLawG, Pareto, QuadratureError, QUAD_RTOL,
                    Deterministic, TailModel)

__all__ = [
    "LimitLaw",
    "GLaw",
    "ScaledG",
    "QuadrupleLaw",
    "Cor71MixI",
    "Cor71MixII",
    "Cor71Power",
    "WStarBG",
    "EmpiricalDistribution",
    "ks_distance",
    "ks_two_sample",
    "trend_check",
    "TrendVerdict",
    "bg_constants",
    "growth_bound_check",
    "GrowthReport",
]

_P_NODES = (np.arange(4096) + 0.5) / 4096.0


class LimitLaw:
    """A one-dimensional law with ``cdf`` and ``sample``."""

    def cdf(self, t):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def sf(self, t):
        return 1.0 - np.asarray(self.cdf(t))


@dataclass(frozen=True)
class GLaw(LimitLaw):
    g: LimitLawG

    def cdf(self, t):
        return self.g.cdf(t)

    def sample(self, rng, size=None):
        return self.g.sample(rng, size)


@dataclass(frozen=True)
class ScaledG(LimitLaw):
    """Law of ``c W`` with ``W ~ G``."""

    c: float
    g: LimitLawG

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("scale must be positive")

    def cdf(self, t):
        return self.g.cdf(np.asarray(t, dtype=float) / self.c)

    def sample(self, rng, size=None):
        return self.c * np.asarray(self.g.sample(rng, size))


@dataclass(frozen=True)
class QuadrupleLaw(LimitLaw):
    """Joint law of ``(W, -W, 0, W')`` with ``P(W > u, W' > v) = Gbar(u + v)``.

    ``cdf`` is the marginal of the first (equivalently the fourth) component.
    """

    g: LimitLawG

    def cdf(self, t):
        return self.g.cdf(t)

    def joint_sf(self, u, v):
        return self.g.sf(np.asarray(u, dtype=float) + np.asarray(v, dtype=float))

    def sample(self, rng, size=None):
        """Draws of shape ``(size, 4)``."""
        n = 1 if size is None else size
        w = np.asarray(self.g.sample(rng, n), dtype=float)
        uu = 1.0 - rng.random(n)
        if self.g.kind == "ParetoTail":
            # W' | W = w has tail g(w + v) / g(w) = ((1 + w + v) / (1 + w))^-(gamma + 1)
            w2 = (1.0 + w) * (np.power(uu, -1.0 / (self.g.exponent + 1.0)) - 1.0)
        elif self.g.kind == "StdExp":
            w2 = -np.log(uu)
        else:
            raise NotImplementedError("joint sampling needs a closed-form G density")
        out = np.column_stack([w, -w, np.zeros(n), w2])
        return out[0] if size is None else out


class _WStar(LimitLaw):
    pass


@dataclass(frozen=True)
class WStarBG(_WStar):
    """Within-cycle time law for the heavy-length Bjork-Grandell case.

    ``P(W* <= t) = (1/c) int_{max(lam0, (1/t + 1)/m)}^inf f(l) (l m - 1)^alpha dl``
    for ``t <= 1/(lam0 m - 1)`` and 1 beyond.
    """

    rate_law: TailModel
    m: float
    lam0: float
    alpha: float

    def __post_init__(self):
        if not self.lam0 * self.m > 1:
            raise ValueError("WStarBG needs lam0 * m > 1")

    @property
    def t_max(self) -> float:
        return 1.0 / (self.lam0 * self.m - 1.0)

    def _integrand(self, l):
        return float(self.rate_law.pdf(l)) * (l * self.m - 1.0) ** self.alpha

    def _tilted_mass(self, lo: float, hi: float = np.inf) -> float:
        val, err = integrate.quad(self._integrand, lo, hi, epsabs=0.0, epsrel=QUAD_RTOL, limit=500)
        if val > 0 and err > 1e-6 * val:
            raise QuadratureError(f"tilted rate integral over ({lo}, {hi})", err / val)
        return val

    @cached_property
    def c(self) -> float:
        return self._tilted_mass(self.lam0)

    def cdf(self, t):
        """Exact CDF; arrays are handled by summing quadratures between sorted points."""
        ta = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.where(ta >= self.t_max, 1.0, 0.0)
        inner = (ta > 0) & (ta < self.t_max)
        if inner.any():
            u, inv = np.unique(ta[inner], return_inverse=True)
            lo = (1.0 / u + 1.0) / self.m  # decreasing in u
            mass = np.empty(u.size)
            mass[0] = self._tilted_mass(lo[0])
            for i in range(1, u.size):
                mass[i] = mass[i - 1] + self._tilted_mass(lo[i], lo[i - 1])
            out[inner] = np.minimum(1.0, mass / self.c)[inv]
        return float(out[0]) if np.ndim(t) == 0 else out.reshape(np.shape(t))

    @cached_property
    def _grid(self):
        # tabulate in lambda-quantile space of the prior above lam0
        lt = float(self.rate_law.log_tail(self.lam0))
        q = np.concatenate([np.linspace(0, 0.999, 20000), 1 - np.logspace(-3, -12, 2000)])
        lam = np.asarray(self.rate_law.log_isf(lt + np.log1p(-q)))
        t = np.unique(np.r_[1.0 / (lam * self.m - 1.0), self.t_max])
        return t, np.maximum.accumulate(np.asarray(self.cdf(t)))

    def table_cdf(self, t):
        """Interpolated CDF from the tabulated grid (used inside mixtures)."""
        tg, F = self._grid
        return np.interp(t, tg, F, left=0.0, right=1.0)

    def sample(self, rng, size=None):
        t, F = self._grid
        u = rng.random(size)
        return np.interp(u, F, t)


@dataclass(frozen=True)
class Cor71MixII(LimitLaw):
    """Law of ``W*`` alone."""

    wstar: LimitLaw

    def cdf(self, t):
        return self.wstar.cdf(t)

    def sample(self, rng, size=None):
        return self.wstar.sample(rng, size)


def _mix_cdf(t, g: LimitLawG, wstar: LimitLaw, comb: Callable):
    """P(comb(W, W*) <= t) with ``comb`` increasing in W*; integrates over W quantiles.

    ``comb`` returns the W* threshold given (t, w)."""
    w = np.asarray(g.isf(1.0 - _P_NODES))
    fcdf = getattr(wstar, "table_cdf", wstar.cdf)
    ta = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(ta.shape)
    for i, v in enumerate(ta.ravel()):
        thr = comb(v, w)
        vals = np.where(thr < 0, 0.0, np.asarray(fcdf(np.maximum(thr, 0.0))))
        out.flat[i] = float(np.mean(vals))
    return float(out[0]) if np.ndim(t) == 0 else out


@dataclass(frozen=True)
class Cor71MixI(LimitLaw):
    """Law of ``W mu / a + d (1 + W) W*`` with W, W* independent."""

    d: float
    mu: float
    a: float
    g: LimitLawG
    wstar: LimitLaw

    def cdf(self, t):
        if self.d == 0:
            return self.g.cdf(np.asarray(t, dtype=float) * self.a / self.mu)
        k = self.mu / self.a
        return _mix_cdf(t, self.g, self.wstar, lambda v, w: (v - k * w) / (self.d * (1.0 + w)))

    def sample(self, rng, size=None):
        w = np.asarray(self.g.sample(rng, size))
        ws = np.asarray(self.wstar.sample(rng, size))
        return w * self.mu / self.a + self.d * (1.0 + w) * ws


@dataclass(frozen=True)
class Cor71Power(LimitLaw):
    """Law of ``d (1 + W)^beta W*``."""

    d: float
    beta: float
    g: LimitLawG
    wstar: LimitLaw

    def cdf(self, t):
        return _mix_cdf(t, self.g, self.wstar, lambda v, w: v / (self.d * (1.0 + w) ** self.beta))

    def sample(self, rng, size=None):
        w = np.asarray(self.g.sample(rng, size))
        return self.d * (1.0 + w) ** self.beta * np.asarray(self.wstar.sample(rng, size))


# ---------------------------------------------------------------------------
# empirical distributions and KS


@dataclass
class EmpiricalDistribution:
    """Sorted sample with normalized positive weights (uniform by default)."""

    values: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size == 0:
            raise ValueError("empty sample")
        if not np.all(np.isfinite(v)):
            raise ValueError("sample values must be finite")
        w = np.ones(v.size) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != v.shape or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be nonnegative, not all zero, one per value")
        o = np.argsort(v, kind="stable")
        self.values = v[o]
        self.weights = w[o] / w.sum()

    def cdf(self, t):
        cw = np.concatenate([[0.0], np.cumsum(self.weights)])
        return cw[np.searchsorted(self.values, t, side="right")]

    def quantile(self, p):
        cw = np.cumsum(self.weights)
        return self.values[np.minimum(np.searchsorted(cw, p, side="left"), len(cw) - 1)]

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))


def _steps(emp: EmpiricalDistribution):
    """Unique values with ECDF just after and just before each."""
    v, w = emp.values, emp.weights
    cw = np.cumsum(w)
    last = np.r_[v[1:] != v[:-1], True]
    u = v[last]
    after = cw[last]
    before = np.r_[0.0, after[:-1]]
    return u, after, before


def ks_distance(emp: EmpiricalDistribution, law: LimitLaw) -> float:
    """Weighted one-sample KS distance ``sup |F_emp - F_law|``."""
    u, after, before = _steps(emp)
    F = np.asarray(law.cdf(u), dtype=float)
    return float(max(np.max(after - F), np.max(F - before), 0.0))


def ks_two_sample(e1: EmpiricalDistribution, e2: EmpiricalDistribution) -> float:
    """Weighted two-sample KS distance."""
    grid = np.union1d(e1.values, e2.values)
    return float(np.max(np.abs(e1.cdf(grid) - e2.cdf(grid))))


@dataclass
class TrendVerdict:
    x: np.ndarray
    ks: np.ndarray
    threshold: float
    slope: float
    passed: bool

    def rows(self):
        """(x, ks, threshold, pass) rows; ``pass`` is the series verdict."""
        return [(float(a), float(b), self.threshold, self.passed) for a, b in zip(self.x, self.ks)]

    def to_dict(self) -> dict:
        return {"x": [float(v) for v in self.x], "ks": [float(v) for v in self.ks],
                "threshold": self.threshold, "slope": self.slope, "pass": self.passed}


def trend_check(series: Sequence[tuple], threshold: float = 0.1) -> TrendVerdict:
    """Pass iff the last KS is at most ``threshold`` and KS decreases in log x (LS slope < 0)."""
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 3:
        raise ValueError("trend check needs at least 3 (x, ks) points")
    x, ks = arr[:, 0], arr[:, 1]
    if np.any(np.diff(x) <= 0):
        raise ValueError("x must be strictly increasing")
    slope = float(np.polyfit(np.log(x), ks, 1)[0])
    return TrendVerdict(x, ks, float(threshold), slope, bool(ks[-1] <= threshold and slope < 0))


# ---------------------------------------------------------------------------
# Bjork-Grandell constants


def bg_constants(rate_law: TailModel, m: float, lam0: float, alpha: float,
                 mean_R: float, mean_lambda_R: float) -> tuple[float, float]:
    """``c = E[(Lambda m - 1)^alpha; Lambda > lam0]`` and
    ``c1 = c / ((alpha - 1) (E R - m E[Lambda R]))``."""
    denom = mean_R - m * mean_lambda_R
    if not denom > 0:
        raise ValueError(f"E R - m E[Lambda R] = {denom:.6g} is not positive (no negative drift)")
    if isinstance(rate_law, Deterministic):
        lam = rate_law.value
        c = (lam * m - 1.0) ** alpha if lam > lam0 else 0.0
    elif float(rate_law.tail(lam0)) == 0.0:
        c = 0.0
    else:
        c = WStarBG(rate_law, m, lam0, alpha).c
    return float(c), float(c / ((alpha - 1.0) * denom))


def bg_constants_for(model) -> tuple[float, float]:
    """``bg_constants`` for a heavy-length BjorkGrandell model with Pareto high lengths."""
    law = model._claws()[0]
    hi = law._high
    if not isinstance(hi, Pareto):
        raise ValueError("c1 needs a Pareto high-length law")
    return bg_constants(law.rate, law.claims.mean(), law.lam0, hi.alpha,
                        law.mean_length(), law.mean_lambda_length())


# ---------------------------------------------------------------------------
# growth bound for discrete constructions


@dataclass
class GrowthReport:
    feasible: bool
    witness_x: float | None
    term_exponent: float
    partial_sums: dict
    tail_share: float
    grid: np.ndarray
    phi_tail: np.ndarray
    phi_tail_slope: float
    k: np.ndarray
    bound_ok: bool
    recursion_ok: bool
    k1_tail1: float

    def to_dict(self) -> dict:
        return {"feasible": self.feasible, "witness_x": self.witness_x,
                "term_exponent": self.term_exponent,
                "partial_sums": {str(k): v for k, v in self.partial_sums.items()},
                "tail_share": self.tail_share, "phi_tail_slope": self.phi_tail_slope,
                "bound_ok": self.bound_ok, "recursion_ok": self.recursion_ok}


def growth_bound_check(F: DiscretePower, phi: Callable, grid: Sequence[float] | None = None) -> GrowthReport:
    """Check a cycle-length function ``phi`` against a discrete heavy-tailed ``F``.

    Cycles are ``R = 1`` when ``X = 0`` and ``R = phi(X)`` otherwise.  Reports
    (a) summability of ``t_x f_x`` (fitted power decay of the terms and the
    share of ``E R`` carried by the last decade of the truncated support),
    (b) the bound ``k(y) F(y) <= k(1) F(1)`` on the grid, (c) positivity of
    ``t_{x+1}`` recovered from the ``k`` recursion, and the trend of
    ``phi(x) Fbar(x)``.  Feasible iff the terms are summable and
    ``phi Fbar`` stays bounded.
    """
    N = F.cutoff
    k = np.arange(N + 1, dtype=float)
    f = np.asarray(F.pmf(k))
    t = np.where(k == 0, 1.0, np.asarray(phi(np.maximum(k, 1.0)), dtype=float))
    terms = t * f
    # reverse sums: S[x] = sum_{j > x} t_j f_j
    rev = np.cumsum(terms[::-1])[::-1]
    S = np.r_[rev[1:], 0.0]
    Fbar = np.asarray(F.tail(k))
    ER = float(terms.sum())
    decades = [int(N // 10**p) for p in range(4, -1, -1) if N // 10**p >= 10]
    partial = {d: float(terms[: d + 1].sum()) for d in decades}
    tail_share = float(terms[N // 10 + 1:].sum() / ER)
    hi = k >= max(10.0, N / 1000)
    sel = hi & (terms > 0)
    gamma = float(-np.polyfit(np.log(k[sel]), np.log(terms[sel]), 1)[0])

    if grid is None:
        grid = np.unique(np.round(np.logspace(0, math.log10(N / 10), 40)))
    g = np.asarray(grid, dtype=float).astype(int)
    kx = S[g] / Fbar[g]
    k1F1 = float(S[1])
    bound_ok = bool(np.all(S[g] <= k1F1 * (1 + 1e-12)))
    # recursion t_{x+1} = (k(x) Fbar(x) - k(x+1) Fbar(x+1)) / f_{x+1}
    gr = g[g + 1 <= N]
    t_rec = (S[gr] - S[gr + 1]) / f[gr + 1]
    recursion_ok = bool(np.all(t_rec > 0) and np.allclose(t_rec, t[gr + 1], rtol=1e-6))
    pf = t[g] * Fbar[g]
    up = g >= g[len(g) // 2]
    slope = float(np.polyfit(np.log(g[up]), np.log(pf[up]), 1)[0])
    summable = gamma > 1.0
    bounded = slope <= 0.05
    feasible = summable and bounded
    witness = None
    if not feasible:
        # first grid point where phi Fbar exceeds its running level at x = 1 tenfold, else the argmax
        big = np.flatnonzero(pf > 10 * pf[0])
        witness = float(g[big[0]] if big.size else g[int(np.argmax(pf))])
    return GrowthReport(feasible, witness, gamma, partial, tail_share, g.astype(float), pf, slope,
                        kx, bound_ok, recursion_ok, k1F1)
