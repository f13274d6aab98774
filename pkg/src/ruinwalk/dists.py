"""Heavy-tailed distribution catalog.

Every model exposes its survival function ``tail`` (also in log form), an
inverse survival function used for exact inverse-transform sampling, the
integrated tail ``min(1, int_x^inf tail)``, and the scale function / limit
law pair that governs conditional exceedance times.

All numeric methods accept scalars or numpy arrays and return the same shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from functools import cached_property
from typing import Callable, ClassVar, Sequence

import numpy as np
from scipy import integrate, special

__all__ = [
    "TailModel",
    "Pareto",
    "Lognormal",
    "WeibullHeavy",
    "DiscretePower",
    "Exponential",
    "Deterministic",
    "GammaLight",
    "ScaleFunction",
    "LimitLawG",
    "QuadratureError",
    "InsensitivityReport",
    "SelfNeglectReport",
    "tail",
    "mean",
    "integrated_tail",
    "quad_tail_integral",
    "scale_function",
    "limit_law",
    "sample",
    "conditional_tail_sample",
    "check_insensitivity",
    "check_weak_self_neglect",
    "dist_from_dict",
]

QUAD_RTOL = 1e-8


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested relative tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error bound {achieved:.3e})")
        self.achieved = achieved


def _out(x_in, res):
    """Return a python float for scalar input, an array otherwise."""
    if np.ndim(x_in) == 0:
        return float(np.asarray(res).reshape(()))
    return np.asarray(res, dtype=float)


def _log_upper_gamma(a: float, z):
    """log Gamma(a, z) (unregularized upper incomplete gamma), stable for large z."""
    shape = np.shape(z)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    q = special.gammaincc(a, z)
    with np.errstate(divide="ignore"):
        direct = np.log(q) + special.gammaln(a)
    bad = ~(q > 1e-250)
    if not np.any(bad):
        return direct.reshape(shape)
    # continued fraction (modified Lentz) for Gamma(a, z) e^z z^-a, used for z > a + 1
    zb = z[bad]
    tiny = 1e-300
    b = zb + 1.0 - a
    c = np.full_like(zb, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, 300):
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = b + an / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = h * delta
        if np.all(np.abs(delta - 1.0) < 1e-15):
            break
    out = direct.copy()
    out[bad] = -zb + a * np.log(zb) + np.log(h)
    return out.reshape(shape)


@dataclass(frozen=True)
class TailModel:
    """Base class. Subclasses are frozen dataclasses named after their kind."""

    heavy: ClassVar[bool] = False
    support_min: ClassVar[float] = 0.0

    # --- survival function -------------------------------------------------
    def tail(self, x):
        raise NotImplementedError

    def log_tail(self, x):
        with np.errstate(divide="ignore"):
            return _out(x, np.log(np.asarray(self.tail(x), dtype=float)))

    def cdf(self, x):
        return _out(x, 1.0 - np.asarray(self.tail(x)))

    def pdf(self, x):
        raise NotImplementedError(f"{type(self).__name__} has no density")

    # --- inverse survival --------------------------------------------------
    def isf(self, q):
        """Smallest x with tail(x) <= q, for q in (0, 1]."""
        raise NotImplementedError

    def log_isf(self, log_q):
        return self.isf(np.exp(log_q))

    # --- moments -----------------------------------------------------------
    def mean(self) -> float:
        raise NotImplementedError

    def second_moment(self) -> float:
        raise NotImplementedError

    def tail_integral(self, x):
        """Unclamped ``int_x^inf tail(y) dy`` (the stop-loss transform ``E(X-x)^+``)."""
        raise NotImplementedError

    def partial_mean_above(self, t: float) -> float:
        """E[X; X > t] for t >= 0."""
        t = max(float(t), 0.0)
        return t * float(self.tail(t)) + float(self.tail_integral(t))

    # --- sampling ----------------------------------------------------------
    def sample(self, rng: np.random.Generator, size=None):
        log_q = -rng.standard_exponential(size)
        return self.log_isf(log_q)

    def sample_above(self, u, rng: np.random.Generator, size=None):
        """Draws of X given X > u (u may be an array broadcast against size)."""
        lt = np.asarray(self.log_tail(u), dtype=float)
        if np.any(~np.isfinite(lt)):
            raise ValueError(
                f"{type(self).__name__}: conditioning event X > u has probability 0"
            )
        shape = size if size is not None else lt.shape
        log_q = lt - rng.standard_exponential(shape)
        return self.log_isf(log_q)

    def sample_below(self, u, rng: np.random.Generator, size=None):
        """Draws of X given X <= u."""
        tu = np.asarray(self.tail(u), dtype=float)
        shape = size if size is not None else tu.shape
        v = rng.random(shape)
        q = tu + (1.0 - tu) * (1.0 - v)
        return self.isf(q)

    # --- serialization -----------------------------------------------------
    @property
    def kind(self) -> str:
        return type(self).__name__

    def params(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params()}


@dataclass(frozen=True)
class Pareto(TailModel):
    """Pareto (Lomax) law, tail ``(1 + x/sigma)^-alpha`` on [0, inf)."""

    alpha: float
    sigma: float = 1.0
    heavy: ClassVar[bool] = True

    def __post_init__(self):
        if not self.alpha > 1.0 or not self.sigma > 0.0:
            raise ValueError("Pareto needs alpha > 1 and sigma > 0")

    def tail(self, x):
        xa = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore"):
            res = np.where(xa < 0, 1.0, np.power(1.0 + np.maximum(xa, 0) / self.sigma, -self.alpha))
        return _out(x, res)

    def log_tail(self, x):
        xa = np.asarray(x, dtype=float)
        return _out(x, -self.alpha * np.log1p(np.maximum(xa, 0.0) / self.sigma))

    def pdf(self, x):
        xa = np.asarray(x, dtype=float)
        res = np.where(
            xa < 0, 0.0,
            self.alpha / self.sigma * np.power(1.0 + np.maximum(xa, 0) / self.sigma, -self.alpha - 1),
        )
        return _out(x, res)

    def isf(self, q):
        return _out(q, self.sigma * (np.power(np.asarray(q, dtype=float), -1.0 / self.alpha) - 1.0))

    def log_isf(self, log_q):
        return _out(log_q, self.sigma * np.expm1(-np.asarray(log_q, dtype=float) / self.alpha))

    def mean(self) -> float:
        return self.sigma / (self.alpha - 1.0)

    def second_moment(self) -> float:
        if self.alpha <= 2.0:
            return math.inf
        return 2.0 * self.sigma**2 / ((self.alpha - 1.0) * (self.alpha - 2.0))

    def tail_integral(self, x):
        xa = np.asarray(x, dtype=float)
        pos = self.sigma / (self.alpha - 1.0) * np.power(1.0 + np.maximum(xa, 0) / self.sigma, 1.0 - self.alpha)
        return _out(x, np.where(xa < 0, -xa + self.mean(), pos))


@dataclass(frozen=True)
class Lognormal(TailModel):
    """Lognormal law with log-mean ``mu`` and log-sd ``sigma``."""

    mu: float
    sigma: float
    heavy: ClassVar[bool] = True

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValueError("Lognormal needs sigma > 0")

    def _z(self, xa):
        with np.errstate(divide="ignore"):
            return (np.log(np.maximum(xa, 1e-300)) - self.mu) / self.sigma

    def tail(self, x):
        xa = np.asarray(x, dtype=float)
        return _out(x, np.where(xa <= 0, 1.0, special.ndtr(-self._z(xa))))

    def log_tail(self, x):
        xa = np.asarray(x, dtype=float)
        return _out(x, np.where(xa <= 0, 0.0, special.log_ndtr(-self._z(xa))))

    def pdf(self, x):
        xa = np.asarray(x, dtype=float)
        z = self._z(xa)
        res = np.where(
            xa <= 0, 0.0,
            np.exp(-0.5 * z * z) / (np.maximum(xa, 1e-300) * self.sigma * math.sqrt(2 * math.pi)),
        )
        return _out(x, res)

    def isf(self, q):
        return _out(q, np.exp(self.mu - self.sigma * special.ndtri(np.asarray(q, dtype=float))))

    def log_isf(self, log_q):
        return _out(log_q, np.exp(self.mu - self.sigma * special.ndtri_exp(np.asarray(log_q, dtype=float))))

    def mean(self) -> float:
        return math.exp(self.mu + 0.5 * self.sigma**2)

    def second_moment(self) -> float:
        return math.exp(2 * self.mu + 2 * self.sigma**2)

    def tail_integral(self, x):
        xa = np.asarray(x, dtype=float)
        xp = np.maximum(xa, 1e-300)
        z = self._z(xp)
        # E(X-x)^+ = x*tail(x)*(r-1), r = m*Phi(sigma-z) / (x*Phi(-z)); avoids cancellation
        log_r = math.log(self.mean()) + special.log_ndtr(self.sigma - z) - np.log(xp) - special.log_ndtr(-z)
        pos = xp * np.exp(special.log_ndtr(-z)) * np.expm1(log_r)
        return _out(x, np.where(xa <= 0, self.mean() - np.minimum(xa, 0), pos))

    def mean_excess(self, x):
        xa = np.maximum(np.asarray(x, dtype=float), 1e-300)
        z = self._z(xa)
        log_r = math.log(self.mean()) + special.log_ndtr(self.sigma - z) - np.log(xa) - special.log_ndtr(-z)
        return _out(x, xa * np.expm1(log_r))


@dataclass(frozen=True)
class WeibullHeavy(TailModel):
    """Weibull law with shape ``beta`` in (0, 1): tail ``exp(-(x/scale)^beta)``."""

    beta: float
    scale: float = 1.0
    heavy: ClassVar[bool] = True

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0 or not self.scale > 0.0:
            raise ValueError("WeibullHeavy needs 0 < beta < 1 and scale > 0")

    def log_tail(self, x):
        xa = np.maximum(np.asarray(x, dtype=float), 0.0)
        return _out(x, -np.power(xa / self.scale, self.beta))

    def tail(self, x):
        return _out(x, np.exp(np.asarray(self.log_tail(x))))

    def pdf(self, x):
        xa = np.asarray(x, dtype=float)
        xp = np.maximum(xa, 1e-300) / self.scale
        res = self.beta / self.scale * np.power(xp, self.beta - 1) * np.exp(-np.power(xp, self.beta))
        return _out(x, np.where(xa <= 0, 0.0, res))

    def isf(self, q):
        return self.log_isf(np.log(np.asarray(q, dtype=float)))

    def log_isf(self, log_q):
        lq = np.minimum(np.asarray(log_q, dtype=float), 0.0)
        return _out(log_q, self.scale * np.power(-lq, 1.0 / self.beta))

    def mean(self) -> float:
        return self.scale * math.gamma(1.0 + 1.0 / self.beta)

    def second_moment(self) -> float:
        return self.scale**2 * math.gamma(1.0 + 2.0 / self.beta)

    def _log_tail_integral(self, xa):
        a = 1.0 / self.beta
        z = np.power(np.maximum(xa, 0.0) / self.scale, self.beta)
        return math.log(self.scale / self.beta) + _log_upper_gamma(a, z)

    def tail_integral(self, x):
        xa = np.asarray(x, dtype=float)
        pos = np.exp(self._log_tail_integral(xa))
        return _out(x, np.where(xa < 0, -xa + self.mean(), pos))

    def mean_excess(self, x):
        xa = np.maximum(np.asarray(x, dtype=float), 0.0)
        return _out(x, np.exp(self._log_tail_integral(xa) - np.asarray(self.log_tail(xa))))


@dataclass(frozen=True)
class DiscretePower(TailModel):
    """Integer law on {0, ..., cutoff} with point masses proportional to ``(1+k)^-(alpha+1)``.

    Tails, moments and the stop-loss transform are exact finite sums, written
    through Hurwitz zeta differences so no array over the support is built.
    """

    alpha: float
    cutoff: int = 10**7
    heavy: ClassVar[bool] = True
    TABLE: ClassVar[int] = 1 << 14

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ValueError("DiscretePower needs alpha > 1")
        if int(self.cutoff) < 1:
            raise ValueError("DiscretePower needs cutoff >= 1")
        object.__setattr__(self, "cutoff", int(self.cutoff))

    @property
    def _s(self) -> float:
        return self.alpha + 1.0

    def _hz(self, s, q):
        """sum_{j >= q-1, j <= cutoff} (1+j)^-s, i.e. zeta(s, q) - zeta(s, cutoff + 2)."""
        return special.zeta(s, q) - special.zeta(s, self.cutoff + 2.0)

    @property
    def norm(self) -> float:
        return float(self._hz(self._s, 1.0))

    def pmf(self, k):
        ka = np.asarray(k, dtype=float)
        ok = (ka >= 0) & (ka <= self.cutoff) & (ka == np.floor(ka))
        return _out(k, np.where(ok, np.power(1.0 + np.maximum(ka, 0), -self._s) / self.norm, 0.0))

    def _tail_int(self, n):
        """P(X > n) for integer array n."""
        n = np.asarray(n, dtype=float)
        nc = np.clip(n, -1, self.cutoff)
        val = self._hz(self._s, nc + 2.0) / self.norm
        val = np.where(n < 0, 1.0, np.where(n >= self.cutoff, 0.0, val))
        return np.clip(val, 0.0, 1.0)

    def tail(self, x):
        return _out(x, self._tail_int(np.floor(np.asarray(x, dtype=float))))

    @cached_property
    def _table(self) -> np.ndarray:
        """P(X > k) for k = 0 .. TABLE-1 (nonincreasing), for fast inversion."""
        return self._tail_int(np.arange(min(self.TABLE, self.cutoff), dtype=float))

    def isf(self, q):
        qa = np.atleast_1d(np.asarray(q, dtype=float))
        tab = self._table
        # smallest k with tail(k) <= q inside the table; bisection beyond it
        k = np.searchsorted(-tab, -qa, side="left").astype(float)
        far = k >= len(tab)
        if far.any():
            k[far] = self._bisect(qa[far], len(tab) - 1.0)
        res = k.reshape(np.shape(q)) if np.ndim(q) else k[0]
        return _out(q, res)

    def _bisect(self, qa, lo0: float):
        lo = np.full(qa.shape, lo0)
        hi = np.full(qa.shape, float(self.cutoff))
        while np.any(hi - lo > 1):
            mid = np.floor(0.5 * (lo + hi))
            ok = self._tail_int(mid) <= qa
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid)
        return hi

    def sample_above(self, u, rng, size=None):
        res = super().sample_above(u, rng, size)
        return _out(res, np.maximum(res, np.floor(np.asarray(u, dtype=float)) + 1.0))

    def mean(self) -> float:
        return float(self._hz(self.alpha, 1.0) / self.norm - 1.0)

    def second_moment(self) -> float:
        if self.alpha <= 2.0:
            k = np.arange(self.cutoff + 1, dtype=float)
            return float(np.sum(k * k * np.power(1.0 + k, -self._s)) / self.norm)
        s = self._s
        return float((self._hz(s - 2, 1.0) - 2 * self._hz(s - 1, 1.0) + self._hz(s, 1.0)) / self.norm)

    def _stop_loss_int(self, j):
        """E(X - j)^+ for integer array j >= 0."""
        j = np.asarray(j, dtype=float)
        jc = np.clip(j, 0, self.cutoff)
        val = self._hz(self.alpha, jc + 2.0) / self.norm - (jc + 1.0) * self._tail_int(jc)
        return np.where(j >= self.cutoff, 0.0, np.maximum(val, 0.0))

    def tail_integral(self, x):
        xa = np.asarray(x, dtype=float)
        n = np.floor(np.maximum(xa, 0.0))
        pos = (n + 1.0 - np.maximum(xa, 0.0)) * self._tail_int(n) + self._stop_loss_int(n + 1.0)
        return _out(x, np.where(xa < 0, -xa + self.mean(), pos))

    def mean_excess(self, x):
        """Mean excess at integer points, held constant between them."""
        n = np.floor(np.maximum(np.asarray(x, dtype=float), 0.0))
        return _out(x, self._stop_loss_int(n) / self._tail_int(n))


@dataclass(frozen=True)
class Exponential(TailModel):
    rate: float

    def __post_init__(self):
        if not self.rate > 0.0:
            raise ValueError("Exponential needs rate > 0")

    def tail(self, x):
        xa = np.asarray(x, dtype=float)
        return _out(x, np.exp(-self.rate * np.maximum(xa, 0.0)))

    def log_tail(self, x):
        return _out(x, -self.rate * np.maximum(np.asarray(x, dtype=float), 0.0))

    def pdf(self, x):
        xa = np.asarray(x, dtype=float)
        return _out(x, np.where(xa < 0, 0.0, self.rate * np.exp(-self.rate * np.maximum(xa, 0))))

    def isf(self, q):
        return _out(q, -np.log(np.asarray(q, dtype=float)) / self.rate)

    def log_isf(self, log_q):
        return _out(log_q, -np.asarray(log_q, dtype=float) / self.rate)

    def mean(self) -> float:
        return 1.0 / self.rate

    def second_moment(self) -> float:
        return 2.0 / self.rate**2

    def tail_integral(self, x):
        xa = np.asarray(x, dtype=float)
        return _out(x, np.where(xa < 0, -xa + self.mean(), np.exp(-self.rate * np.maximum(xa, 0)) / self.rate))


@dataclass(frozen=True)
class Deterministic(TailModel):
    value: float

    def tail(self, x):
        return _out(x, (np.asarray(x, dtype=float) < self.value).astype(float))

    def isf(self, q):
        return _out(q, np.full(np.shape(q), float(self.value)))

    def log_isf(self, log_q):
        return _out(log_q, np.full(np.shape(log_q), float(self.value)))

    def sample(self, rng, size=None):
        return _out(np.empty(size) if size is not None else 0.0,
                    np.full(() if size is None else size, float(self.value)))

    def mean(self) -> float:
        return float(self.value)

    def second_moment(self) -> float:
        return float(self.value) ** 2

    def tail_integral(self, x):
        return _out(x, np.maximum(self.value - np.asarray(x, dtype=float), 0.0))

    def partial_mean_above(self, t: float) -> float:
        return float(self.value) if self.value > t else 0.0


@dataclass(frozen=True)
class GammaLight(TailModel):
    shape: float
    rate: float

    def __post_init__(self):
        if not self.shape > 0.0 or not self.rate > 0.0:
            raise ValueError("GammaLight needs shape > 0 and rate > 0")

    def tail(self, x):
        xa = np.maximum(np.asarray(x, dtype=float), 0.0)
        return _out(x, special.gammaincc(self.shape, self.rate * xa))

    def pdf(self, x):
        xa = np.asarray(x, dtype=float)
        xp = np.maximum(xa, 1e-300)
        logp = (self.shape * math.log(self.rate) + (self.shape - 1) * np.log(xp)
                - self.rate * xp - special.gammaln(self.shape))
        return _out(x, np.where(xa <= 0, 0.0, np.exp(logp)))

    def isf(self, q):
        return _out(q, special.gammainccinv(self.shape, np.asarray(q, dtype=float)) / self.rate)

    def sample(self, rng, size=None):
        # the generator's gamma routine is much faster than inverting gammaincc
        return rng.gamma(self.shape, 1.0 / self.rate, size)

    def mean(self) -> float:
        return self.shape / self.rate

    def second_moment(self) -> float:
        return self.shape * (self.shape + 1.0) / self.rate**2

    def tail_integral(self, x):
        xa = np.asarray(x, dtype=float)
        xp = np.maximum(xa, 0.0)
        pos = (self.mean() * special.gammaincc(self.shape + 1.0, self.rate * xp)
               - xp * special.gammaincc(self.shape, self.rate * xp))
        return _out(x, np.where(xa < 0, -xa + self.mean(), np.maximum(pos, 0.0)))


_KINDS: dict[str, type[TailModel]] = {
    cls.__name__: cls
    for cls in (Pareto, Lognormal, WeibullHeavy, DiscretePower, Exponential, Deterministic, GammaLight)
}


def dist_from_dict(spec: dict) -> TailModel:
    """Build a model from ``{"kind": ..., "params": {...}}``."""
    try:
        cls = _KINDS[spec["kind"]]
    except KeyError:
        raise ValueError(f"unknown distribution kind {spec.get('kind')!r}") from None
    return cls(**spec.get("params", {}))


# ---------------------------------------------------------------------------
# scale functions and limit laws


@dataclass(frozen=True)
class ScaleFunction:
    """A scale ``e(x)`` with a flag telling whether it is an exact closed form."""

    evaluator: Callable
    closed_form: bool
    label: str = ""

    def __call__(self, x):
        return self.evaluator(x)


@dataclass(frozen=True)
class LimitLawG:
    """Limit law G of the rescaled exceedance time.

    ``kind`` is ``"ParetoTail"`` (tail ``(1+t)^-exponent``), ``"StdExp"``, or
    ``"Numeric"`` (``grid`` holds ``(t, tail)`` pairs, linearly interpolated).
    ``alt_exponent`` is the tail index of F itself, kept for reporting.
    """

    kind: str
    exponent: float | None = None
    grid: tuple = field(default=())
    alt_exponent: float | None = None

    def __post_init__(self):
        if self.kind == "ParetoTail" and not (self.exponent and self.exponent > 0):
            raise ValueError("ParetoTail needs a positive exponent")
        if self.kind == "Numeric":
            t, g = np.asarray(self.grid, dtype=float).T
            if t[0] != 0 or abs(g[0] - 1) > 1e-12 or np.any(np.diff(g) > 0) or np.any(np.diff(t) <= 0):
                raise ValueError("Numeric G grid must start at (0, 1), with t increasing and tail nonincreasing")
        if self.kind not in ("ParetoTail", "StdExp", "Numeric"):
            raise ValueError(f"unknown limit law kind {self.kind!r}")

    def sf(self, t):
        ta = np.maximum(np.asarray(t, dtype=float), 0.0)
        if self.kind == "ParetoTail":
            res = np.power(1.0 + ta, -self.exponent)
        elif self.kind == "StdExp":
            res = np.exp(-ta)
        else:
            gt, gg = np.asarray(self.grid, dtype=float).T
            res = np.interp(ta, gt, gg, right=gg[-1])
        return _out(t, np.where(np.asarray(t) < 0, 1.0, res))

    def cdf(self, t):
        return _out(t, 1.0 - np.asarray(self.sf(t)))

    def isf(self, q):
        qa = np.asarray(q, dtype=float)
        if self.kind == "ParetoTail":
            res = np.power(qa, -1.0 / self.exponent) - 1.0
        elif self.kind == "StdExp":
            res = -np.log(qa)
        else:
            gt, gg = np.asarray(self.grid, dtype=float).T
            res = np.interp(-qa, -gg, gt)
        return _out(q, res)

    def density(self, t):
        ta = np.asarray(t, dtype=float)
        if self.kind == "ParetoTail":
            return _out(t, self.exponent * np.power(1.0 + ta, -self.exponent - 1))
        if self.kind == "StdExp":
            return _out(t, np.exp(-ta))
        raise NotImplementedError("Numeric G has no density")

    def sample(self, rng: np.random.Generator, size=None):
        return self.isf(1.0 - rng.random(size))

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.exponent is not None:
            d["exponent"] = self.exponent
        if self.grid:
            d["grid"] = [list(p) for p in self.grid]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LimitLawG":
        return cls(d["kind"], d.get("exponent"), tuple(tuple(p) for p in d.get("grid", ())))


# ---------------------------------------------------------------------------
# operation-level functions


def tail(model: TailModel, x):
    return model.tail(x)


def mean(model: TailModel) -> float:
    return model.mean()


def integrated_tail(model: TailModel, x):
    """``min(1, int_x^inf tail)``; exact for every kind in the catalog."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise ValueError("integrated_tail needs x >= 0")
    return _out(x, np.minimum(1.0, np.asarray(model.tail_integral(xa))))


def quad_tail_integral(model: TailModel, x: float, rtol: float = QUAD_RTOL) -> float:
    """Adaptive-quadrature route for ``int_x^inf tail``.

    The half-line is split at geometrically growing breakpoints so each panel
    sees a smooth integrand; raises QuadratureError when the summed error
    estimate exceeds ``rtol`` relative.
    """
    x = float(x)
    if isinstance(model, DiscretePower):
        return _lattice_tail_integral(model, x)
    edges = [x]
    step = max(1.0, abs(x))
    for _ in range(60):
        edges.append(edges[-1] + step)
        step *= 2.0
    total, err = 0.0, 0.0
    f = lambda y: float(model.tail(y))
    for lo, hi in zip(edges[:-1], edges[1:]):
        if model.tail(lo) == 0.0:
            break
        val, e = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=rtol * 0.1, limit=200)
        total += val
        err += e
    rest, e = integrate.quad(f, edges[-1], np.inf, epsabs=0.0, epsrel=rtol * 0.1, limit=200)
    total += rest
    err += e
    if total > 0 and err > rtol * total:
        raise QuadratureError(f"tail integral of {model.kind} at x={x}", err / total)
    return total


def _lattice_tail_integral(model: "DiscretePower", x: float, chunk: int = 1 << 20) -> float:
    """Direct summation of the step-function tail over the truncated support."""
    n0 = int(math.floor(max(x, 0.0)))
    total = (n0 + 1 - max(x, 0.0)) * float(model.tail(n0))
    for lo in range(n0 + 1, model.cutoff, chunk):
        k = np.arange(lo, min(lo + chunk, model.cutoff), dtype=float)
        total += float(np.sum(model._tail_int(k)))
    return total


def _identity(x):
    return _out(x, np.asarray(x, dtype=float))


def scale_function(model: TailModel) -> ScaleFunction:
    """Natural scale ``e(x)``: identity for regularly varying kinds, mean excess otherwise."""
    if not model.heavy:
        raise ValueError(f"{model.kind} is light-tailed; no heavy-tail scale function")
    if isinstance(model, (Pareto, DiscretePower)):
        return ScaleFunction(_identity, True, "identity")
    if hasattr(model, "mean_excess"):
        return ScaleFunction(model.mean_excess, False, "mean excess")
    raise ValueError(f"no scale function for {model.kind}")


def limit_law(model: TailModel) -> LimitLawG:
    """Limit law G matched to ``scale_function(model)``.

    Regularly varying kinds get a Pareto tail with exponent ``alpha - 1``: that
    is what the ratio ``intTail(x + t x) / intTail(x)`` converges to.
    """
    if not model.heavy:
        raise ValueError(f"{model.kind} is light-tailed; no limit law")
    if isinstance(model, (Pareto, DiscretePower)):
        return LimitLawG("ParetoTail", model.alpha - 1.0, alt_exponent=model.alpha)
    return LimitLawG("StdExp")


def sample(model: TailModel, rng: np.random.Generator, size=None):
    return model.sample(rng, size)


def conditional_tail_sample(model: TailModel, u, rng: np.random.Generator, size=None):
    """Draw X given X > u by inverse transform restricted to the upper tail."""
    return model.sample_above(u, rng, size)


@dataclass
class InsensitivityReport:
    grid: np.ndarray
    deviations: np.ndarray
    max_deviation: float
    final_deviation: float
    passed: bool


def check_insensitivity(model: TailModel, h: Callable, grid: Sequence[float], tol: float = 0.01) -> InsensitivityReport:
    """Max over the grid of ``|tail(x + h(x)) / tail(x) - 1|`` against ``tol``."""
    x = np.asarray(grid, dtype=float)
    hx = np.asarray([float(h(v)) for v in x])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.exp(np.asarray(model.log_tail(x + hx)) - np.asarray(model.log_tail(x)))
    dev = np.abs(ratio - 1.0)
    mx = float(np.max(dev))
    return InsensitivityReport(x, dev, mx, float(dev[-1]), mx <= tol)


@dataclass
class SelfNeglectReport:
    grid: np.ndarray
    ratios: np.ndarray
    sup_ratio: float
    log_slope: float
    bounded: bool


def check_weak_self_neglect(scale, grid: Sequence[float], slope_tol: float = 0.05) -> SelfNeglectReport:
    """Evaluate ``e(x + e(x)) / e(x)`` on the grid.

    Verdict is "bounded" unless the ratio grows polynomially along the upper
    half of the grid (least-squares slope of log ratio against log x above
    ``slope_tol``).
    """
    x = np.asarray(grid, dtype=float)
    ex = np.asarray([float(scale(v)) for v in x])
    ratios = np.asarray([float(scale(v + e)) for v, e in zip(x, ex)]) / ex
    half = x[len(x) // 2:], ratios[len(x) // 2:]
    slope = 0.0
    if len(half[0]) >= 2 and np.ptp(np.log(half[0])) > 0:
        slope = float(np.polyfit(np.log(half[0]), np.log(half[1]), 1)[0])
    return SelfNeglectReport(x, ratios, float(np.max(ratios)), slope, slope <= slope_tol)
