"""Rare-event Monte Carlo: crude estimation, crude conditioning on exceedance
and a single-big-jump importance sampler.

Work is split into fixed-size blocks.  Block ``k`` draws from a Philox
stream keyed by ``(seed, stream, k)``, so results depend only on the seed and
never on how blocks are spread over worker processes.
"""
from __future__ import annotations

import logging
import math
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .exceed import JumpHazard, RecordBatch, StopRule, big_jump_paths, mixture_paths, simulate_paths
from .models import ProcessModel

__all__ = [
    "RunConfig",
    "EstimatorResult",
    "ConditionalSample",
    "block_rng",
    "replicate",
    "estimate_ruin_prob",
    "conditional_sample_crude",
    "big_jump_sampler",
    "index_weights",
    "summarize_sample",
]

log = logging.getLogger(__name__)

CRUDE_BLOCK = 1 << 14
BIG_JUMP_BLOCK = 1 << 12
SAMPLERS = ("crude", "bigjump")
PROPOSALS = ("auto", "hazard", "index")


@dataclass(frozen=True)
class RunConfig:
    n_paths: int = 100_000
    seed: int = 0
    stop: StopRule = field(default_factory=StopRule)
    sampler: str = "crude"
    workers: int = 1
    stream: int = 0
    proposal: str = "auto"

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        if self.proposal not in PROPOSALS:
            raise ValueError(f"proposal must be one of {PROPOSALS}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class EstimatorResult:
    x: float
    p_hat: float
    stderr: float
    ci95: tuple
    n_hits: int
    n_inconclusive: int
    n_paths: int
    asymptote: float
    ratio: float
    ess: float
    sampler: str
    missed_mass_bound: float

    def to_dict(self) -> dict:
        return {"x": self.x, "p_hat": self.p_hat, "stderr": self.stderr, "ci95": list(self.ci95),
                "asymptote": self.asymptote, "ratio": self.ratio, "n_hits": self.n_hits, "ess": self.ess,
                "n_paths": self.n_paths, "n_inconclusive": self.n_inconclusive,
                "sampler": self.sampler, "missed_mass_bound": self.missed_mass_bound}


@dataclass
class ConditionalSample:
    """Hit records (weighted for the big-jump sampler) plus bookkeeping."""

    records: RecordBatch
    n_paths: int
    n_inconclusive: int
    exhausted: bool
    sum_w: float = math.nan
    sum_w2: float = math.nan

    @property
    def ess(self) -> float:
        return self.records.ess


def block_rng(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, ((stream & 0xFFFFFF) << 40) | block], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _call(job, block):
    return job(block)


def replicate(job: Callable[[int], object], n_blocks: int, workers: int = 1, start: int = 0) -> list:
    """Evaluate ``job(block)`` for blocks ``start .. start+n_blocks-1``, in block order."""
    blocks = range(start, start + n_blocks)
    if workers <= 1 or n_blocks <= 1:
        return [job(b) for b in blocks]
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(partial(_call, job), blocks))


def _block_sizes(n_paths: int, block: int) -> list[int]:
    full, rest = divmod(n_paths, block)
    return [block] * full + ([rest] if rest else [])


# ---------------------------------------------------------------------------
# crude


def _crude_job(model, x, rule, seed, stream, sizes, full_stats, b):
    rng = block_rng(seed, b, stream)
    return simulate_paths(model, x, rule, rng, sizes[b], full_stats=full_stats)


def _summarize(model, x, cfg, p, se, n_hits, n_inc, n, ess) -> EstimatorResult:
    asym = float(model.asymptote(x))
    lo, hi = max(0.0, p - 1.96 * se), min(1.0, p + 1.96 * se)
    return EstimatorResult(
        x=float(x), p_hat=float(p), stderr=float(se), ci95=(lo, hi), n_hits=int(n_hits),
        n_inconclusive=int(n_inc), n_paths=int(n), asymptote=asym, ratio=float(p / asym) if asym > 0 else math.nan,
        ess=float(ess), sampler=cfg.sampler, missed_mass_bound=cfg.stop.missed_mass_bound(model, x))


def estimate_ruin_prob(model: ProcessModel, x: float, cfg: RunConfig) -> EstimatorResult:
    """Estimate P(M > x) with the sampler named in ``cfg``."""
    if cfg.sampler == "bigjump":
        cs = big_jump_sampler(model, x, cfg, target_hits=None)
        n = cs.n_paths
        p = cs.sum_w / n
        var = max(cs.sum_w2 / n - p * p, 0.0)
        return _summarize(model, x, cfg, p, math.sqrt(var / n), len(cs.records), cs.n_inconclusive, n, cs.ess)
    asym = float(model.asymptote(x))
    if asym < 1e-6:
        log.warning("crude estimation at x=%g where the asymptote is %.2e", x, asym)
    sizes = _block_sizes(cfg.n_paths, CRUDE_BLOCK)
    job = partial(_crude_job, model, x, cfg.stop, cfg.seed, cfg.stream, sizes, False)
    parts = replicate(job, len(sizes), cfg.workers)
    hits = sum(int(p.hit.sum()) for p in parts)
    inc = sum(int(p.inconclusive.sum()) for p in parts)
    n = cfg.n_paths - inc
    if n == 0:
        raise RuntimeError("every path was inconclusive; raise max_cycles")
    p = hits / n
    se = math.sqrt(p * (1.0 - p) / n)
    return _summarize(model, x, cfg, p, se, hits, inc, n, hits)


def _collect(job, n_blocks_max, workers, target, count):
    """Run blocks in waves until ``count`` over the blocks reaches ``target``.

    Only the shortest prefix of blocks reaching the target is kept, which
    makes the output independent of the wave size.
    """
    parts = []
    total = 0
    wave = max(workers, 1) * 2
    b = 0
    while b < n_blocks_max:
        k = min(wave, n_blocks_max - b)
        for res in replicate(job, k, workers, start=b):
            parts.append(res)
            total += count(res)
            if target is not None and total >= target:
                return parts, False
        b += k
    return parts, target is not None


def conditional_sample_crude(model: ProcessModel, x: float, cfg: RunConfig, target_hits: int) -> ConditionalSample:
    """Crude paths until ``target_hits`` hits are collected (``cfg.n_paths`` is the budget)."""
    if target_hits <= 0:
        return ConditionalSample(RecordBatch.empty(), 0, 0, False)
    sizes = _block_sizes(cfg.n_paths, CRUDE_BLOCK)
    job = partial(_crude_job, model, x, cfg.stop, cfg.seed, cfg.stream, sizes, True)
    parts, exhausted = _collect(job, len(sizes), cfg.workers, target_hits, lambda r: int(r.hit.sum()))
    if exhausted:
        log.warning("crude budget exhausted at x=%g before %d hits", x, target_hits)
    allrec = RecordBatch.concat(parts)
    hits = allrec.select(allrec.hit)
    return ConditionalSample(hits, len(allrec), int(allrec.inconclusive.sum()), exhausted)


# ---------------------------------------------------------------------------
# single big jump


def index_weights(model: ProcessModel, x: float, rule: StopRule) -> np.ndarray:
    """Normalized proposal weights over cycle indices ``n = 1..H``,
    proportional to the stationary ``P(xi > x + n a)``."""
    a = model.params.a
    H = int(min(math.ceil(2.0 * (1.0 + rule.s) * x / a) + 50, rule.cap(x, a)))
    n = np.arange(1, H + 1)
    w = np.asarray(model.tail_proxy(x + n * a), dtype=float)
    if not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ValueError("degenerate big-jump proposal: all index weights vanish")
    return w / w.sum()


def _bj_job(model, x, rule, seed, stream, sizes, w, b):
    rng = block_rng(seed, b, stream)
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    n_idx = np.searchsorted(cdf, rng.random(sizes[b]), side="right") + 1
    n_idx = np.minimum(n_idx, len(w))
    rec, acc = big_jump_paths(model, x, rule, rng, n_idx, np.log(w[n_idx - 1]))
    return _bj_pack(rec, acc, sizes[b])


def _bj_pack(rec, acc, size):
    lw = rec.log_w[acc]
    return (rec.select(acc), size, int(np.sum(rec.inconclusive)),
            float(logsumexp(lw)) if lw.size else -math.inf,
            float(logsumexp(2 * lw)) if lw.size else -math.inf)


def _mix_job(model, x, rule, seed, stream, sizes, hazard, b):
    rng = block_rng(seed, b, stream)
    rec = mixture_paths(model, x, rule, rng, sizes[b], hazard)
    return _bj_pack(rec, rec.hit, sizes[b])


def big_jump_sampler(model: ProcessModel, x: float, cfg: RunConfig, target_hits: int | None) -> ConditionalSample:
    """Weighted hit records from single-big-jump proposals.

    ``cfg.proposal == "auto"`` picks ``"hazard"`` for unit-step walks and
    ``"index"`` otherwise.  With ``"hazard"`` every cycle is, with
    probability :class:`JumpHazard` ``(x - Z)``, drawn with its heavy
    component forced past the remaining distance; the weight is the exact
    likelihood ratio against this per-cycle mixture, so paths reaching ``x``
    through several moderate jumps keep a valid, bounded weight.

    With ``cfg.proposal == "index"``: draw the big-jump cycle index ``n`` from :func:`index_weights`,
    run ``n - 1`` ordinary cycles, then draw cycle ``n`` with its heavy
    component forced past the remaining distance to ``x``.  A proposal is
    kept only if its first within-cycle exceedance happens at cycle ``n``;
    its weight is the likelihood ratio of the forced cycle divided by the
    index probability.  ``cfg.n_paths`` caps the number of proposals.
    """
    if target_hits is not None and target_hits <= 0:
        return ConditionalSample(RecordBatch.empty(), 0, 0, False, 0.0, 0.0)
    sizes = _block_sizes(cfg.n_paths, BIG_JUMP_BLOCK)
    proposal = cfg.proposal
    if proposal == "auto":
        proposal = "hazard" if model.unit_cycles else "index"
    if proposal == "hazard":
        hz = JumpHazard(model, x, cfg.stop.s)
        job = partial(_mix_job, model, x, cfg.stop, cfg.seed, cfg.stream, sizes, hz)
    else:
        w = index_weights(model, x, cfg.stop)
        job = partial(_bj_job, model, x, cfg.stop, cfg.seed, cfg.stream, sizes, w)
    parts, exhausted = _collect(job, len(sizes), cfg.workers, target_hits, lambda r: len(r[0]))
    recs = RecordBatch.concat(p[0] for p in parts)
    n = sum(p[1] for p in parts)
    inc = sum(p[2] for p in parts)
    sw = float(np.exp(logsumexp([p[3] for p in parts])))
    sw2 = float(np.exp(logsumexp([p[4] for p in parts])))
    if exhausted and target_hits is not None:
        log.warning("big-jump budget exhausted at x=%g before %d hits", x, target_hits)
    return ConditionalSample(recs, n, inc, exhausted, sw, sw2)


def summarize_sample(model: ProcessModel, x: float, cfg: RunConfig, cs: ConditionalSample) -> EstimatorResult:
    """Probability estimate from the bookkeeping of a conditional sample."""
    if cs.n_paths == 0:
        raise ValueError("empty conditional sample")
    if cfg.sampler == "bigjump":
        n = cs.n_paths
        p = cs.sum_w / n
        se = math.sqrt(max(cs.sum_w2 / n - p * p, 0.0) / n)
        return _summarize(model, x, cfg, p, se, len(cs.records), cs.n_inconclusive, n, cs.ess)
    n = cs.n_paths - cs.n_inconclusive
    if n <= 0:
        raise RuntimeError("every path was inconclusive; raise max_cycles")
    hits = len(cs.records)
    p = hits / n
    return _summarize(model, x, cfg, p, math.sqrt(p * (1.0 - p) / n), hits, cs.n_inconclusive, n, hits)
