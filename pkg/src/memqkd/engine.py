"""Global/local clock Monte Carlo engine.

A trial starts with both parties sending a pulse to their memory at the
central node. In synchronous mode the trial fails unless both memories load
in that round. In asynchronous mode a trial holding exactly one photon keeps
going: each round the held memory decays (its local clock advances), the
empty side resends, and the global clock advances by one unit. The trial
ends when both memories hold a photon (a coincidence at round ``m``) or both
are empty. A coincidence is followed by one confirm round of decay, photon
retrieval/detection and a 50% Bell-state measurement.

Trials run in lockstep as numpy arrays; all randomness comes from
:mod:`memqkd.streams`, so results do not depend on chunking or worker count.
"""
from __future__ import annotations

import logging
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import streams
from .analytic import BSM_EFFICIENCY, arm_load_mean, memory_error_rate, memory_survival
from .core import Mode, SourceKind, SourceSpec, SystemConfig

log = logging.getLogger(__name__)

WORKERS_ENV = "MEMQKD_WORKERS"
CHUNK = 1 << 18


@dataclass(frozen=True)
class EngineModel:
    """Per-round probabilities the engine samples from.

    ``load_mean`` is a Bernoulli probability for SPS and a Poisson mean for
    WCP. ``survive`` is the per-photon survival over one global clock unit.
    """

    kind: SourceKind
    load_mean: float
    survive: float
    detect: float = 1.0
    error_prob: float = 0.0
    bsm: float = BSM_EFFICIENCY


def engine_model(cfg: SystemConfig) -> EngineModel:
    return EngineModel(
        kind=cfg.source.kind,
        load_mean=arm_load_mean(cfg),
        survive=memory_survival(cfg),
        detect=cfg.detector.efficiency,
        error_prob=memory_error_rate(cfg.memory.error_prob),
    )


def hook_model(p_load: float, survive: float, detect: float = 1.0, error_prob: float = 0.0) -> EngineModel:
    """Test hook: drive the engine with a forced load probability and survival."""
    return EngineModel(SourceKind.SPS, p_load, survive, detect, error_prob)


@dataclass(frozen=True)
class ArmState:
    photons_held: int = 0
    local_clock: int = 0


@dataclass(frozen=True)
class TrialOutcome:
    loaded_coincidence: bool
    m_units: int
    detected_success: bool
    error_event: bool
    rounds_used: int
    truncated: bool


@dataclass(frozen=True)
class TallySummary:
    n_trials: int = 0
    n_loaded: int = 0
    n_success: int = 0
    n_error: int = 0
    sum_m: int = 0
    sum_m_sq: int = 0
    n_truncated: int = 0
    sum_m_loaded: int = 0
    sum_m_sq_loaded: int = 0
    m_hist: dict = field(default_factory=dict)  # m -> count over detected successes

    def __add__(self, other: "TallySummary") -> "TallySummary":
        hist = Counter(self.m_hist)
        hist.update(other.m_hist)
        return TallySummary(
            n_trials=self.n_trials + other.n_trials,
            n_loaded=self.n_loaded + other.n_loaded,
            n_success=self.n_success + other.n_success,
            n_error=self.n_error + other.n_error,
            sum_m=self.sum_m + other.sum_m,
            sum_m_sq=self.sum_m_sq + other.sum_m_sq,
            n_truncated=self.n_truncated + other.n_truncated,
            sum_m_loaded=self.sum_m_loaded + other.sum_m_loaded,
            sum_m_sq_loaded=self.sum_m_sq_loaded + other.sum_m_sq_loaded,
            m_hist=dict(sorted(hist.items())),
        )


# -- uniform-driven samplers ---------------------------------------------------

def poisson_from_uniform(lam: float, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF Poisson draws, one per uniform."""
    u = np.asarray(u, dtype=float)
    n = np.zeros(u.shape, dtype=np.int64)
    if lam <= 0:
        return n
    kmax = int(lam + 20.0 * math.sqrt(lam) + 30)
    pk = math.exp(-lam)
    cdf = pk
    active = u >= cdf
    k = 0
    while k < kmax and active.any():
        k += 1
        pk *= lam / k
        cdf += pk
        n += active
        active &= u >= cdf
    return n


def binomial_from_uniform(n: np.ndarray, p: float, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF Binomial(n, p) draws with per-element ``n``."""
    n = np.asarray(n, dtype=np.int64)
    if p >= 1.0:
        return n.copy()
    if p <= 0.0:
        return np.zeros_like(n)
    u = np.asarray(u, dtype=float)
    ratio = p / (1.0 - p)
    pmf = (1.0 - p) ** n.astype(float)
    cdf = pmf.copy()
    out = np.zeros_like(n)
    active = (u >= cdf) & (n > 0)
    j = 0
    while active.any():
        pmf = pmf * (n - j) / (j + 1) * ratio
        j += 1
        cdf = cdf + pmf
        out += active
        active &= (u >= cdf) & (out < n)
    return out


def _load(model: EngineModel, u: np.ndarray) -> np.ndarray:
    if model.kind == SourceKind.SPS:
        return (u < model.load_mean).astype(np.int64)
    return poisson_from_uniform(model.load_mean, u)


def sample_arm_load(source: SourceSpec, arm_eta: float, eta_mem: float, rng: np.random.Generator, size=None):
    """Photons loaded into one memory: Bernoulli for SPS, Poisson-thinned for WCP."""
    x = arm_eta * eta_mem
    u = rng.random(size)
    if SourceKind(source.kind) == SourceKind.SPS:
        out = np.asarray(u < x, dtype=np.int64)
    else:
        out = poisson_from_uniform(source.mean_photon_number * x, np.atleast_1d(u)).reshape(np.shape(u))
    return int(out) if size is None else out


def sample_round_survival(state: ArmState, t_unit: float, tau_coh: float, rng: np.random.Generator) -> ArmState:
    """Advance one memory by one global clock unit of exponential decay."""
    if state.photons_held == 0:
        return ArmState()
    s = math.exp(-t_unit / tau_coh) if math.isfinite(tau_coh) else 1.0
    left = int(binomial_from_uniform(np.array([state.photons_held]), s, np.array([rng.random()]))[0])
    if left == 0:
        return ArmState()
    return ArmState(left, state.local_clock + 1)


# -- the lockstep kernel -------------------------------------------------------

def _retrieve_prob(n: np.ndarray, q: float) -> np.ndarray:
    """P(at least one of n photons survives the confirm round and is detected)."""
    if q >= 1.0:
        return (n > 0).astype(float)
    return -np.expm1(n * math.log1p(-q))


def _simulate(model: EngineModel, seed: int, idx: np.ndarray, async_mode: bool, max_rounds: int) -> dict:
    keys = streams.trial_keys(seed, idx)
    N = len(idx)
    U = streams.uniforms
    C = streams.counter

    nA = _load(model, U(keys, C(1, streams.SLOT_LOAD[0])))
    nB = _load(model, U(keys, C(1, streams.SLOT_LOAD[1])))
    loaded = (nA > 0) & (nB > 0)
    m = loaded.astype(np.int64)
    rounds = np.ones(N, dtype=np.int64)
    truncated = np.zeros(N, dtype=bool)

    if async_mode:
        active = np.flatnonzero((nA > 0) ^ (nB > 0))
        held_a = nA[active] > 0
        held = np.where(held_a, nA[active], nB[active])
        r = 1
        while active.size and r < max_rounds:
            r += 1
            k = keys[active]
            u_surv = U(k, C(r, np.where(held_a, streams.SLOT_SURVIVE[0], streams.SLOT_SURVIVE[1])))
            u_load = U(k, C(r, np.where(held_a, streams.SLOT_LOAD[1], streams.SLOT_LOAD[0])))
            kept = binomial_from_uniform(held, model.survive, u_surv)
            fresh = _load(model, u_load)
            done = (kept > 0) & (fresh > 0)
            dead = (kept == 0) & (fresh == 0)
            if done.any():
                hit = active[done]
                loaded[hit] = True
                m[hit] = r
                nA[hit] = np.where(held_a[done], kept[done], fresh[done])
                nB[hit] = np.where(held_a[done], fresh[done], kept[done])
            rounds[active[done | dead]] = r
            go = ~(done | dead)
            swap = go & (kept == 0)
            held_a = np.where(swap, ~held_a, held_a)[go]
            held = np.where(kept > 0, kept, fresh)[go]
            active = active[go]
        if active.size:
            truncated[active] = True
            rounds[active] = r

    success = np.zeros(N, dtype=bool)
    hit = np.flatnonzero(loaded)
    if hit.size:
        k = keys[hit]
        rc = m[hit] + 1
        q = model.survive * model.detect
        ret_a = U(k, C(rc, streams.SLOT_RETRIEVE[0])) < _retrieve_prob(nA[hit], q)
        ret_b = U(k, C(rc, streams.SLOT_RETRIEVE[1])) < _retrieve_prob(nB[hit], q)
        bsm = U(k, C(rc, streams.SLOT_BSM)) < model.bsm
        success[hit] = ret_a & ret_b & bsm
    error = U(keys, C(0, streams.SLOT_ERROR)) < model.error_prob
    return dict(loaded=loaded, m=m, success=success, error=error, rounds=rounds, truncated=truncated)


def _tally(res: dict) -> TallySummary:
    ms = res["m"][res["success"]]
    ml = res["m"][res["loaded"]]
    values, counts = np.unique(ms, return_counts=True)
    return TallySummary(
        n_trials=int(res["m"].size),
        n_loaded=int(res["loaded"].sum()),
        n_success=int(res["success"].sum()),
        n_error=int(res["error"].sum()),
        sum_m=int(ms.sum()),
        sum_m_sq=int((ms * ms).sum()),
        n_truncated=int(res["truncated"].sum()),
        sum_m_loaded=int(ml.sum()),
        sum_m_sq_loaded=int((ml * ml).sum()),
        m_hist={int(v): int(c) for v, c in zip(values, counts)},
    )


def _run_chunk(args) -> TallySummary:
    model, seed, start, stop, async_mode, max_rounds = args
    idx = np.arange(start, stop, dtype=np.uint64)
    return _tally(_simulate(model, seed, idx, async_mode, max_rounds))


def _outcome(res: dict) -> TrialOutcome:
    return TrialOutcome(
        loaded_coincidence=bool(res["loaded"][0]),
        m_units=int(res["m"][0]),
        detected_success=bool(res["success"][0]),
        error_event=bool(res["error"][0]),
        rounds_used=int(res["rounds"][0]),
        truncated=bool(res["truncated"][0]),
    )


def run_trial_sync(cfg: SystemConfig, rng: streams.TrialStream) -> TrialOutcome:
    if cfg.protocol.mode != Mode.SYNC:
        raise ValueError("run_trial_sync needs sync mode")
    idx = np.array([rng.trial], dtype=np.uint64)
    return _outcome(_simulate(engine_model(cfg), rng.seed, idx, False, cfg.simulation.max_rounds))


def run_trial_async(cfg: SystemConfig, rng: streams.TrialStream) -> TrialOutcome:
    if cfg.protocol.mode != Mode.ASYNC:
        raise ValueError("run_trial_async needs async mode")
    idx = np.array([rng.trial], dtype=np.uint64)
    return _outcome(_simulate(engine_model(cfg), rng.seed, idx, True, cfg.simulation.max_rounds))


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def run_batch(cfg: SystemConfig, workers: int | None = None, model: EngineModel | None = None,
              chunk: int = CHUNK) -> TallySummary:
    """Run ``cfg.simulation.trials`` trials and return the merged tallies.

    Trial ``i`` always uses stream ``(seed, i)``; chunks are merged with
    integer sums, so the result is identical for any ``workers``.
    """
    if cfg.protocol.mode == Mode.BB84:
        raise ValueError("the Monte Carlo engine covers sync and async modes only")
    model = model or engine_model(cfg)
    sim = cfg.simulation
    async_mode = cfg.protocol.mode == Mode.ASYNC
    jobs = [
        (model, sim.seed, lo, min(lo + chunk, sim.trials), async_mode, sim.max_rounds)
        for lo in range(0, sim.trials, chunk)
    ]
    workers = default_workers() if workers is None else max(1, workers)
    if workers == 1 or len(jobs) == 1:
        parts = map(_run_chunk, jobs)
        total = sum(parts, TallySummary())
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            total = sum(pool.map(_run_chunk, jobs), TallySummary())
    if total.n_truncated:
        log.warning("%d of %d trials hit max_rounds=%d and were counted as failures",
                    total.n_truncated, total.n_trials, sim.max_rounds)
    return total


def with_trials(cfg: SystemConfig, trials: int, seed: int | None = None) -> SystemConfig:
    sim = replace(cfg.simulation, trials=trials, seed=cfg.simulation.seed if seed is None else seed)
    return replace(cfg, simulation=sim)
