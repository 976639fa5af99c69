"""Aggregation of Monte Carlo tallies, parameter sweeps and curve comparisons."""
from __future__ import annotations

import dataclasses
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import analytic
from .analytic import RatePoint
from .core import Mode, SourceKind, SystemConfig, validate_config
from .engine import TallySummary, run_batch

log = logging.getLogger(__name__)

QBER_THRESHOLD = 0.11
LOW_STATS_EVENTS = 100


@dataclass(frozen=True)
class RateEstimate:
    q_gain: float
    q_se: float
    qber: float | None
    r_corr: float
    r_total: float
    mean_m: float | None
    mean_m_se: float | None
    std_m: float | None
    mean_clock_time: float | None
    std_clock_time: float | None
    flags: tuple[str, ...] = ()


def aggregate(tally: TallySummary, cfg: SystemConfig) -> RateEstimate:
    """Turn raw counts into gain, QBER, rates and clock-time statistics."""
    n = tally.n_trials
    if n < 1:
        raise ValueError("cannot aggregate an empty tally")
    q = tally.n_success / n
    q_se = math.sqrt(q * (1.0 - q) / n)
    flags: list[str] = []

    if cfg.simulation.m_average == "loaded":
        count, s1, s2 = tally.n_loaded, tally.sum_m_loaded, tally.sum_m_sq_loaded
    else:
        count, s1, s2 = tally.n_success, tally.sum_m, tally.sum_m_sq
    if count:
        mean_m = s1 / count
        std_m = math.sqrt(max(s2 / count - mean_m * mean_m, 0.0))
        mean_m_se = std_m / math.sqrt(count)
        t = cfg.t_unit
        mean_clock, std_clock = mean_m * t, std_m * t
    else:
        mean_m = std_m = mean_m_se = mean_clock = std_clock = None

    if tally.n_success == 0:
        flags.append("no_successes")
        return RateEstimate(q, q_se, None, 0.0, 0.0, mean_m, mean_m_se, std_m, mean_clock, std_clock, tuple(flags))

    qber = min(tally.n_error / tally.n_success, 0.5)
    r_corr = analytic.corrected_rate(q, qber, cfg.protocol.ec_efficiency)
    m_rate = 1.0 if cfg.protocol.mode == Mode.SYNC or mean_m is None else mean_m
    r_total = analytic.total_rate(r_corr, cfg.protocol.total_distance, cfg.protocol.signal_speed, m_rate)
    return RateEstimate(q, q_se, qber, r_corr, r_total, mean_m, mean_m_se, std_m, mean_clock, std_clock, tuple(flags))


# -- sweeps --------------------------------------------------------------------

@dataclass(frozen=True)
class SweepGrid:
    distances: Sequence[float]                 # km
    memory_efficiencies: Sequence[float] = (0.5,)
    coherence_times: Sequence[float] = (0.25,)  # ms
    mean_photon_numbers: Sequence[float] = (0.7,)
    modes: Sequence[Mode] = (Mode.SYNC,)
    sources: Sequence[SourceKind] = (SourceKind.SPS,)

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if len(getattr(self, f.name)) == 0:
                raise ValueError(f"sweep grid field {f.name!r} is empty")


@dataclass(frozen=True)
class OutputRow:
    distance_km: float
    mode: str
    source: str
    mu: float | None
    eta_mem: float | None
    tau_coh_ms: float | None
    model: str
    q_gain: float | None = None
    q_se: float | None = None
    qber: float | None = None
    r_corr: float | None = None
    r_total_hz: float | None = None
    mean_m: float | None = None
    std_m: float | None = None
    mean_clock_ms: float | None = None
    std_clock_ms: float | None = None
    n_trials: int | None = None
    n_success: int | None = None
    n_error: int | None = None
    n_truncated: int | None = None
    seed: int | None = None
    flags: str = ""

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]


def _sources(grid: SweepGrid) -> list[tuple[SourceKind, float | None]]:
    out: list[tuple[SourceKind, float | None]] = []
    for kind in grid.sources:
        kind = SourceKind(kind)
        if kind == SourceKind.SPS:
            out.append((kind, None))
        else:
            out.extend((kind, mu) for mu in grid.mean_photon_numbers)
    return list(dict.fromkeys(out))


def operating_point(base: SystemConfig, distance_km: float, mode: Mode, kind: SourceKind,
                    mu: float | None, eta_mem: float | None, tau_ms: float | None) -> SystemConfig:
    changes = {"protocol.distance_km": float(distance_km), "protocol.mode": Mode(mode), "source.kind": kind}
    if mu is not None:
        changes["source.mean_photon_number"] = float(mu)
    if eta_mem is not None:
        changes["memory.efficiency"] = float(eta_mem)
    if tau_ms is not None:
        changes["memory.coherence_time_ms"] = float(tau_ms)
    return validate_config(base.evolve(**changes))


def _finite(x):
    return None if x is None or not math.isfinite(x) else float(x)


def _ms(x):
    return None if x is None else x * 1e3


def _analytic_row(cfg: SystemConfig, model: str, rp: RatePoint, memory: bool = True) -> OutputRow:
    flags = list(rp.flags)
    return OutputRow(
        distance_km=cfg.protocol.distance_km,
        mode=cfg.protocol.mode.value,
        source=cfg.source.kind.value,
        mu=cfg.source.mean_photon_number if cfg.source.kind == SourceKind.WCP else None,
        eta_mem=cfg.memory.efficiency if memory else None,
        tau_coh_ms=cfg.memory.coherence_time_ms if memory else None,
        model=model,
        q_gain=_finite(rp.gain),
        qber=_finite(rp.qber),
        r_corr=_finite(rp.corrected_rate),
        r_total_hz=_finite(rp.total_rate),
        mean_m=_finite(rp.mean_m),
        std_m=_finite(rp.std_m),
        mean_clock_ms=_finite(rp.mean_m * cfg.t_unit * 1e3),
        std_clock_ms=_finite(rp.std_m * cfg.t_unit * 1e3),
        flags=";".join(flags + ([] if memory else ["memory_not_applicable"])),
    )


def mc_row(cfg: SystemConfig, tally: TallySummary, est: RateEstimate, expected_q: float) -> OutputRow:
    flags = list(est.flags)
    if expected_q * tally.n_trials < LOW_STATS_EVENTS:
        flags.append("low_statistics")
    if tally.n_truncated:
        flags.append("truncated")
    return OutputRow(
        distance_km=cfg.protocol.distance_km,
        mode=cfg.protocol.mode.value,
        source=cfg.source.kind.value,
        mu=cfg.source.mean_photon_number if cfg.source.kind == SourceKind.WCP else None,
        eta_mem=cfg.memory.efficiency,
        tau_coh_ms=cfg.memory.coherence_time_ms,
        model="mc",
        q_gain=est.q_gain,
        q_se=est.q_se,
        qber=est.qber,
        r_corr=est.r_corr,
        r_total_hz=est.r_total,
        mean_m=est.mean_m,
        std_m=est.std_m,
        mean_clock_ms=_ms(est.mean_clock_time),
        std_clock_ms=_ms(est.std_clock_time),
        n_trials=tally.n_trials,
        n_success=tally.n_success,
        n_error=tally.n_error,
        n_truncated=tally.n_truncated,
        seed=cfg.simulation.seed,
        flags=";".join(flags),
    )


def _failed_row(distance_km, mode, kind, mu, eta, tau, model, exc: Exception) -> OutputRow:
    msg = str(exc).replace(";", ",").replace("\n", " ")
    return OutputRow(distance_km, Mode(mode).value, kind.value, mu, eta, tau, model, flags=f"error:{msg}")


def model_rows(cfg: SystemConfig, trials: int, workers: int | None = None) -> list[OutputRow]:
    """All model rows (MC first, then analytic, then guide) for one MDI operating point."""
    rows: list[OutputRow] = []
    mode = cfg.protocol.mode
    expected = analytic.sync_rate_point(cfg) if mode == Mode.SYNC else analytic.async_rate_point(cfg)
    if trials > 0:
        run_cfg = cfg.evolve(**{"simulation.trials": int(trials)})
        tally = run_batch(run_cfg, workers=workers)
        rows.append(mc_row(run_cfg, tally, aggregate(tally, run_cfg), expected.gain))
    rows.append(_analytic_row(cfg, "analytic", expected))
    if mode == Mode.ASYNC:
        rows.append(_analytic_row(cfg, "guide", analytic.async_guide_curve(cfg)))
    return rows


def sweep(grid: SweepGrid, base: SystemConfig, trials: int | None = None, include_bb84: bool = True,
          workers: int | None = None) -> list[OutputRow]:
    """Evaluate every grid point with every applicable model.

    Rows come out in grid order: for each distance, each mode, each source,
    each memory setting. BB84 references appear once per (distance, source)
    with memory columns left empty. A failing point yields a row whose
    ``flags`` start with ``error:``; the sweep carries on.
    """
    trials = base.simulation.trials if trials is None else trials
    rows: list[OutputRow] = []
    bb84_done: set = set()
    sources = _sources(grid)
    for L, mode in itertools.product(grid.distances, grid.modes):
        mode = Mode(mode)
        for kind, mu in sources:
            if include_bb84 or mode == Mode.BB84:
                key = (L, kind, mu)
                if key not in bb84_done:
                    bb84_done.add(key)
                    try:
                        cfg = operating_point(base, L, Mode.BB84, kind, mu, None, None)
                        rows.append(_analytic_row(cfg, "bb84", analytic.bb84_reference(cfg), memory=False))
                    except Exception as exc:  # noqa: BLE001 - recorded in-row
                        rows.append(_failed_row(L, Mode.BB84, kind, mu, None, None, "bb84", exc))
            if mode == Mode.BB84:
                continue
            for eta, tau in itertools.product(grid.memory_efficiencies, grid.coherence_times):
                try:
                    cfg = operating_point(base, L, mode, kind, mu, eta, tau)
                    rows.extend(model_rows(cfg, trials, workers))
                except Exception as exc:  # noqa: BLE001 - recorded in-row
                    log.warning("sweep point L=%s mode=%s failed: %s", L, mode.value, exc)
                    rows.append(_failed_row(L, mode, kind, mu, eta, tau, "point", exc))
    return rows


# -- curve analysis ------------------------------------------------------------

Series = tuple[Sequence[float], Sequence[float]]


def _interp_root(x0, x1, d0, d1):
    if d1 == d0:
        return x1
    return x0 + (x1 - x0) * (0.0 - d0) / (d1 - d0)


def find_crossover(series_a: Series, series_b: Series) -> float | None:
    """Smallest distance where rate ``a`` reaches rate ``b`` (and is non-zero).

    Interpolates the crossing linearly in log-rate when both bracketing
    points are positive, linearly otherwise. Returns ``None`` when the
    curves never cross on the grid.
    """
    xa, ya = (np.asarray(v, dtype=float) for v in series_a)
    xb, yb = (np.asarray(v, dtype=float) for v in series_b)
    if xa.shape != xb.shape or not np.array_equal(xa, xb):
        raise ValueError("series must share the same distance grid")
    if xa.size < 2:
        raise ValueError("need at least two grid points")
    ahead = (ya >= yb) & (ya > 0)
    hits = np.flatnonzero(ahead)
    if hits.size == 0:
        return None
    i = int(hits[0])
    if i == 0:
        return float(xa[0])
    a0, a1, b0, b1 = ya[i - 1], ya[i], yb[i - 1], yb[i]
    if min(a0, a1, b0, b1) > 0:
        d0, d1 = math.log(a0) - math.log(b0), math.log(a1) - math.log(b1)
    else:
        d0, d1 = a0 - b0, a1 - b1
    return float(_interp_root(xa[i - 1], xa[i], d0, d1))


def qber_threshold_distance(series: Series, threshold: float = QBER_THRESHOLD) -> float | None:
    """Largest distance with QBER at or below ``threshold`` (linear interpolation).

    Returns ``None`` when the whole series is above the threshold.
    """
    x, q = (np.asarray(v, dtype=float) for v in series)
    if np.any(np.diff(x) <= 0):
        raise ValueError("distances must be strictly increasing")
    ok = np.flatnonzero(q <= threshold)
    if ok.size == 0:
        return None
    i = int(ok[-1])
    if i == x.size - 1:
        return float(x[-1])
    return float(_interp_root(x[i], x[i + 1], q[i] - threshold, q[i + 1] - threshold))


def select(rows: Iterable[OutputRow], **match) -> list[OutputRow]:
    """Rows whose fields equal every ``match`` value (floats compared exactly)."""
    return [r for r in rows if all(getattr(r, k) == v for k, v in match.items())]


def series(rows: Iterable[OutputRow], quantity: str, **match) -> Series:
    chosen = sorted(select(rows, **match), key=lambda r: r.distance_km)
    xs = [r.distance_km for r in chosen]
    ys = [math.nan if getattr(r, quantity) is None else getattr(r, quantity) for r in chosen]
    return xs, ys


# -- named figure grids -------------------------------------------------------

SYNC_DISTANCES = tuple(float(d) for d in range(1, 36))
ASYNC_DISTANCES = tuple(float(d) for d in range(1, 51))
BOTH_SOURCES = (SourceKind.SPS, SourceKind.WCP)
FIGURE_MUS = (0.05, 0.7)


@dataclass(frozen=True)
class FigureSpec:
    name: str
    grid: SweepGrid
    reference: SweepGrid | None = None   # analytic-only synchronous comparison
    quantities: tuple[str, ...] = ("r_total_hz", "qber")
    description: str = ""


FIGURES: dict[str, FigureSpec] = {
    "sync-eff": FigureSpec(
        "sync-eff",
        SweepGrid(SYNC_DISTANCES, (0.1, 0.5, 0.9), (0.25,), FIGURE_MUS, (Mode.SYNC,), BOTH_SOURCES),
        description="synchronous loading, memory efficiency 0.1/0.5/0.9, coherence 0.25 ms",
    ),
    "sync-coh": FigureSpec(
        "sync-coh",
        SweepGrid(SYNC_DISTANCES, (0.5,), (0.5, 0.1, 0.01), FIGURE_MUS, (Mode.SYNC,), BOTH_SOURCES),
        description="synchronous loading, coherence 0.5/0.1/0.01 ms, memory efficiency 0.5",
    ),
    "async-eff": FigureSpec(
        "async-eff",
        SweepGrid(ASYNC_DISTANCES, (0.1, 0.5, 0.9), (0.25,), FIGURE_MUS, (Mode.ASYNC,), BOTH_SOURCES),
        reference=SweepGrid(ASYNC_DISTANCES, (0.1, 0.5, 0.9), (0.25,), FIGURE_MUS, (Mode.SYNC,), BOTH_SOURCES),
        description="asynchronous loading, memory efficiency 0.1/0.5/0.9, coherence 0.25 ms",
    ),
    "async-coh": FigureSpec(
        "async-coh",
        SweepGrid(ASYNC_DISTANCES, (0.5,), (0.5, 0.1, 0.01), FIGURE_MUS, (Mode.ASYNC,), BOTH_SOURCES),
        reference=SweepGrid(ASYNC_DISTANCES, (0.5,), (0.5, 0.1, 0.01), FIGURE_MUS, (Mode.SYNC,), BOTH_SOURCES),
        description="asynchronous loading, coherence 0.5/0.1/0.01 ms, memory efficiency 0.5",
    ),
    "mean-gc": FigureSpec(
        "mean-gc",
        SweepGrid(ASYNC_DISTANCES, (0.5,), (0.01, 0.1, 0.5), (0.7,), (Mode.ASYNC,), (SourceKind.SPS,)),
        quantities=("mean_clock_ms", "std_clock_ms"),
        description="mean and spread of the global clock time at coincidence, single photons",
    ),
}


def run_figure(name: str, base: SystemConfig, trials: int | None = None,
               workers: int | None = None) -> list[OutputRow]:
    try:
        spec = FIGURES[name]
    except KeyError:
        raise KeyError(f"unknown figure {name!r}; choose from {', '.join(FIGURES)}") from None
    rows = sweep(spec.grid, base, trials=trials, workers=workers)
    if spec.reference is not None:
        rows += sweep(spec.reference, base, trials=0, include_bb84=False, workers=workers)
    return rows


def curves(rows: Sequence[OutputRow], quantities: Sequence[str]) -> dict[str, dict]:
    """Group rows into named two-column curves, one per model/parameter combination."""
    groups: dict[tuple, list[OutputRow]] = {}
    for r in rows:
        if r.flags.startswith("error:"):
            continue
        key = (r.model, r.mode, r.source, r.mu, r.eta_mem, r.tau_coh_ms)
        groups.setdefault(key, []).append(r)
    out: dict[str, dict] = {}
    for (model, mode, source, mu, eta, tau), members in groups.items():
        parts = [model, mode, source]
        if mu is not None:
            parts.append(f"mu{mu:g}")
        if eta is not None:
            parts.append(f"eta{eta:g}")
        if tau is not None:
            parts.append(f"tau{tau:g}ms")
        stem = "_".join(parts)
        members = sorted(members, key=lambda r: r.distance_km)
        for qty in quantities:
            out[f"{stem}__{qty}"] = {
                "model": model, "mode": mode, "source": source, "mu": mu,
                "eta_mem": eta, "tau_coh_ms": tau, "quantity": qty,
                "points": [(r.distance_km, getattr(r, qty)) for r in members],
            }
    return out
