"""Closed-form rate model and exact solutions of the asynchronous clock process.

Rates follow the error-corrected form ``R = Q (1 - f h(QBER))`` scaled by the
attempt rate ``v / L`` (divided by the mean number of global clock units for
asynchronous loading). No basis-sifting factor is applied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import total_transmittance
from .core import Mode, SourceKind, SystemConfig

BSM_EFFICIENCY = 0.5


@dataclass(frozen=True)
class RatePoint:
    gain: float
    qber: float
    corrected_rate: float
    total_rate: float
    attempt_rate: float
    mean_m: float = 1.0
    std_m: float = 0.0
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class ChainSolution:
    success_prob: float
    expected_m: float | None
    expected_rounds_variance: float | None

    @property
    def defined(self) -> bool:
        return self.expected_m is not None


# -- scalar building blocks --------------------------------------------------

def binary_entropy(e: float) -> float:
    if not 0.0 <= e <= 1.0:
        raise ValueError(f"binary entropy needs 0 <= e <= 1, got {e!r}")
    if e == 0.0 or e == 1.0:
        return 0.0
    return -e * math.log2(e) - (1.0 - e) * math.log2(1.0 - e)


def memory_error_rate(E: float) -> float:
    """Combined bit-error probability of the two memories, 2E(1-E)."""
    if not 0.0 <= E <= 1.0:
        raise ValueError(f"memory error probability must lie in [0, 1], got {E!r}")
    return 2.0 * E * (1.0 - E)


def qber_from_gain(E: float, Q: float, cap: bool = True) -> float:
    """Memory-induced QBER 2E(1-E)/Q, capped at 0.5 unless ``cap=False``."""
    if not Q > 0:
        raise ValueError("QBER is undefined for zero gain")
    q = memory_error_rate(E) / Q
    return min(q, 0.5) if cap else q


def corrected_rate(Q: float, qber: float, f: float = 1.0) -> float:
    qber = min(qber, 0.5)
    return max(0.0, Q * (1.0 - f * binary_entropy(qber)))


def total_rate(R_corr: float, L: float, v: float, mean_m: float = 1.0) -> float:
    """Bits per second: (v/L)/<m> * R_corr. ``L`` in metres."""
    if mean_m < 1.0:
        raise ValueError(f"mean number of clock units must be >= 1, got {mean_m!r}")
    return (v / L) / mean_m * R_corr


def wcp_load_prob(mu: float, eta_chain: float) -> float:
    if mu < 0 or not 0.0 <= eta_chain <= 1.0:
        raise ValueError("need mu >= 0 and 0 <= eta_chain <= 1")
    return -math.expm1(-mu * eta_chain)


# -- per-configuration quantities -------------------------------------------

def arm_transmittance(cfg: SystemConfig) -> float:
    """Transmittance of one MDI arm (Alice or Bob to the midpoint)."""
    return float(total_transmittance(cfg.protocol.total_distance / 2.0, cfg.channel))


def memory_survival(cfg: SystemConfig) -> float:
    """Probability a stored photon survives one global clock unit."""
    return math.exp(-cfg.t_unit / cfg.memory.coherence_time)


def _require(cfg: SystemConfig, kind: SourceKind | None, mode: Mode | None, op: str) -> None:
    if kind is not None and cfg.source.kind != kind:
        raise ValueError(f"{op} needs a {kind.value} source, got {cfg.source.kind.value}")
    if mode is not None and cfg.protocol.mode != mode:
        raise ValueError(f"{op} needs {mode.value} mode, got {cfg.protocol.mode.value}")


def _sync_arm_factor(cfg: SystemConfig, eta_arm: float) -> float:
    """Probability that one arm delivers a heralded, retrieved, detected photon."""
    x = eta_arm * cfg.detector.efficiency * cfg.memory.efficiency * memory_survival(cfg)
    if cfg.source.kind == SourceKind.SPS:
        return x
    return -math.expm1(-cfg.source.mean_photon_number * x)


def gain_sps_sync(cfg: SystemConfig) -> float:
    _require(cfg, SourceKind.SPS, Mode.SYNC, "gain_sps_sync")
    return BSM_EFFICIENCY * _sync_arm_factor(cfg, arm_transmittance(cfg)) ** 2


def gain_wcp_sync(cfg: SystemConfig) -> float:
    _require(cfg, SourceKind.WCP, Mode.SYNC, "gain_wcp_sync")
    return BSM_EFFICIENCY * _sync_arm_factor(cfg, arm_transmittance(cfg)) ** 2


def sync_gain(cfg: SystemConfig) -> float:
    cfg = cfg.evolve(**{"protocol.mode": Mode.SYNC})
    return gain_sps_sync(cfg) if cfg.source.kind == SourceKind.SPS else gain_wcp_sync(cfg)


def _rate_point(cfg: SystemConfig, gain: float, qber: float | None, mean_m: float = 1.0,
                std_m: float = 0.0, flags: tuple[str, ...] = ()) -> RatePoint:
    L, v = cfg.protocol.total_distance, cfg.protocol.signal_speed
    if qber is None:
        r_corr = 0.0
        qber = math.nan
        flags = flags + ("qber_undefined",)
    else:
        r_corr = corrected_rate(gain, qber, cfg.protocol.ec_efficiency)
    return RatePoint(
        gain=gain,
        qber=qber,
        corrected_rate=r_corr,
        total_rate=total_rate(r_corr, L, v, mean_m),
        attempt_rate=v / L,
        mean_m=mean_m,
        std_m=std_m,
        flags=flags,
    )


def _memory_qber(cfg: SystemConfig, gain: float) -> float | None:
    return qber_from_gain(cfg.memory.error_prob, gain, cap=False) if gain > 0 else None


def sync_rate_point(cfg: SystemConfig) -> RatePoint:
    """Synchronous-loading prediction; the reported QBER is the uncapped ratio."""
    Q = sync_gain(cfg)
    return _rate_point(cfg, Q, _memory_qber(cfg, Q))


def bb84_reference(cfg: SystemConfig) -> RatePoint:
    """Direct point-to-point BB84 over the full distance with detector dark counts."""
    _require(cfg, None, Mode.BB84, "bb84_reference")
    eta = float(total_transmittance(cfg.protocol.total_distance, cfg.channel)) * cfg.detector.efficiency
    if cfg.source.kind == SourceKind.SPS:
        Q = eta
    else:
        Q = -math.expm1(-cfg.source.mean_photon_number * eta)
    pd = cfg.detector.dark_count_prob
    qber = pd / (Q + pd) if Q + pd > 0 else None
    return _rate_point(cfg, Q, qber)


def async_guide_curve(cfg: SystemConfig) -> RatePoint:
    """Synchronous-form gain with the channel applied once over half the path.

    Each arm sees sqrt(eta_t(L/2)) instead of eta_t(L/2), so the product over
    both arms carries a single eta_t(L/2). A visual guide, not a prediction.
    """
    _require(cfg, None, Mode.ASYNC, "async_guide_curve")
    arm = _sync_arm_factor(cfg, math.sqrt(arm_transmittance(cfg)))
    Q = BSM_EFFICIENCY * arm**2
    return _rate_point(cfg, Q, _memory_qber(cfg, Q), flags=("guide",))


# -- asynchronous clock process ----------------------------------------------

def async_chain_solution(p_load: float, survive: float) -> ChainSolution:
    """Exact absorption statistics of the two-memory waiting chain.

    Round 1 loads each memory with probability ``p_load``. From the one-held
    state every later round succeeds with ``s p``, stays with
    ``s (1-p) + (1-s) p`` and fails with ``(1-s)(1-p)``. ``m`` is the round
    at which both memories hold a photon.
    """
    p, s = float(p_load), float(survive)
    if not (0.0 <= p <= 1.0 and 0.0 <= s <= 1.0):
        raise ValueError("p_load and survive must lie in [0, 1]")
    instant = p * p
    one_held = 2.0 * p * (1.0 - p)
    step_success = s * p
    stay = s * (1.0 - p) + (1.0 - s) * p
    if one_held > 0 and step_success > 0:
        leave = 1.0 - stay
        delayed = one_held * step_success / leave
        m1_del = 1.0 + 1.0 / leave
        m2_del = 1.0 + 2.0 / leave + (1.0 + stay) / leave**2
    else:
        delayed = m1_del = m2_del = 0.0
    total = instant + delayed
    if total <= 0:
        return ChainSolution(0.0, None, None)
    mean = (instant + delayed * m1_del) / total
    second = (instant + delayed * m2_del) / total
    return ChainSolution(total, mean, max(second - mean * mean, 0.0))


@dataclass(frozen=True)
class AsyncPrediction:
    """Exact expectations of the asynchronous engine for one operating point."""

    loaded_prob: float
    gain: float
    mean_m: float | None
    var_m: float | None
    mean_m_loaded: float | None
    var_m_loaded: float | None
    extra: dict = field(default_factory=dict)


def load_distribution(kind: SourceKind, load_mean: float, max_photons: int | None = None) -> np.ndarray:
    """Photon-number distribution of one arm's memory after a load attempt.

    ``load_mean`` is the Bernoulli probability for SPS and the Poisson mean
    for WCP. The WCP tail beyond ``max_photons`` is folded into the last bin.
    """
    if kind == SourceKind.SPS:
        return np.array([1.0 - load_mean, load_mean])
    if max_photons is None:
        max_photons = max(2, int(math.ceil(load_mean + 12.0 * math.sqrt(load_mean) + 12)))
    pmf = np.zeros(max_photons + 1)
    if load_mean <= 0:
        pmf[0] = 1.0
        return pmf
    for k in range(max_photons + 1):
        pmf[k] = math.exp(-load_mean + k * math.log(load_mean) - math.lgamma(k + 1))
    pmf[-1] += max(0.0, 1.0 - pmf.sum())
    return pmf


def _binomial_matrix(K: int, s: float) -> np.ndarray:
    """B[k, j] = P(j of k photons survive)."""
    B = np.zeros((K + 1, K + 1))
    for k in range(K + 1):
        for j in range(k + 1):
            B[k, j] = math.comb(k, j) * s**j * (1.0 - s) ** (k - j)
    return B


def async_photon_chain(kind: SourceKind, load_mean: float, survive: float, detect: float) -> AsyncPrediction:
    """Solve the waiting process with photon-number bookkeeping.

    The held arm's photons decay independently each round (binomial
    thinning); the empty arm reloads. After both memories hold photons one
    confirm round of decay precedes detection (``detect`` per photon) and a
    50% Bell-state measurement. For SPS this reduces to
    :func:`async_chain_solution` times the retrieval factor.
    """
    pi0 = load_distribution(kind, load_mean)
    K = len(pi0) - 1
    B = _binomial_matrix(K, survive)
    n = np.arange(K + 1)
    confirm = 1.0 - (1.0 - survive * detect) ** n        # per-arm retrieval success
    p_empty = pi0[0]
    C = float(pi0[1:] @ confirm[1:])                      # fresh arm: loaded and retrieved

    instant_loaded = (1.0 - p_empty) ** 2
    instant_det = BSM_EFFICIENCY * C * C
    v1 = 2.0 * p_empty * pi0[1:]                          # one-held state after round 1

    Bs = B[1:, :]                                         # from held count k >= 1
    T = Bs[:, 1:] * p_empty + np.outer(Bs[:, 0], pi0[1:])
    r_loaded = (1.0 - Bs[:, 0]) * (1.0 - p_empty)
    r_det = BSM_EFFICIENCY * (Bs[:, 1:] @ confirm[1:]) * C

    A = np.eye(K) - T

    def moments(r: np.ndarray, p0: float):
        if not np.any(r > 0) or v1.sum() == 0:
            delayed, s1, s2 = 0.0, 0.0, 0.0
        else:
            x1 = np.linalg.solve(A, r)
            x2 = np.linalg.solve(A, x1)
            x3 = np.linalg.solve(A, x2)
            delayed = float(v1 @ x1)
            s1 = float(v1 @ x2)
            s2 = float(v1 @ (x3 + T @ x3))
        total = float(p0 + delayed)
        if total <= 0:
            return total, None, None
        mean = (p0 + delayed + s1) / total
        second = (p0 + delayed + 2.0 * s1 + s2) / total
        return total, float(mean), max(float(second - mean * mean), 0.0)

    loaded, m_l, var_l = moments(r_loaded, instant_loaded)
    gain, m_d, var_d = moments(r_det, instant_det)
    return AsyncPrediction(loaded, gain, m_d, var_d, m_l, var_l)


def arm_load_mean(cfg: SystemConfig) -> float:
    """Bernoulli probability (SPS) or Poisson mean (WCP) of photons loaded per attempt."""
    x = arm_transmittance(cfg) * cfg.memory.efficiency
    if cfg.source.kind == SourceKind.SPS:
        return x
    return cfg.source.mean_photon_number * x


def async_prediction(cfg: SystemConfig) -> AsyncPrediction:
    return async_photon_chain(cfg.source.kind, arm_load_mean(cfg), memory_survival(cfg), cfg.detector.efficiency)


def async_rate_point(cfg: SystemConfig) -> RatePoint:
    """Exact expectation of the asynchronous engine, rate scaled by 1/<m>."""
    pred = async_prediction(cfg)
    if cfg.simulation.m_average == "loaded":
        mean_m, var_m = pred.mean_m_loaded, pred.var_m_loaded
    else:
        mean_m, var_m = pred.mean_m, pred.var_m
    if mean_m is None:
        return _rate_point(cfg, 0.0, None, flags=("no_successes",))
    return _rate_point(cfg, pred.gain, _memory_qber(cfg, pred.gain), mean_m=mean_m, std_m=math.sqrt(var_m))


def expected_gain(cfg: SystemConfig) -> float:
    """Model gain for whatever mode ``cfg`` is in."""
    if cfg.protocol.mode == Mode.SYNC:
        return sync_gain(cfg)
    if cfg.protocol.mode == Mode.ASYNC:
        return async_prediction(cfg).gain
    return bb84_reference(cfg).gain
