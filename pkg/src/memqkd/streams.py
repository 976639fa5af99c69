"""Counter-based random streams keyed by (seed, trial index, draw counter).

Every uniform is a pure function of its three coordinates, so a batch gives
the same numbers whether it runs in one process or is split across many.
The derivation is part of the output contract:

    key(seed, trial)  = mix(mix(seed) + (trial + 1) * G)
    bits(key, c)      = mix(key + (c + 1) * G)
    uniform           = (bits >> 11) * 2**-53

with ``G = 0x9E3779B97F4A7C15`` and ``mix`` the SplitMix64 finaliser, all in
wrapping 64-bit unsigned arithmetic.
"""
from __future__ import annotations

import numpy as np

_G = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_ONE = np.uint64(1)
_SCALE = 2.0**-53

# draw counter layout: ROUND_STRIDE slots per global clock round
ROUND_STRIDE = 8
SLOT_LOAD = (0, 1)
SLOT_SURVIVE = (2, 3)
SLOT_RETRIEVE = (4, 5)
SLOT_BSM = 6
SLOT_ERROR = 7


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def trial_keys(seed: int, trials) -> np.ndarray:
    """Per-trial stream keys for an array of trial indices."""
    t = np.asarray(trials, dtype=np.uint64)
    s = _mix(np.asarray(seed, dtype=np.uint64))
    with np.errstate(over="ignore"):
        return _mix(s + (t + _ONE) * _G)


def uniforms(keys: np.ndarray, counter) -> np.ndarray:
    """Uniform doubles in [0, 1) at draw ``counter`` (scalar or per-key array)."""
    c = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        bits = _mix(keys + (c + _ONE) * _G)
    return (bits >> np.uint64(11)).astype(np.float64) * _SCALE


def counter(round_index, slot: int):
    """Draw counter for ``slot`` in global clock round ``round_index`` (0 = trial level)."""
    return np.asarray(round_index, dtype=np.uint64) * np.uint64(ROUND_STRIDE) + np.uint64(slot)


class TrialStream:
    """The random stream of a single trial, for scalar use and debugging."""

    def __init__(self, seed: int, trial: int):
        self.seed = int(seed)
        self.trial = int(trial)
        self._key = trial_keys(self.seed, [self.trial])

    def uniform(self, round_index: int, slot: int) -> float:
        return float(uniforms(self._key, counter(round_index, slot))[0])

    def __repr__(self) -> str:
        return f"TrialStream(seed={self.seed}, trial={self.trial})"
