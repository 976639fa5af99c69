"""Free-space transmittance: beam divergence, atmospheric absorption, collection optics.

Path lengths are in metres. The geometric term is the power of a
fundamental-mode Gaussian beam falling inside a circular aperture after
free propagation; pointing error and turbulence are not modelled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ChannelParams, KM


@dataclass(frozen=True)
class ArmTransmittance:
    geometric: float
    atmospheric: float
    collection: float
    total: float


def rayleigh_range(ch: ChannelParams) -> float:
    return math.pi * ch.beam_waist**2 / ch.wavelength


def beam_radius(path_length, ch: ChannelParams):
    """1/e^2 intensity radius w(L) = w0 * sqrt(1 + (L/z_R)^2)."""
    return ch.beam_waist * np.sqrt(1.0 + (np.asarray(path_length, dtype=float) / rayleigh_range(ch)) ** 2)


def _check_length(path_length) -> None:
    if np.any(np.asarray(path_length) < 0):
        raise ValueError("path_length must be >= 0")


def geometric_transmittance(path_length, ch: ChannelParams):
    """Fraction of the beam captured by an aperture of diameter D at distance L.

    Works elementwise on arrays; returns a float for scalar input.
    """
    _check_length(path_length)
    w = beam_radius(path_length, ch)
    a = ch.aperture_diameter / 2.0
    out = -np.expm1(-2.0 * a * a / (w * w))
    return float(out) if np.ndim(out) == 0 else out


def atmospheric_transmittance(path_length, alpha_db_per_km: float):
    _check_length(path_length)
    if alpha_db_per_km < 0:
        raise ValueError("attenuation must be >= 0 dB/km")
    out = 10.0 ** (-alpha_db_per_km * (np.asarray(path_length, dtype=float) / KM) / 10.0)
    return float(out) if np.ndim(out) == 0 else out


def channel_transmittance(path_length: float, ch: ChannelParams) -> ArmTransmittance:
    geo = geometric_transmittance(path_length, ch)
    atm = atmospheric_transmittance(path_length, ch.atm_loss_db_per_km)
    coll = ch.collection_efficiency
    return ArmTransmittance(geometric=geo, atmospheric=atm, collection=coll, total=geo * atm * coll)


def total_transmittance(path_length, ch: ChannelParams):
    """Vectorised shortcut for ``channel_transmittance(...).total``."""
    return (
        geometric_transmittance(path_length, ch)
        * atmospheric_transmittance(path_length, ch.atm_loss_db_per_km)
        * ch.collection_efficiency
    )
