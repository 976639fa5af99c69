"""Configuration schema, validation and unit handling.

Every parameter is stored in the unit carried by its field name (the same
names used in the config file). SI views are exposed as properties, so
``cfg.memory.coherence_time`` is in seconds while
``cfg.memory.coherence_time_ms`` is what the user wrote.
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

SPEED_OF_LIGHT = 2.998e8  # m/s
KM = 1.0e3
MS = 1.0e-3
NM = 1.0e-9
MM = 1.0e-3


class SourceKind(str, enum.Enum):
    SPS = "sps"
    WCP = "wcp"


class Mode(str, enum.Enum):
    SYNC = "sync"
    ASYNC = "async"
    BB84 = "bb84"


class ConfigError(ValueError):
    """Raised when a configuration violates one or more invariants.

    ``problems`` holds one ``(field_path, message)`` pair per violation.
    """

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = list(problems)
        text = "; ".join(f"{path}: {msg}" for path, msg in self.problems)
        super().__init__(text or "invalid configuration")


@dataclass(frozen=True)
class ChannelParams:
    wavelength_nm: float = 780.0
    beam_waist_mm: float = 3.0
    aperture_diameter_m: float = 0.1
    collection_efficiency: float = 0.7
    atm_loss_db_per_km: float = 0.1

    @property
    def wavelength(self) -> float:
        return self.wavelength_nm * NM

    @property
    def beam_waist(self) -> float:
        return self.beam_waist_mm * MM

    @property
    def aperture_diameter(self) -> float:
        return self.aperture_diameter_m


@dataclass(frozen=True)
class MemoryParams:
    efficiency: float = 0.5
    coherence_time_ms: float = 0.25
    error_prob: float = 1e-8

    @property
    def coherence_time(self) -> float:
        return self.coherence_time_ms * MS


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float = 1.0
    dark_count_prob: float = 2.5e-4


@dataclass(frozen=True)
class SourceSpec:
    kind: SourceKind = SourceKind.SPS
    mean_photon_number: float = 0.7


@dataclass(frozen=True)
class ProtocolSpec:
    mode: Mode = Mode.SYNC
    distance_km: float = 10.0
    signal_speed_m_per_s: float = SPEED_OF_LIGHT
    ec_efficiency: float = 1.0

    @property
    def total_distance(self) -> float:
        return self.distance_km * KM

    @property
    def signal_speed(self) -> float:
        return self.signal_speed_m_per_s


@dataclass(frozen=True)
class SimulationControls:
    trials: int = 1_000_000
    seed: int = 0
    max_rounds: int = 10_000
    # "success": clock moments over detected successes; "loaded": over loaded coincidences
    m_average: str = "success"


@dataclass(frozen=True)
class SystemConfig:
    channel: ChannelParams = field(default_factory=ChannelParams)
    memory: MemoryParams = field(default_factory=MemoryParams)
    detector: DetectorParams = field(default_factory=DetectorParams)
    source: SourceSpec = field(default_factory=SourceSpec)
    protocol: ProtocolSpec = field(default_factory=ProtocolSpec)
    simulation: SimulationControls = field(default_factory=SimulationControls)

    @property
    def t_unit(self) -> float:
        """Duration of one global clock unit in seconds."""
        return clock_unit(self.protocol.total_distance, self.protocol.signal_speed)

    def evolve(self, **changes: Any) -> "SystemConfig":
        """Return a copy with dotted-path fields replaced.

        >>> SystemConfig().evolve(**{"memory.efficiency": 0.9}).memory.efficiency
        0.9
        """
        sections: dict[str, dict[str, Any]] = {}
        for key, value in changes.items():
            section, _, name = key.partition(".")
            if not name:
                raise KeyError(f"expected 'section.field', got {key!r}")
            sections.setdefault(section, {})[name] = value
        out = self
        for section, values in sections.items():
            out = dataclasses.replace(out, **{section: dataclasses.replace(getattr(out, section), **values)})
        return out

    def to_dict(self) -> dict[str, dict[str, Any]]:
        out: dict[str, dict[str, Any]] = {}
        for f in dataclasses.fields(self):
            sub = getattr(self, f.name)
            out[f.name] = {
                k: (v.value if isinstance(v, enum.Enum) else v)
                for k, v in dataclasses.asdict(sub).items()
            }
        return out

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; stable across runs and platforms."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_SECTIONS = {
    "channel": ChannelParams,
    "memory": MemoryParams,
    "detector": DetectorParams,
    "source": SourceSpec,
    "protocol": ProtocolSpec,
    "simulation": SimulationControls,
}


def clock_unit(L: float, v: float) -> float:
    """Global clock unit t = L/v: herald over L/2 plus confirmation over L/2."""
    if not (L > 0 and v > 0):
        raise ValueError(f"clock_unit needs L > 0 and v > 0, got L={L!r}, v={v!r}")
    return L / v


def _finite(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate_config(raw: SystemConfig) -> SystemConfig:
    """Check every invariant and return the config with enums coerced.

    Raises :class:`ConfigError` listing each violated field by dotted path.
    """
    problems: list[tuple[str, str]] = []

    def check(path: str, value: Any, ok, msg: str) -> None:
        if not _finite(value):
            problems.append((path, f"must be a finite number, got {value!r}"))
        elif not ok(value):
            problems.append((path, f"{msg}, got {value!r}"))

    def fraction(path: str, value: Any) -> None:
        check(path, value, lambda x: 0.0 <= x <= 1.0, "must lie in [0, 1]")

    def positive(path: str, value: Any) -> None:
        check(path, value, lambda x: x > 0, "must be > 0")

    ch, mem, det, src, proto, sim = (
        raw.channel, raw.memory, raw.detector, raw.source, raw.protocol, raw.simulation,
    )
    positive("channel.wavelength_nm", ch.wavelength_nm)
    positive("channel.beam_waist_mm", ch.beam_waist_mm)
    positive("channel.aperture_diameter_m", ch.aperture_diameter_m)
    fraction("channel.collection_efficiency", ch.collection_efficiency)
    check("channel.atm_loss_db_per_km", ch.atm_loss_db_per_km, lambda x: x >= 0, "must be >= 0")

    fraction("memory.efficiency", mem.efficiency)
    positive("memory.coherence_time_ms", mem.coherence_time_ms)
    fraction("memory.error_prob", mem.error_prob)

    fraction("detector.efficiency", det.efficiency)
    fraction("detector.dark_count_prob", det.dark_count_prob)

    try:
        kind = SourceKind(src.kind)
    except ValueError:
        problems.append(("source.kind", f"must be one of sps, wcp, got {src.kind!r}"))
        kind = None
    if kind is SourceKind.WCP:
        positive("source.mean_photon_number", src.mean_photon_number)

    try:
        mode = Mode(proto.mode)
    except ValueError:
        problems.append(("protocol.mode", f"must be one of sync, async, bb84, got {proto.mode!r}"))
        mode = None
    positive("protocol.distance_km", proto.distance_km)
    positive("protocol.signal_speed_m_per_s", proto.signal_speed_m_per_s)
    check("protocol.ec_efficiency", proto.ec_efficiency, lambda x: x >= 0, "must be >= 0")

    for name, lo in (("trials", 1), ("max_rounds", 1)):
        value = getattr(sim, name)
        if not isinstance(value, int) or isinstance(value, bool) or value < lo:
            problems.append((f"simulation.{name}", f"must be an integer >= {lo}, got {value!r}"))
    if not isinstance(sim.seed, int) or isinstance(sim.seed, bool) or not 0 <= sim.seed < 2**64:
        problems.append(("simulation.seed", f"must be an unsigned 64-bit integer, got {sim.seed!r}"))
    if sim.m_average not in ("success", "loaded"):
        problems.append(("simulation.m_average", f"must be 'success' or 'loaded', got {sim.m_average!r}"))

    if problems:
        raise ConfigError(problems)
    return dataclasses.replace(
        raw,
        source=dataclasses.replace(src, kind=kind),
        protocol=dataclasses.replace(proto, mode=mode),
    )


def config_from_dict(data: Mapping[str, Any] | None) -> SystemConfig:
    """Build and validate a config from a nested mapping (as read from a file)."""
    data = data or {}
    problems: list[tuple[str, str]] = []
    parts: dict[str, Any] = {}
    for key in data:
        if key not in _SECTIONS:
            problems.append((str(key), "unknown section"))
    for section, cls in _SECTIONS.items():
        values = data.get(section) or {}
        if not isinstance(values, Mapping):
            problems.append((section, "must be a mapping"))
            continue
        names = {f.name for f in dataclasses.fields(cls)}
        for key in values:
            if key not in names:
                problems.append((f"{section}.{key}", "unknown field"))
        parts[section] = cls(**{k: v for k, v in values.items() if k in names})
    if problems:
        raise ConfigError(problems)
    return validate_config(SystemConfig(**parts))


def load_config(path: str | Path | None) -> SystemConfig:
    """Read a YAML (or JSON) config file; ``None`` gives the defaults."""
    if path is None:
        return validate_config(SystemConfig())
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([(str(path), f"cannot read config: {exc.strerror}")]) from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([(str(path), f"not valid YAML/JSON: {exc}")]) from exc
    if data is not None and not isinstance(data, Mapping):
        raise ConfigError([(str(path), "top level must be a mapping of sections")])
    return config_from_dict(data)
