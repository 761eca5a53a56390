"""Declarative scenario description and its dictionary/YAML form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Optional

from ..mac.baseline import CsmaSettings, tuned_csma_params
from ..mac.dsme import DsmeSettings
from ..schedule import DEFAULT_CHANNELS, ConfigError, MacTimingParams, SuperframeConfig
from .topology import TopologySpec
from .traffic import TrafficSpec

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RadioSpec:
    comm_range: float = 50.0
    # None means equal to comm_range
    interference_range: Optional[float] = None


@dataclass(frozen=True)
class MacSpec:
    kind: str = "dsme"
    so: int = 3
    mo: int = 6
    bo: int = 7
    cap_reduction: bool = True
    # CSMA/CA limits; None picks the defaults of the chosen MAC
    min_be: Optional[int] = None
    max_be: Optional[int] = None
    max_backoffs: Optional[int] = None
    max_retries: Optional[int] = None
    expiration_threshold: int = 50
    alpha: float = 0.05
    hysteresis: bool = True
    depreciation_threshold: int = 50
    queue_capacity: int = 30
    lease_msf: Optional[int] = 512
    election_probability: float = 1 / 3
    num_channels: int = 16
    max_drift_ppm: float = 10.0

    def timing(self) -> MacTimingParams:
        base = MacTimingParams() if self.kind == "dsme" else tuned_csma_params()
        over = {k: getattr(self, k) for k in ("min_be", "max_be", "max_backoffs", "max_retries") if getattr(self, k) is not None}
        return dataclasses.replace(base, expiration_threshold=self.expiration_threshold, **over)

    def dsme_settings(self) -> DsmeSettings:
        if not 1 <= self.num_channels <= len(DEFAULT_CHANNELS):
            raise ConfigError("num_channels must lie in 1..16")
        return DsmeSettings(
            config=SuperframeConfig(self.so, self.mo, self.bo, self.cap_reduction),
            params=self.timing(),
            channels=DEFAULT_CHANNELS[: self.num_channels],
            alpha=self.alpha,
            hysteresis=self.hysteresis,
            depreciation_threshold=self.depreciation_threshold,
            queue_capacity=self.queue_capacity,
            lease_msf=self.lease_msf,
            election_probability=self.election_probability,
            max_drift_ppm=self.max_drift_ppm,
        )

    def csma_settings(self) -> CsmaSettings:
        return CsmaSettings(params=self.timing(), queue_capacity=self.queue_capacity)


@dataclass(frozen=True)
class TimingSpec:
    t_setup: float = 300.0
    n_packets: int = 100
    t_cooldown: float = 15.0
    # hard cap on virtual time; None derives one from the other fields
    max_time: Optional[float] = None


@dataclass(frozen=True)
class LinkEvent:
    time: float
    remove_link: tuple


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    topology: TopologySpec = field(default_factory=TopologySpec)
    radio: RadioSpec = field(default_factory=RadioSpec)
    traffic: TrafficSpec = field(default_factory=TrafficSpec)
    routing: str = "gpsr_line"
    mac: MacSpec = field(default_factory=MacSpec)
    timing: TimingSpec = field(default_factory=TimingSpec)
    events: tuple = ()
    seed: int = 0
    # check slot exclusivity every this many multi-superframes (0 disables)
    check_every_msf: int = 0

    def validate(self) -> "Scenario":
        if self.routing not in ("gpsr_line", "static_tree"):
            raise ConfigError(f"unknown routing {self.routing!r}")
        if self.mac.kind not in ("dsme", "csma"):
            raise ConfigError(f"unknown mac {self.mac.kind!r}")
        if self.traffic.kind not in ("poisson", "fixed"):
            raise ConfigError(f"unknown traffic {self.traffic.kind!r}")
        if self.timing.n_packets < 1 or self.timing.t_setup < 0 or self.timing.t_cooldown <= 0:
            raise ConfigError("timing values out of range")
        if self.mac.kind == "dsme":
            self.mac.dsme_settings()
        else:
            self.mac.timing()
        return self


_NESTED = {
    "topology": TopologySpec,
    "radio": RadioSpec,
    "traffic": TrafficSpec,
    "mac": MacSpec,
    "timing": TimingSpec,
}


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def scenario_from_dict(data: dict) -> Scenario:
    data = dict(data)
    version = data.pop("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported scenario version {version}")
    names = {f.name for f in dataclasses.fields(Scenario)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value, key)
        elif key == "events":
            kwargs[key] = tuple(_build(LinkEvent, e, f"events[{i}]") for i, e in enumerate(value or ()))
        else:
            kwargs[key] = value
    try:
        sc = Scenario(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return sc.validate()


def scenario_to_dict(sc: Scenario) -> dict:
    out = dataclasses.asdict(sc)
    out["version"] = SCHEMA_VERSION
    return out


def set_path(sc: Scenario, path: str, value: Any) -> Scenario:
    """Return a copy of ``sc`` with the dotted field ``path`` replaced."""
    head, _, rest = path.partition(".")
    names = {f.name for f in dataclasses.fields(sc)}
    if head not in names:
        raise ConfigError(f"sweep axis {path!r} names no field")
    if rest:
        child = getattr(sc, head)
        if not dataclasses.is_dataclass(child):
            raise ConfigError(f"sweep axis {path!r} names no field")
        return dataclasses.replace(sc, **{head: set_path(child, rest, value)})
    current = getattr(sc, head)
    if dataclasses.is_dataclass(current):
        raise ConfigError(f"sweep axis {path!r} is not a scalar field")
    return dataclasses.replace(sc, **{head: value})
