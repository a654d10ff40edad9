"""Experiment configuration: YAML schema, validation, bundled defaults.

All physical constants live in the configuration file, none in code; the
bundled ``paper_defaults.yaml`` reproduces the reference experiment
(16 channels, 201 km, desk-scale window count).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from ..channel import ChannelConfig, PhaseDriftModel
from ..comb import CombSpec, LockLoopConfig
from ..analysis import FiniteKeyParams
from ..protocol import FrameLayout, SourcePolicy


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending field."""


@dataclass(frozen=True)
class ChannelEntry:
    label: str
    line_index: int
    wavelength_nm: float
    channel: ChannelConfig


@dataclass(frozen=True)
class DriftSettings:
    compensation_residual_std_rad: float = 0.12
    update_interval_s: float = 2.0e-5
    floor_rad_per_ms: float = 1.0
    drift_rate_std_rad_per_ms: float | None = None  # None: derive from lock


@dataclass(frozen=True)
class DistanceSweep:
    alpha_db_per_km: float = 0.1633
    min_km: float = 50.0
    max_km: float = 450.0
    step_km: float = 25.0


@dataclass
class ExperimentConfig:
    seed: int
    n_windows: float
    source_alice: SourcePolicy
    source_bob: SourcePolicy
    layout: FrameLayout
    comb_alice: CombSpec
    comb_bob: CombSpec
    lock: LockLoopConfig
    drift: DriftSettings
    finite_key: FiniteKeyParams
    channels: list[ChannelEntry]
    joint_sent: np.ndarray | None = None
    slice_degrees: float = 10.0
    phase_slices: int = 16
    full_circle: bool = True
    lock_sim_duration_s: float = 2.0
    distance_sweep: DistanceSweep = field(default_factory=DistanceSweep)

    def __post_init__(self):
        labels = [c.label for c in self.channels]
        if len(set(labels)) != len(labels):
            raise ConfigError("channels: labels must be unique")
        if not 0 < self.slice_degrees <= 90:
            raise ConfigError("slice_degrees: must lie in (0, 90]")
        if self.phase_slices < 1:
            raise ConfigError("phase_slices: must be >= 1")
        if self.n_windows < 0:
            raise ConfigError("n_windows: must be >= 0")
        if self.joint_sent is not None:
            j = np.asarray(self.joint_sent, dtype=float)
            if j.shape != (3, 3) or np.any(j < 0) or abs(j.sum() - 1) > 1e-9:
                raise ConfigError("source.joint_sent: must be a 3x3 "
                                  "probability matrix summing to 1")
            marg_a = j.sum(axis=1)
            marg_b = j.sum(axis=0)
            if not (np.allclose(marg_a, self.source_alice.probabilities, atol=1e-6)
                    and np.allclose(marg_b, self.source_bob.probabilities,
                                    atol=1e-6)):
                raise ConfigError("source.joint_sent: marginals must match "
                                  "the per-party probabilities")
            self.joint_sent = j


def _build(cls, section: dict, where: str, rename: dict | None = None):
    rename = rename or {}
    kwargs = {}
    for key, value in section.items():
        kwargs[rename.get(key, key)] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


_COMB_RENAME = {
    "pump_frequency_hz": "pump_frequency",
    "rep_rate_hz": "rep_rate",
    "d2_hz": "d2",
    "d3_hz": "d3",
    "kappa0_hz": "kappa0",
    "kappa_ex_hz": "kappa_ex",
    "temp_coeff_resonance_hz_per_k": "temp_coeff_resonance",
    "temp_coeff_rep_hz_per_k": "temp_coeff_rep",
    "power_coeff_step_hz_per_w": "power_coeff_step",
    "power_coeff_rep_hz_per_w": "power_coeff_rep",
    "detuning_window_hz": "detuning_window",
}

_LOCK_RENAME = {
    "pump_free_drift_std_hz_rt_s": "pump_free_drift_std",
    "rep_free_drift_std_hz_rt_s": "rep_free_drift_std",
    "update_interval_s": "update_interval",
    "beat_target_hz": "beat_target",
}

_FRAME_RENAME = {
    "frame_period_s": "frame_period",
    "clock_hz": "clock",
    "pulse_width_s": "pulse_width",
    "ref_duration_s": "ref_duration",
    "ref_phase_hold_s": "ref_phase_hold",
}

_CHANNEL_RENAME = {
    "dark_rate_1_hz": "dark_rate_1",
    "dark_rate_2_hz": "dark_rate_2",
    "crosstalk_rate_1_hz": "crosstalk_rate_1",
    "crosstalk_rate_2_hz": "crosstalk_rate_2",
    "detection_window_s": "detection_window",
}


def _require(raw: dict, key: str, where: str = ""):
    if key not in raw:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"{prefix}{key}: required section missing")
    return raw[key]


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a mapping")

    source = _require(raw, "source")
    alice = _build(SourcePolicy, _require(source, "alice", "source"),
                   "source.alice")
    bob = _build(SourcePolicy, _require(source, "bob", "source"), "source.bob")
    joint = source.get("joint_sent")

    layout_raw = dict(_require(raw, "frame"))
    for key in ("ref_phases_alice", "ref_phases_bob"):
        if key in layout_raw:
            layout_raw[key] = tuple(float(v) for v in layout_raw[key])
    layout = _build(FrameLayout, layout_raw, "frame", _FRAME_RENAME)

    combs = _require(raw, "combs")
    comb_a = _build(CombSpec, _require(combs, "alice", "combs"),
                    "combs.alice", _COMB_RENAME)
    comb_b = _build(CombSpec, _require(combs, "bob", "combs"),
                    "combs.bob", _COMB_RENAME)

    lock_raw = dict(_require(raw, "lock"))
    lock_duration = float(lock_raw.pop("sim_duration_s", 2.0))
    lock = _build(LockLoopConfig, lock_raw, "lock", _LOCK_RENAME)

    drift = _build(DriftSettings, _require(raw, "drift"), "drift")
    fk = _build(FiniteKeyParams, _require(raw, "finite_key"), "finite_key")

    channels = []
    for i, entry in enumerate(_require(raw, "channels")):
        where = f"channels[{i}]"
        entry = dict(entry)
        try:
            label = str(entry.pop("label"))
            line_index = int(entry.pop("line_index"))
            wavelength = float(entry.pop("wavelength_nm"))
        except KeyError as exc:
            raise ConfigError(f"{where}: missing field {exc}") from None
        channels.append(ChannelEntry(
            label=label, line_index=line_index, wavelength_nm=wavelength,
            channel=_build(ChannelConfig, entry, where, _CHANNEL_RENAME)))

    sweep_raw = raw.get("distance_sweep", {})
    sweep = _build(DistanceSweep, sweep_raw, "distance_sweep")

    try:
        return ExperimentConfig(
            seed=int(raw.get("seed", 0)),
            n_windows=float(_require(raw, "n_windows")),
            source_alice=alice,
            source_bob=bob,
            layout=layout,
            comb_alice=comb_a,
            comb_bob=comb_b,
            lock=lock,
            drift=drift,
            finite_key=fk,
            channels=channels,
            joint_sent=joint,
            slice_degrees=float(raw.get("slice_degrees", 10.0)),
            phase_slices=int(raw.get("phase_slices", 16)),
            full_circle=bool(raw.get("full_circle", True)),
            lock_sim_duration_s=lock_duration,
            distance_sweep=sweep)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    """Parse and validate a YAML experiment configuration."""
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if raw is None:
        raise ConfigError(f"{path}: empty configuration")
    return config_from_dict(raw)


def data_path(name: str) -> Path:
    """Path of a bundled data file."""
    return Path(resources.files("tfqkd").joinpath("data", name))


def default_config() -> ExperimentConfig:
    """The bundled reference configuration."""
    return load_config(data_path("paper_defaults.yaml"))
