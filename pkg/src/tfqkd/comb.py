"""Phenomenological model of two dissipative-Kerr-soliton microcombs.

Each comb is reduced to two slowly varying state variables, the pump-line
frequency offset and the repetition-rate offset from their references.  Both
are driven by random-walk noise and pulled back by a first-order feedback
loop; everything downstream consumes only the residual statistics of the
difference between the two combs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

# Thermo-optic coefficient dn/dT of the resonator material (1/K).  Recorded
# for documentation; resonance shifts use the measured GHz/K slopes directly.
THERMO_OPTIC_COEFF = 2.45e-5


class SolitonLossError(RuntimeError):
    """Pump detuning stepped outside the soliton existence window."""


@dataclass(frozen=True)
class CombSpec:
    """Static parameters of one microcomb source.

    All frequencies are /2pi values in Hz.
    """

    pump_frequency: float           # Hz
    rep_rate: float                 # Hz, line spacing F_rep
    d2: float                       # Hz, second-order dispersion D2/2pi
    d3: float = 0.0                 # Hz, third-order dispersion D3/2pi
    kappa0: float = 17.0e6          # Hz, intrinsic linewidth (metadata)
    kappa_ex: float = 36.5e6        # Hz, external linewidth (metadata)
    temp_coeff_resonance: float = -3.179e9   # Hz/K, soliton-step center slope
    temp_coeff_rep: float = 21.06e6          # Hz/K, repetition-rate slope
    power_coeff_step: float = -1.95e9        # Hz/W, step-center vs pump power
    power_coeff_rep: float = 8.7e6           # Hz/W, repetition rate vs power
    pump_rep_coupling: float = 1.0 / 166.0   # dF_rep / dnu_pump
    detuning_window: float = 500e6           # Hz, soliton existence window

    def __post_init__(self):
        if self.rep_rate <= 0:
            raise ValueError("rep_rate must be > 0")
        if self.detuning_window <= 0:
            raise ValueError("detuning_window must be > 0")
        if self.d2 <= 0:
            raise ValueError("d2 must be > 0 (anomalous dispersion)")


@dataclass(frozen=True)
class LockLoopConfig:
    """Feedback parameters shared by the pump and repetition-rate loops.

    The free-drift fields are random-walk diffusion amplitudes in Hz/sqrt(s):
    an unlocked offset wanders with std ``drift_std * sqrt(t)``.
    """

    pump_lock_gain: float = 2.0e5       # 1/s
    rep_lock_gain: float = 2.0e5        # 1/s
    pump_free_drift_std: float = 7.0e4  # Hz/sqrt(s)
    rep_free_drift_std: float = 4.9e3   # Hz/sqrt(s)
    update_interval: float = 1.0e-5     # s, feedback period
    beat_target: float = 10.0e6         # Hz, down-converted rep-rate beat

    def __post_init__(self):
        if self.pump_lock_gain < 0 or self.rep_lock_gain < 0:
            raise ValueError("loop gains must be >= 0")
        if self.update_interval <= 0:
            raise ValueError("update_interval must be > 0")


@dataclass(frozen=True)
class LineAlignment:
    line_index: int
    offset_mean: float      # Hz
    offset_std: float       # Hz
    drift_rate_std: float   # rad/ms


@dataclass(frozen=True)
class CombPairAlignment:
    """Residual frequency/phase mismatch statistics per channel pair."""

    lines: tuple[LineAlignment, ...]

    def __post_init__(self):
        for ln in self.lines:
            if ln.offset_std < 0 or ln.drift_rate_std < 0:
                raise ValueError("alignment stds must be >= 0")
        by_abs = sorted(self.lines, key=lambda ln: abs(ln.line_index))
        for lo, hi in zip(by_abs, by_abs[1:]):
            if hi.offset_std + 1e-9 * max(1.0, lo.offset_std) < lo.offset_std:
                raise ValueError("offset_std must be non-decreasing in |n|")

    def line(self, n: int) -> LineAlignment:
        for ln in self.lines:
            if ln.line_index == n:
                return ln
        raise KeyError(f"no alignment entry for line index {n}")


@dataclass
class LockResult:
    """Discretized locking trajectory plus post-transient summary."""

    times: np.ndarray              # s
    pump_offset: np.ndarray        # Hz, comb B minus comb A pump lines
    rep_offset: np.ndarray         # Hz, repetition-rate difference
    dt: float
    pump_offset_std: float = 0.0   # post-transient empirical std
    rep_offset_std: float = 0.0
    pump_offset_mean: float = 0.0
    rep_offset_mean: float = 0.0
    predicted_pump_std: float = 0.0
    predicted_rep_std: float = 0.0
    locked: bool = True
    noise: np.ndarray = field(default=None, repr=False)  # (4, n) raw drives


def line_frequency(spec: CombSpec, n: int) -> float:
    """Optical frequency of comb line ``n`` relative to the pump."""
    return spec.pump_frequency + n * spec.rep_rate


def resonance_frequency(omega0: float, d1: float, d2: float, d3: float,
                        mu: int) -> float:
    """Cold-cavity resonance of mode ``mu`` from the dispersion expansion."""
    return omega0 + d1 * mu + 0.5 * d2 * mu**2 + d3 * mu**3 / 6.0


def thermal_shift(spec: CombSpec, delta_t: float) -> tuple[float, float]:
    """(resonance shift, repetition-rate shift) for a chip temperature step."""
    return (spec.temp_coeff_resonance * delta_t, spec.temp_coeff_rep * delta_t)


def pump_response(spec: CombSpec, delta_pump_freq: float,
                  delta_power: float) -> float:
    """Repetition-rate shift caused by pump frequency and power steps."""
    if abs(delta_pump_freq) > spec.detuning_window:
        raise SolitonLossError(
            f"pump detuning {delta_pump_freq:.3e} Hz exceeds the "
            f"{spec.detuning_window:.3e} Hz soliton existence window")
    return (spec.pump_rep_coupling * delta_pump_freq
            + spec.power_coeff_rep * delta_power)


def _stationary_std(q: float, gain: float, dt: float) -> float:
    """Stationary std of x <- exp(-g dt) x + N(0, q sqrt(dt)), per comb pair."""
    if q == 0.0:
        return 0.0
    if gain == 0.0:
        return float("inf")
    decay = np.exp(-gain * dt)
    return q * np.sqrt(dt) * np.sqrt(2.0 / (1.0 - decay * decay))


def simulate_locking(spec_a: CombSpec, spec_b: CombSpec,
                     loops: LockLoopConfig, duration: float, seed: int,
                     dt: float | None = None,
                     transient_fraction: float = 0.1) -> LockResult:
    """Simulate both feedback loops and return the inter-comb offsets.

    Each comb's pump and repetition-rate offsets follow
    ``x <- exp(-gain*dt) * x + w`` with ``w ~ N(0, drift_std*sqrt(dt))``;
    with zero gain the trajectory is exactly the accumulated noise.  The
    reported offsets are comb B minus comb A, so the statistics carry a
    factor sqrt(2) over the per-comb residuals.
    """
    if duration <= 0:
        raise ValueError("duration must be > 0")
    dt = loops.update_interval if dt is None else float(dt)
    n = max(int(round(duration / dt)), 2)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, 1.0, size=(4, n))  # pumpA, pumpB, repA, repB

    decay_p = float(np.exp(-loops.pump_lock_gain * dt))
    decay_r = float(np.exp(-loops.rep_lock_gain * dt))
    qp = loops.pump_free_drift_std * np.sqrt(dt)
    qr = loops.rep_free_drift_std * np.sqrt(dt)

    pump_a = kernels.ar1_path(noise[0] * qp, decay_p)
    pump_b = kernels.ar1_path(noise[1] * qp, decay_p)
    rep_a = kernels.ar1_path(noise[2] * qr, decay_r)
    rep_b = kernels.ar1_path(noise[3] * qr, decay_r)

    pump = pump_b - pump_a
    rep = rep_b - rep_a
    times = dt * np.arange(1, n + 1)

    start = int(n * transient_fraction)
    result = LockResult(
        times=times, pump_offset=pump, rep_offset=rep, dt=dt,
        pump_offset_std=float(np.std(pump[start:])),
        rep_offset_std=float(np.std(rep[start:])),
        pump_offset_mean=float(np.mean(pump[start:])),
        rep_offset_mean=float(np.mean(rep[start:])),
        predicted_pump_std=_stationary_std(
            loops.pump_free_drift_std, loops.pump_lock_gain, dt),
        predicted_rep_std=_stationary_std(
            loops.rep_free_drift_std, loops.rep_lock_gain, dt),
        locked=loops.pump_lock_gain > 0 and loops.rep_lock_gain > 0,
        noise=noise,
    )
    return result


def alignment_from_lock(lock_summary: LockResult | tuple[float, float],
                        channel_line_indices, floor_rad_per_ms: float = 0.0,
                        offset_means: tuple[float, float] = None,
                        ) -> CombPairAlignment:
    """Map locked pump/rep residuals to per-line offset and drift statistics.

    Pump and repetition-rate residuals are treated as independent, so line
    ``n`` carries ``sqrt(pump_std^2 + n^2 rep_std^2)`` of frequency offset;
    the phase-drift rate is that offset expressed in rad/ms plus a
    channel-independent floor for fiber and detection contributions.
    """
    if isinstance(lock_summary, LockResult):
        pump_std = lock_summary.pump_offset_std
        rep_std = lock_summary.rep_offset_std
        pump_mean = lock_summary.pump_offset_mean
        rep_mean = lock_summary.rep_offset_mean
    else:
        pump_std, rep_std = lock_summary
        pump_mean, rep_mean = offset_means if offset_means else (0.0, 0.0)

    lines = []
    for n in channel_line_indices:
        std = float(np.hypot(pump_std, n * rep_std))
        lines.append(LineAlignment(
            line_index=int(n),
            offset_mean=pump_mean + n * rep_mean,
            offset_std=std,
            drift_rate_std=2.0 * np.pi * std * 1e-3 + floor_rad_per_ms,
        ))
    return CombPairAlignment(lines=tuple(lines))


def dump_lock_trace(result: LockResult, path) -> None:
    """Write the pump-offset trajectory as (time_s, offset_hz) CSV."""
    with open(path, "w") as f:
        f.write("time_s,offset_hz\n")
        for t, x in zip(result.times, result.pump_offset):
            f.write(f"{t!r},{x!r}\n")
