"""Transmitter state machines: source choice, phase randomization, framing.

Alice and Bob each pick one of three sources per window (send-nothing,
decoy, signal), randomize the quantum-pulse phase over a discrete set, and
pack pulses into fixed frames whose leading slots carry the phase-reference
sequence used downstream for drift estimation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SOURCE_NAMES = ("v", "x", "y")

_PI = math.pi


@dataclass(frozen=True)
class SourcePolicy:
    """Per-party source intensities and selection probabilities."""

    mu_v: float = 0.0
    mu_x: float = 0.05
    mu_y: float = 0.48
    p_v: float = 0.70
    p_x: float = 0.03
    p_y: float = 0.27

    def __post_init__(self):
        if self.mu_v != 0.0:
            raise ValueError("mu_v must be 0")
        if not 0.0 < self.mu_x < self.mu_y:
            raise ValueError("need 0 < mu_x < mu_y")
        probs = (self.p_v, self.p_x, self.p_y)
        if any(p < 0 or p > 1 for p in probs):
            raise ValueError("probabilities must be in [0, 1]")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError("p_v + p_x + p_y must equal 1")

    @property
    def intensities(self) -> np.ndarray:
        return np.array([self.mu_v, self.mu_x, self.mu_y])

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([self.p_v, self.p_x, self.p_y])


@dataclass(frozen=True)
class FrameLayout:
    """Timing of one transmission frame.

    The first ``ref_duration`` of each frame carries the reference sequence
    (one phase per ``ref_phase_hold``); the remainder carries one quantum
    pulse per clock period.
    """

    frame_period: float = 100e-9          # s
    clock: float = 1e9                    # Hz
    pulse_width: float = 200e-12          # s
    ref_duration: float = 20e-9           # s
    ref_phase_hold: float = 5e-9          # s
    quantum_pulses_per_frame: int = 80
    ref_phases_alice: tuple = (0.0, 0.0, _PI, _PI)
    ref_phases_bob: tuple = (0.0, _PI / 2, _PI / 2, 0.0)

    def __post_init__(self):
        if not math.isclose(self.ref_duration
                            + self.quantum_pulses_per_frame / self.clock,
                            self.frame_period, rel_tol=1e-9):
            raise ValueError("ref_duration + quantum pulses must fill the frame")
        n_hold = self.ref_duration / self.ref_phase_hold
        if not math.isclose(n_hold, round(n_hold), rel_tol=1e-9):
            raise ValueError("ref_duration must be a multiple of ref_phase_hold")
        if len(self.ref_phases_alice) != len(self.ref_phases_bob):
            raise ValueError("reference sequences must have equal length")

    @property
    def effective_rate(self) -> float:
        """Quantum pulses per second (Hz)."""
        return self.quantum_pulses_per_frame / self.frame_period

    @property
    def ref_slots(self) -> int:
        """Clock slots occupied by the reference section."""
        return int(round(self.ref_duration * self.clock))

    @property
    def slots_per_frame(self) -> int:
        return int(round(self.frame_period * self.clock))

    def ref_phase_differences(self) -> np.ndarray:
        """Elementwise Alice-minus-Bob reference phases, wrapped to (-pi, pi]."""
        d = np.asarray(self.ref_phases_alice) - np.asarray(self.ref_phases_bob)
        return -((-d + _PI) % (2 * _PI) - _PI)


@dataclass(frozen=True)
class PulseDescriptor:
    window_index: int
    role: str                    # "reference" | "quantum"
    source: str | None           # v | x | y for quantum pulses
    intensity: float
    phase: float

    def __post_init__(self):
        if self.role not in ("reference", "quantum"):
            raise ValueError(f"unknown pulse role {self.role!r}")
        if self.role == "quantum" and self.source not in SOURCE_NAMES:
            raise ValueError(f"unknown source tag {self.source!r}")


def choose_source(policy: SourcePolicy, rng: np.random.Generator) -> str:
    """Draw one source tag according to the policy probabilities."""
    return SOURCE_NAMES[int(rng.choice(3, p=policy.probabilities))]


def choose_sources(policy: SourcePolicy, rng: np.random.Generator,
                   n: int) -> np.ndarray:
    """Vectorized source draw; returns int8 codes 0=v, 1=x, 2=y."""
    return rng.choice(3, size=n, p=policy.probabilities).astype(np.int8)


def random_phase(rng: np.random.Generator, slice_count: int,
                 full_circle: bool = True) -> float:
    """One phase drawn uniformly from the discrete randomization set.

    The set is {k * span / slice_count} with span 2pi, or pi when
    ``full_circle`` is false (the half-circle literal variant).
    """
    if slice_count < 1:
        raise ValueError("slice_count must be >= 1")
    span = 2 * _PI if full_circle else _PI
    return float(rng.integers(0, slice_count)) * span / slice_count


def random_phases(rng: np.random.Generator, slice_count: int, n: int,
                  full_circle: bool = True) -> np.ndarray:
    if slice_count < 1:
        raise ValueError("slice_count must be >= 1")
    span = 2 * _PI if full_circle else _PI
    return rng.integers(0, slice_count, size=n) * (span / slice_count)


def build_frame(policy: SourcePolicy, layout: FrameLayout,
                rng: np.random.Generator, party: str = "alice",
                slice_count: int = 16, full_circle: bool = True,
                start_window: int = 0) -> list[PulseDescriptor]:
    """One frame of pulse descriptors: held reference slots then quantum pulses.

    Vacuum windows still emit a descriptor (intensity 0); the transmitter does
    not distinguish them during state preparation.
    """
    if party == "alice":
        ref_seq = layout.ref_phases_alice
    elif party == "bob":
        ref_seq = layout.ref_phases_bob
    else:
        raise ValueError(f"unknown party {party!r}")

    pulses = []
    hold_slots = int(round(layout.ref_phase_hold * layout.clock))
    for slot in range(layout.ref_slots):
        pulses.append(PulseDescriptor(
            window_index=start_window + slot,
            role="reference",
            source=None,
            intensity=1.0,
            phase=float(ref_seq[slot // hold_slots])))

    sources = choose_sources(policy, rng, layout.quantum_pulses_per_frame)
    phases = random_phases(rng, slice_count, layout.quantum_pulses_per_frame,
                           full_circle)
    mus = policy.intensities
    for k in range(layout.quantum_pulses_per_frame):
        pulses.append(PulseDescriptor(
            window_index=start_window + layout.ref_slots + k,
            role="quantum",
            source=SOURCE_NAMES[sources[k]],
            intensity=float(mus[sources[k]]),
            phase=float(phases[k])))
    return pulses


def stream_frames(policy: SourcePolicy, layout: FrameLayout, party: str,
                  n_frames: int, rng: np.random.Generator,
                  slice_count: int = 16, full_circle: bool = True):
    """Yield successive frames with contiguous window indices."""
    for i in range(n_frames):
        yield build_frame(policy, layout, rng, party, slice_count,
                          full_circle, start_window=i * layout.slots_per_frame)


def dump_pulse_stream(path, frames) -> None:
    """Run-length-encoded pulse-stream dump.

    CSV columns: start_window, run_length, role, source, intensity, phase.
    Consecutive pulses identical in (role, source, intensity, phase) are
    merged into one row.
    """
    with open(path, "w") as f:
        f.write("start_window,run_length,role,source,intensity,phase\n")
        run = None
        for frame in frames:
            for p in frame:
                key = (p.role, p.source, p.intensity, p.phase)
                if run is not None and key == run[1] \
                        and p.window_index == run[0] + run[2]:
                    run = (run[0], run[1], run[2] + 1)
                else:
                    if run is not None:
                        _write_run(f, run)
                    run = (p.window_index, key, 1)
        if run is not None:
            _write_run(f, run)


def _write_run(f, run) -> None:
    start, (role, source, intensity, phase), length = run
    f.write(f"{start},{length},{role},{source or ''},{intensity!r},{phase!r}\n")
