"""Fiber links and the untrusted measurement node.

Attenuation, first-order interference of phase-randomized coherent pulses,
threshold detectors with dark counts and inter-channel crosstalk, and the
residual phase drift left after compensation.  Counts can be produced three
ways: analytic expectations, binomial sampling of those expectations, or a
window-level Monte Carlo that emits individual detection records.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import i0

from . import kernels
from .protocol import FrameLayout, SourcePolicy
from .sifting import CountsLedger, RecordBatch

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ChannelConfig:
    """Per-wavelength optical losses, detector parameters and noise rates."""

    loss_a_db: float                    # Alice -> node fiber loss (dB)
    loss_b_db: float                    # Bob -> node fiber loss (dB)
    receiver_a_db: float = 2.0          # demux + filter insertion, Alice side
    receiver_b_db: float = 2.0
    det_eff_1: float = 0.821            # detector efficiencies (fraction)
    det_eff_2: float = 0.829
    dark_rate_1: float = 77.5           # Hz
    dark_rate_2: float = 69.8
    crosstalk_rate_1: float = 0.0       # Hz, steady background from other lines
    crosstalk_rate_2: float = 0.0
    detection_window: float = 1e-9      # s, counting gate per pulse slot

    def __post_init__(self):
        if not (0.0 < self.det_eff_1 <= 1.0 and 0.0 < self.det_eff_2 <= 1.0):
            raise ValueError("detector efficiencies must lie in (0, 1]")
        for name in ("dark_rate_1", "dark_rate_2", "crosstalk_rate_1",
                     "crosstalk_rate_2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("loss_a_db", "loss_b_db", "receiver_a_db",
                     "receiver_b_db"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.detection_window <= 0:
            raise ValueError("detection_window must be > 0")

    def noise_click_probs(self) -> tuple[float, float]:
        """Per-slot dark+crosstalk click probability for each detector."""
        return ((self.dark_rate_1 + self.crosstalk_rate_1) * self.detection_window,
                (self.dark_rate_2 + self.crosstalk_rate_2) * self.detection_window)


@dataclass(frozen=True)
class PhaseDriftModel:
    """Residual inter-arm phase evolution after active compensation.

    Between compensation updates the phase performs a Wiener walk at
    ``drift_rate_std`` rad/ms; each update resets the residual to a fresh
    N(0, compensation_residual_std) draw.
    """

    drift_rate_std: float = 4.1                 # rad/ms
    compensation_residual_std: float = 0.12     # rad
    update_interval: float = 2.0e-5             # s

    def __post_init__(self):
        if self.drift_rate_std < 0 or self.compensation_residual_std < 0 \
                or self.update_interval < 0:
            raise ValueError("drift model fields must be >= 0")

    def variance_rate(self) -> float:
        """Wiener variance accumulation rate in rad^2/s."""
        return self.drift_rate_std**2 * 1e3

    def mean_cos_residual(self) -> float:
        """E[cos theta] of the compensated residual, time-averaged.

        theta ~ N(0, sigma0^2 + r^2 t) with t uniform over the update
        interval; the Gaussian characteristic function gives the closed form.
        """
        base = math.exp(-0.5 * self.compensation_residual_std**2)
        half_rate = 0.5 * self.variance_rate() * self.update_interval
        if half_rate < 1e-12:
            return base
        return base * (1.0 - math.exp(-half_rate)) / half_rate


def slot_transmittance(config: ChannelConfig, side: str) -> float:
    """Effective single-side transmittance with detector efficiency folded in.

    Valid for threshold detectors under linear loss; keeps the interference
    model two-parameter.
    """
    if side in ("a", "A", "alice"):
        db = config.loss_a_db + config.receiver_a_db
        eff = config.det_eff_1
    elif side in ("b", "B", "bob"):
        db = config.loss_b_db + config.receiver_b_db
        eff = config.det_eff_2
    else:
        raise ValueError(f"unknown side {side!r}")
    return 10.0 ** (-db / 10.0) * eff


def click_probabilities(mu_a: float, mu_b: float, eta_a: float, eta_b: float,
                        delta_phase: float, config: ChannelConfig
                        ) -> tuple[float, float]:
    """Click probabilities of the two output ports for one window.

    First-order interference of two phase-randomized coherent pulses: the
    port intensities are ``(I_a + I_b)/2 +- sqrt(I_a I_b) cos(delta)`` and
    each threshold detector clicks unless both its Poisson light and its
    dark/crosstalk background stay silent.
    """
    if mu_a < 0 or mu_b < 0:
        raise ValueError("mean photon numbers must be >= 0")
    ia = eta_a * mu_a
    ib = eta_b * mu_b
    half = 0.5 * (ia + ib)
    cross = math.sqrt(ia * ib) * math.cos(delta_phase)
    pn1, pn2 = config.noise_click_probs()
    p1 = 1.0 - (1.0 - pn1) * math.exp(-(half + cross))
    p2 = 1.0 - (1.0 - pn2) * math.exp(-(half - cross))
    return p1, p2


def drift_trajectory(drift: PhaseDriftModel, duration: float,
                     rng: np.random.Generator, dt: float = 1e-4,
                     compensate: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise phase-offset path phi(t) sampled every ``dt`` seconds."""
    if duration <= 0:
        raise ValueError("duration must be > 0")
    n = max(int(round(duration / dt)), 1)
    inc_std = math.sqrt(drift.variance_rate() * dt)
    increments = rng.normal(0.0, 1.0, size=n) * inc_std
    if compensate and drift.update_interval > 0:
        steps = max(int(round(drift.update_interval / dt)), 1)
        n_resets = -(-n // steps)
        resets = rng.normal(0.0, 1.0, size=n_resets) \
            * drift.compensation_residual_std
    else:
        steps = n
        resets = np.zeros(1)
    phi = kernels.piecewise_drift(increments, resets, steps)
    return dt * np.arange(1, n + 1), phi


# ---------------------------------------------------------------------------
# analytic expectations
# ---------------------------------------------------------------------------

def _pair_probabilities(policy_a: SourcePolicy, policy_b: SourcePolicy,
                        joint_sent: np.ndarray | None) -> np.ndarray:
    if joint_sent is None:
        return np.outer(policy_a.probabilities, policy_b.probabilities)
    joint = np.asarray(joint_sent, dtype=float)
    if joint.shape != (3, 3):
        raise ValueError("joint_sent must be a 3x3 matrix")
    if np.any(joint < 0) or abs(joint.sum() - 1.0) > 1e-9:
        raise ValueError("joint_sent must be a probability distribution")
    return joint


def _phase_error_quadrature(int_a: float, int_b: float, pn1: float,
                            pn2: float, drift: PhaseDriftModel,
                            width: float) -> float:
    """Slice-averaged probability that the responding detector is wrong.

    Integrates the wrong-port click fraction over the accepted window of the
    announced phase difference and over the compensated drift residual
    (Gauss-Legendre in the slice and in time, Gauss-Hermite in the phase).
    """
    x_sel, w_sel = np.polynomial.legendre.leggauss(16)
    d_sel = 0.5 * width * (x_sel + 1.0)          # fold symmetric halves
    x_t, w_t = np.polynomial.legendre.leggauss(8)
    t_frac = 0.5 * (x_t + 1.0)
    x_h, w_h = np.polynomial.hermite.hermgauss(12)

    var0 = drift.compensation_residual_std**2
    var_rate = drift.variance_rate() * drift.update_interval
    sigma = np.sqrt(var0 + var_rate * t_frac)    # (t,)

    # theta nodes: (t, h); delta_phys: (sel, t, h)
    theta = np.sqrt(2.0) * sigma[:, None] * x_h[None, :]
    d_phys = d_sel[:, None, None] + theta[None, :, :]
    half = 0.5 * (int_a + int_b)
    cross = math.sqrt(int_a * int_b) * np.cos(d_phys)
    p1 = 1.0 - (1.0 - pn1) * np.exp(-(half + cross))
    p2 = 1.0 - (1.0 - pn2) * np.exp(-(half - cross))
    p12 = p1 * p2
    wrong = p2 - 0.5 * p12          # predicted detector 1 inside the slice
    p_any = p1 + p2 - p12

    w_theta = w_h / math.sqrt(math.pi)
    wrong_avg = np.einsum("i,j,k,ijk->", w_sel, w_t, w_theta, wrong) / 4.0
    any_avg = np.einsum("i,j,k,ijk->", w_sel, w_t, w_theta, p_any) / 4.0
    return float(wrong_avg / any_avg) if any_avg > 0 else 0.0


def expected_ledger(policy_a: SourcePolicy, policy_b: SourcePolicy,
                    layout: FrameLayout, config: ChannelConfig,
                    drift: PhaseDriftModel, slice_count: int,
                    n_windows: float, slice_degrees: float = 10.0,
                    joint_sent: np.ndarray | None = None) -> CountsLedger:
    """Analytic expected counts over source pairs and phase statistics.

    The phase difference used for post-selection is continuous-uniform (the
    drift estimate wanders over the full circle), so the kept decoy-decoy
    fraction is the geometric ``4 Ds / 360``; the interference error inside
    the slice follows the compensated-drift residual.  Expectations are
    additive in ``n_windows``.
    """
    if n_windows < 0:
        raise ValueError("n_windows must be >= 0")
    del layout, slice_count  # framing fixes the rate; counts are per window
    eta_a = slot_transmittance(config, "a")
    eta_b = slot_transmittance(config, "b")
    pn1, pn2 = config.noise_click_probs()
    pairs = _pair_probabilities(policy_a, policy_b, joint_sent)

    sent = n_windows * pairs
    detected = np.zeros((3, 3))
    det1 = det2 = 0.0
    mus_a = policy_a.intensities
    mus_b = policy_b.intensities
    for a in range(3):
        for b in range(3):
            ia = eta_a * mus_a[a]
            ib = eta_b * mus_b[b]
            s = ia + ib
            bess = i0(math.sqrt(ia * ib))  # E[exp(-cross cos d)] over uniform d
            e1 = (1.0 - pn1) * math.exp(-0.5 * s) * bess
            e2 = (1.0 - pn2) * math.exp(-0.5 * s) * bess
            e12 = (1.0 - pn1) * (1.0 - pn2) * math.exp(-s)
            p_any = 1.0 - e12
            p_both = 1.0 - e1 - e2 + e12
            detected[a, b] = sent[a, b] * p_any
            det1 += sent[a, b] * ((1.0 - e1) - 0.5 * p_both)
            det2 += sent[a, b] * ((1.0 - e2) - 0.5 * p_both)

    keep_frac = 4.0 * slice_degrees / 360.0
    slice_det = detected[1, 1] * keep_frac
    e_x = _phase_error_quadrature(eta_a * policy_a.mu_x, eta_b * policy_b.mu_x,
                                  pn1, pn2, drift,
                                  math.radians(slice_degrees))
    ledger = CountsLedger(
        n_total=float(n_windows), sent=sent, detected=detected,
        detected_det1=det1, detected_det2=det2,
        detected_11_slice=slice_det,
        correct_11_slice=slice_det * (1.0 - e_x),
        slice_degrees=slice_degrees)
    return ledger


def largest_remainder_rounding(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer apportionment of ``total`` by the largest-remainder rule."""
    weights = np.asarray(weights, dtype=float)
    raw = weights / weights.sum() * total
    base = np.floor(raw).astype(np.int64)
    short = int(total - base.sum())
    if short:
        order = np.argsort(raw - base)[::-1]
        base[order[:short]] += 1
    return base


def sample_ledger(expected: CountsLedger,
                  rng: np.random.Generator) -> CountsLedger:
    """Draw one integer realization of an expected-counts ledger.

    Sent counts are deterministically rounded to sum to N; each detected
    count is binomial against its sent count; per-detector totals and slice
    counts are drawn hierarchically so the structural invariants hold
    exactly.
    """
    if np.any(expected.detected < 0):
        raise ValueError("expected counts must be >= 0")
    n_total = int(round(expected.n_total))
    sent = largest_remainder_rounding(expected.sent.ravel(),
                                      n_total).reshape(3, 3)
    detected = np.zeros((3, 3), dtype=np.int64)
    for a in range(3):
        for b in range(3):
            if sent[a, b] == 0 or expected.sent[a, b] == 0:
                continue
            p = min(expected.detected[a, b] / expected.sent[a, b], 1.0)
            detected[a, b] = rng.binomial(sent[a, b], p)

    total_det = int(detected.sum())
    exp_det_total = expected.detected_det1 + expected.detected_det2
    p_det1 = expected.detected_det1 / exp_det_total if exp_det_total else 0.5
    det1 = int(rng.binomial(total_det, p_det1))

    p_slice = (expected.detected_11_slice / expected.detected[1, 1]
               if expected.detected[1, 1] else 0.0)
    slice_det = int(rng.binomial(int(detected[1, 1]), min(p_slice, 1.0)))
    p_corr = (expected.correct_11_slice / expected.detected_11_slice
              if expected.detected_11_slice else 0.0)
    correct = int(rng.binomial(slice_det, min(p_corr, 1.0)))

    return CountsLedger(
        n_total=float(n_total), sent=sent.astype(float),
        detected=detected.astype(float),
        detected_det1=float(det1), detected_det2=float(total_det - det1),
        detected_11_slice=float(slice_det), correct_11_slice=float(correct),
        slice_degrees=expected.slice_degrees)


# ---------------------------------------------------------------------------
# window-level Monte Carlo
# ---------------------------------------------------------------------------

def simulate_detection_records(policy_a: SourcePolicy, policy_b: SourcePolicy,
                               config: ChannelConfig, drift: PhaseDriftModel,
                               slice_count: int, n_windows: int, seed: int,
                               layout: FrameLayout | None = None,
                               full_circle: bool = True,
                               joint_sent: np.ndarray | None = None
                               ) -> tuple[RecordBatch, np.ndarray]:
    """Monte-Carlo individual windows; returns retained records + sent tally.

    Suitable for moderate window counts; the desk-scale default pipeline
    uses ``expected_ledger`` + ``sample_ledger`` instead.
    """
    eta_a = slot_transmittance(config, "a")
    eta_b = slot_transmittance(config, "b")
    pn1, pn2 = config.noise_click_probs()
    pairs = _pair_probabilities(policy_a, policy_b, joint_sent)

    layout = layout or FrameLayout()
    window_period = 1.0 / layout.effective_rate
    drift_step = math.sqrt(drift.variance_rate() * window_period)
    steps_per_update = max(int(round(drift.update_interval / window_period)), 1)

    win, a, b, delta, c1, c2, sent = kernels.mc_windows(
        n_windows, pairs.ravel(), eta_a * policy_a.intensities,
        eta_b * policy_b.intensities, pn1, pn2, slice_count,
        TWO_PI if full_circle else math.pi, drift_step, steps_per_update,
        drift.compensation_residual_std, seed)
    return RecordBatch(win, a, b, delta, c1, c2), sent


def untagged_probabilities(policy: SourcePolicy, config: ChannelConfig
                           ) -> tuple[float, float]:
    """P(single-photon emission | detection) for vy and yv windows.

    The y-side pulse is Poisson; a detection with exactly one emitted photon
    marks the window as untagged.
    """
    pn1, pn2 = config.noise_click_probs()
    pn_any = 1.0 - (1.0 - pn1) * (1.0 - pn2)
    out = []
    for side in ("b", "a"):     # vy: Bob sends; yv: Alice sends
        eta = slot_transmittance(config, side)
        mu = policy.mu_y
        p_one = mu * math.exp(-mu) * (1.0 - (1.0 - pn_any) * (1.0 - eta))
        p_det = 1.0 - (1.0 - pn_any) * math.exp(-eta * mu)
        out.append(p_one / p_det if p_det > 0 else 0.0)
    return out[0], out[1]
