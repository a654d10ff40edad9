"""Finite-key decoy-state bounds and the secure-key-rate formula.

The closed-form three-intensity bounds below are the canonical ones built
from symmetrized vacuum-paired counting rates; statistical fluctuations are
absorbed with Chernoff-style brackets.  A truncated linear program over the
photon-number yields serves as the independent soundness oracle for both
bounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.stats import poisson

from .sifting import CountsLedger
from .protocol import SourcePolicy


class ParameterError(ValueError):
    """Invalid analysis parameter combination."""


@dataclass(frozen=True)
class FiniteKeyParams:
    """Failure budgets of the finite-size analysis and the EC inefficiency."""

    eps_cor: float = 1e-10
    eps_pa: float = 1e-10
    eps_hat: float = 1e-10
    eps_pe: float = 1e-10
    f_ec: float = 1.16

    def __post_init__(self):
        for name in ("eps_cor", "eps_pa", "eps_hat", "eps_pe"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ParameterError(f"{name} must lie in (0, 1)")
        if self.f_ec < 1.0:
            raise ParameterError("f_ec must be >= 1")


@dataclass
class FiniteKeyBounds:
    """Inputs of the key-rate formula (bounds or measured values)."""

    n1_after: float               # untagged bits surviving pairing
    e1ph_after: float             # their phase-flip error rate
    n_t: float                    # survived bits
    e_t: float                    # their bit-flip error rate
    n_vy_plus_n_yv: float         # detections feeding the tail correction
    n1_before: float = 0.0
    e1ph_before: float = 0.0

    def __post_init__(self):
        for name in ("e1ph_after", "e_t", "e1ph_before"):
            v = getattr(self, name)
            if not 0.0 <= v <= 0.5:
                raise ParameterError(f"{name} must lie in [0, 0.5]")
        for name in ("n1_after", "n_t", "n_vy_plus_n_yv", "n1_before"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        if self.n1_before and self.n1_after > self.n1_before:
            raise ParameterError("n1_after cannot exceed n1_before")


@dataclass
class KeyRateReport:
    """Key rate per pulse pair and per second, with intermediate terms."""

    r_per_pulse: float
    r_bps: float
    entropy_phase: float
    leak_ec: float
    r_tail: float
    n_total: float
    effective_rate: float
    parallel_channels: int
    n1: float = 0.0
    e1ph: float = 0.0
    flags: list = field(default_factory=list)


@dataclass
class DecoyBound:
    value: float          # the bound itself (Y1 lower or e1ph upper)
    n1_before: float = 0.0
    clamped: bool = False


def shannon_entropy(x: float) -> float:
    """Binary Shannon entropy in bits, continuous at the endpoints."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("entropy argument must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def chernoff_upper(observed: float, eps: float) -> float:
    """Upper bracket on the expectation behind an observed count."""
    if observed < 0:
        raise ValueError("observed count must be >= 0")
    beta = math.log(1.0 / eps)
    return observed + beta + math.sqrt(2.0 * beta * observed + beta * beta)


def chernoff_lower(observed: float, eps: float) -> float:
    """Lower bracket on the expectation behind an observed count."""
    if observed < 0:
        raise ValueError("observed count must be >= 0")
    beta = math.log(1.0 / eps)
    return max(observed - math.sqrt(2.0 * beta * observed), 0.0)


def _bracketed_rate(count: float, sent: float, eps: float | None,
                    upper: bool) -> float:
    if sent <= 0:
        raise ParameterError("decoy analysis needs nonzero sent counts")
    if eps is None:
        return count / sent
    bound = chernoff_upper(count, eps) if upper else chernoff_lower(count, eps)
    return bound / sent


def decoy_untagged_lower(ledger: CountsLedger, policy: SourcePolicy,
                         params: FiniteKeyParams | None = None) -> DecoyBound:
    """Lower-bound the single-photon yield and the untagged-bit count.

    Uses the two-decoy closed form on the symmetrized vacuum-paired rates;
    Chernoff brackets push each rate in its pessimistic direction.  Passing
    ``params=None`` evaluates the asymptotic (fluctuation-free) form.
    """
    mu_x, mu_y = policy.mu_x, policy.mu_y
    if mu_x >= mu_y:
        raise ParameterError("decoy analysis requires mu_x < mu_y")
    for a, b in ((0, 1), (1, 0), (0, 2), (2, 0), (0, 0)):
        if ledger.sent[a, b] <= 0:
            raise ParameterError(f"Sent-{a}{b} must be nonzero")
    eps = params.eps_pe if params is not None else None

    s_x = 0.5 * (_bracketed_rate(ledger.detected[0, 1], ledger.sent[0, 1],
                                 eps, upper=False)
                 + _bracketed_rate(ledger.detected[1, 0], ledger.sent[1, 0],
                                   eps, upper=False))
    s_y = 0.5 * (_bracketed_rate(ledger.detected[0, 2], ledger.sent[0, 2],
                                 eps, upper=True)
                 + _bracketed_rate(ledger.detected[2, 0], ledger.sent[2, 0],
                                   eps, upper=True))
    s_00 = _bracketed_rate(ledger.detected[0, 0], ledger.sent[0, 0],
                           eps, upper=True)

    y1 = (mu_y**2 * math.exp(mu_x) * s_x
          - mu_x**2 * math.exp(mu_y) * s_y
          - (mu_y**2 - mu_x**2) * s_00) / (mu_x * mu_y * (mu_y - mu_x))
    clamped = y1 < 0.0
    y1 = max(y1, 0.0)
    n1 = (2.0 * policy.p_v * policy.p_y * ledger.n_total
          * mu_y * math.exp(-mu_y) * y1)
    return DecoyBound(value=y1, n1_before=n1, clamped=clamped)


def decoy_phase_error_upper(ledger: CountsLedger, policy: SourcePolicy,
                            params: FiniteKeyParams | None,
                            y1_lower: float) -> DecoyBound:
    """Upper-bound the single-photon phase-flip rate from slice statistics."""
    eps = params.eps_pe if params is not None else None
    mu_x = policy.mu_x
    keep_frac = 4.0 * ledger.slice_degrees / 360.0
    errors = ledger.detected_11_slice - ledger.correct_11_slice
    t_delta = _bracketed_rate(errors, ledger.sent[1, 1] * keep_frac,
                              eps, upper=True)
    s_00 = _bracketed_rate(ledger.detected[0, 0], ledger.sent[0, 0],
                           eps, upper=False)
    atten = math.exp(-2.0 * mu_x)
    denom = 2.0 * mu_x * atten * y1_lower
    if denom <= 0.0:
        return DecoyBound(value=0.5, clamped=True)
    e1 = (t_delta - 0.5 * atten * s_00) / denom
    if e1 < 0.0:
        return DecoyBound(value=0.0, clamped=True)
    if e1 > 0.5:
        return DecoyBound(value=0.5, clamped=True)
    return DecoyBound(value=e1)


def r_tail(n_total: float, n_vy_plus_n_yv: float,
           params: FiniteKeyParams) -> float:
    """Per-pulse finite-size cost of correctness, amplification and the
    advanced decoy analysis."""
    if n_vy_plus_n_yv <= 0:
        raise ParameterError("n_vy + n_yv must be > 0")
    return (2.0 * math.log2(2.0 / params.eps_cor)
            + 4.0 * math.log2(1.0 / (math.sqrt(2.0) * params.eps_pa
                                     * params.eps_hat))
            + 2.0 * math.log2(n_vy_plus_n_yv)) / n_total


def key_rate(bounds: FiniteKeyBounds, params: FiniteKeyParams,
             n_total: float, effective_rate: float = 8e8,
             parallel_channels: int = 1) -> KeyRateReport:
    """Secure key rate per sending-out pulse pair, clamped at zero.

    R = (1/N) { n1 [1 - H(e1ph)] - f n_t H(E_t) } - R_tail, with the
    per-second figure scaled by the effective pulse rate and the number of
    parallel wavelength channels.
    """
    entropy = shannon_entropy(bounds.e1ph_after)
    leak = params.f_ec * bounds.n_t * shannon_entropy(bounds.e_t)
    tail = r_tail(n_total, bounds.n_vy_plus_n_yv, params)
    r = (bounds.n1_after * (1.0 - entropy) - leak) / n_total - tail
    flags = []
    if r < 0.0:
        r = 0.0
        flags.append("rate_clamped_to_zero")
    return KeyRateReport(
        r_per_pulse=r,
        r_bps=r * effective_rate * parallel_channels,
        entropy_phase=entropy,
        leak_ec=leak,
        r_tail=tail,
        n_total=n_total,
        effective_rate=effective_rate,
        parallel_channels=parallel_channels,
        n1=bounds.n1_after,
        e1ph=bounds.e1ph_after,
        flags=flags)


# ---------------------------------------------------------------------------
# linear-program oracle over a truncated photon-number space
# ---------------------------------------------------------------------------

def poisson_basis(mus, n_max: int = 10) -> np.ndarray:
    """Poisson weights P_mu(n) for n < n_max plus a lumped tail class."""
    mus = np.asarray(mus, dtype=float)
    ns = np.arange(n_max)
    basis = poisson.pmf(ns[None, :], mus[:, None])
    tail = 1.0 - basis.sum(axis=1)
    return np.hstack([basis, np.clip(tail, 0.0, 1.0)[:, None]])


def lp_yield_bound(s_vac: float, s_x: float, s_y: float, mu_x: float,
                   mu_y: float, n_max: int = 10,
                   maximize: bool = False) -> float:
    """Extremal single-photon yield consistent with the three counting rates.

    Solves min (or max) Y_1 subject to sum_n P_mu(n) Y_n = S_mu for
    mu in {0, mu_x, mu_y} and 0 <= Y_n <= 1 over the truncated space.
    """
    basis = poisson_basis([0.0, mu_x, mu_y], n_max)
    c = np.zeros(n_max + 1)
    c[1] = -1.0 if maximize else 1.0
    res = linprog(c, A_eq=basis, b_eq=[s_vac, s_x, s_y],
                  bounds=[(0.0, 1.0)] * (n_max + 1), method="highs")
    if not res.success:
        raise RuntimeError(f"yield LP failed: {res.message}")
    return float(res.x[1])


def lp_phase_error_upper(t_delta: float, s_vac: float, s_x: float,
                         s_y: float, mu_x: float, mu_y: float,
                         n_max: int = 10) -> float:
    """LP-tight counterpart of the closed-form phase-error upper bound.

    Maximizes the single-photon error-click rate w_1 subject to the slice
    observation (with the vacuum class pinned to half its yield, since
    background clicks land on either detector evenly) and divides by the
    LP-minimal yield.
    """
    basis2x = poisson_basis([2.0 * mu_x], n_max)[0]
    n_var = n_max + 1
    c = np.zeros(n_var)
    c[1] = -1.0
    a_eq = [basis2x, np.eye(n_var)[0]]
    b_eq = [t_delta, 0.5 * s_vac]
    res = linprog(c, A_eq=np.vstack(a_eq), b_eq=b_eq,
                  bounds=[(0.0, 1.0)] * n_var, method="highs")
    if not res.success:
        raise RuntimeError(f"phase-error LP failed: {res.message}")
    w1 = float(res.x[1])
    y1 = lp_yield_bound(s_vac, s_x, s_y, mu_x, mu_y, n_max)
    if y1 <= 0.0:
        return 0.5
    return min(w1 / y1, 0.5)


def bounds_from_ledger(ledger: CountsLedger, policy: SourcePolicy,
                       params: FiniteKeyParams,
                       untagged_survival: float,
                       pairing_nt: float, pairing_et: float
                       ) -> FiniteKeyBounds:
    """Assemble key-rate inputs from a counts ledger and pairing statistics.

    The decoy bounds give the pre-pairing untagged count and phase error;
    the pairing stage contributes its measured survival ratio (untagged
    bits) and the mean-field phase-error doubling.
    """
    from .aopp import phase_error_after_pairing

    yb = decoy_untagged_lower(ledger, policy, params)
    eb = decoy_phase_error_upper(ledger, policy, params, yb.value)
    return FiniteKeyBounds(
        n1_after=yb.n1_before * untagged_survival,
        e1ph_after=min(phase_error_after_pairing(eb.value), 0.5),
        n_t=pairing_nt,
        e_t=pairing_et,
        n_vy_plus_n_yv=ledger.detected[0, 2] + ledger.detected[2, 0],
        n1_before=yb.n1_before,
        e1ph_before=eb.value)
