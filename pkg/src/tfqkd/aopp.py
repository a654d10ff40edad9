"""Active odd-parity pairing for bit-error rejection on the raw keys.

Bob pairs each of his announced-send bits with a distinct not-send bit; a
pair survives only if Alice's two corresponding bits also have odd parity,
and the first bit of every surviving pair is kept.  The bit-level procedure
here is the ground truth; a closed-form mean-field estimate of its survival
statistics is validated against it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sifting import RawKeyPair


@dataclass
class AoppResult:
    """Outcome of one pairing pass."""

    n_t: int                      # survived bits (one per surviving pair)
    e_t: float                    # bit-flip rate among survived bits
    pairing_record: np.ndarray    # (n_t, 2) kept (zero-bit, one-bit) indices
    n0: int                       # Bob bits equal to 0 before pairing
    n1_bits: int                  # Bob bits equal to 1 before pairing
    n_untagged: int = 0           # surviving pairs built from two untagged bits


@dataclass(frozen=True)
class AoppExpectation:
    """Mean-field prediction of the pairing outcome."""

    n_pairs: float
    pair_survival: float
    n_t: float
    e_t: float
    untagged_fraction: float      # expected untagged pairs / formed pairs
    n_untagged: float


def aopp_pair_and_filter(keys: RawKeyPair,
                         rng: np.random.Generator) -> AoppResult:
    """Random odd-parity pairing with surplus bits discarded.

    Bob's zero bits are matched one-to-one with randomly chosen one bits;
    Bob-side parity is odd by construction, so survival is decided by
    Alice's parity alone.
    """
    if len(keys) == 0:
        raise ValueError("cannot pair an empty key")
    bob = np.asarray(keys.bob_bits, dtype=np.int8)
    alice = np.asarray(keys.alice_bits, dtype=np.int8)
    idx0 = np.flatnonzero(bob == 0)
    idx1 = np.flatnonzero(bob == 1)
    n_pairs = min(len(idx0), len(idx1))
    if n_pairs == 0:
        return AoppResult(n_t=0, e_t=0.0,
                          pairing_record=np.empty((0, 2), dtype=np.int64),
                          n0=len(idx0), n1_bits=len(idx1))

    first = rng.permutation(idx0)[:n_pairs]
    second = rng.permutation(idx1)[:n_pairs]
    survive = alice[first] != alice[second]
    kept0 = first[survive]
    kept1 = second[survive]

    # kept bit is the first of the pair: Bob contributes a 0, so the kept
    # bit is in error exactly when Alice's first bit is 1
    errors = int(np.sum(alice[kept0] == 1))
    n_t = int(survive.sum())

    n_untagged = 0
    if keys.untagged is not None:
        tags = np.asarray(keys.untagged, dtype=bool)
        n_untagged = int(np.sum(tags[kept0] & tags[kept1]))

    return AoppResult(
        n_t=n_t,
        e_t=errors / n_t if n_t else 0.0,
        pairing_record=np.column_stack((kept0, kept1)),
        n0=len(idx0), n1_bits=len(idx1),
        n_untagged=n_untagged)


def aopp_survival_stats(n_vv: float, n_vy: float, n_yv: float, n_yy: float,
                        untagged_prob_vy: float = 0.0,
                        untagged_prob_yv: float = 0.0) -> AoppExpectation:
    """Closed-form expectation of the pairing outcome for a Z composition.

    With the complementary bit convention, Bob's zero bits come from the
    vy (correct) and yy (error) detections and his one bits from yv
    (correct) and vv (error); a pair survives when both constituents are
    correct or both are errors.
    """
    n0 = n_vy + n_yy
    n1 = n_vv + n_yv
    n_pairs = min(n0, n1)
    if n_pairs == 0:
        return AoppExpectation(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    g0 = n_vy / n0
    g1 = n_yv / n1
    survival = g0 * g1 + (1.0 - g0) * (1.0 - g1)
    e_t = (1.0 - g0) * (1.0 - g1) / survival if survival else 0.0
    untagged = g0 * g1 * untagged_prob_vy * untagged_prob_yv
    return AoppExpectation(
        n_pairs=float(n_pairs),
        pair_survival=survival,
        n_t=n_pairs * survival,
        e_t=e_t,
        untagged_fraction=untagged,
        n_untagged=n_pairs * untagged)


def phase_error_after_pairing(e_before: float) -> float:
    """Mean-field phase-flip rate of the kept bits after pairing.

    Pairing XORs two independent phase errors, so the rate doubles to
    first order: e' = 2 e (1 - e).
    """
    if not 0.0 <= e_before <= 1.0:
        raise ValueError("error rate must lie in [0, 1]")
    return 2.0 * e_before * (1.0 - e_before)
