"""Detection bookkeeping: counts ledger, phase-slice post-selection, raw keys.

The ledger rows follow the interchange naming used by the bundled result
tables ("Sent-00" ... "Correct-11-Ds"), with source codes 0/1/2 for the
send-nothing, decoy and signal choices of each party.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

SENT_ROWS = [f"Sent-{a}{b}" for a in range(3) for b in range(3)]
DETECTED_ROWS = [f"Detected-{a}{b}" for a in range(3) for b in range(3)]
LEDGER_ROWS = (["N_total"] + SENT_ROWS + ["Detected-Det1", "Detected-Det2"]
               + DETECTED_ROWS + ["Detected-11-Ds", "Correct-11-Ds", "Ds"])


class LedgerError(ValueError):
    """A counts ledger violates one of its structural invariants."""


class RecordError(ValueError):
    """A detection record carries an unknown source tag."""


@dataclass
class RecordBatch:
    """Columnar batch of retained detection events."""

    window: np.ndarray    # int64
    source_a: np.ndarray  # int8 codes 0/1/2
    source_b: np.ndarray
    delta: np.ndarray     # float64, compensated phase difference in [0, 2pi)
    click1: np.ndarray    # bool
    click2: np.ndarray

    def __post_init__(self):
        n = len(self.window)
        for name in ("source_a", "source_b", "delta", "click1", "click2"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has mismatched length")

    def __len__(self) -> int:
        return len(self.window)

    @classmethod
    def from_tuples(cls, rows) -> "RecordBatch":
        """Build a batch from (window, a, b, delta, click1, click2) tuples."""
        if not rows:
            return cls(*(np.empty(0, dtype=d) for d in
                         (np.int64, np.int8, np.int8, np.float64, bool, bool)))
        cols = list(zip(*rows))
        return cls(np.asarray(cols[0], dtype=np.int64),
                   np.asarray(cols[1], dtype=np.int8),
                   np.asarray(cols[2], dtype=np.int8),
                   np.asarray(cols[3], dtype=np.float64),
                   np.asarray(cols[4], dtype=bool),
                   np.asarray(cols[5], dtype=bool))


@dataclass
class CountsLedger:
    """Sent/detected tallies per source pair plus phase-slice statistics.

    Expected-value ledgers hold real-valued counts; sampled and ingested
    ledgers hold integers.  Addition is componentwise so per-channel shards
    can be merged.
    """

    n_total: float
    sent: np.ndarray                 # (3, 3)
    detected: np.ndarray             # (3, 3)
    detected_det1: float = 0.0
    detected_det2: float = 0.0
    detected_11_slice: float = 0.0
    correct_11_slice: float = 0.0
    slice_degrees: float = 10.0

    def __post_init__(self):
        self.sent = np.asarray(self.sent, dtype=float)
        self.detected = np.asarray(self.detected, dtype=float)
        if self.sent.shape != (3, 3) or self.detected.shape != (3, 3):
            raise LedgerError("sent/detected must be 3x3 per-source-pair counts")

    def validate(self, integer: bool = False) -> None:
        tol = 0.0 if integer else 1e-6 * max(1.0, self.n_total)
        if abs(self.sent.sum() - self.n_total) > tol:
            raise LedgerError(
                f"sent counts sum to {self.sent.sum()}, not N_total={self.n_total}")
        if np.any(self.detected > self.sent + 1e-9):
            a, b = np.argwhere(self.detected > self.sent + 1e-9)[0]
            raise LedgerError(f"Detected-{a}{b} exceeds Sent-{a}{b}")
        if np.any(self.detected < 0) or np.any(self.sent < 0):
            raise LedgerError("negative counts")
        if self.detected_11_slice > self.detected[1, 1] + 1e-9:
            raise LedgerError("Detected-11-Ds exceeds Detected-11")
        if self.correct_11_slice > self.detected_11_slice + 1e-9:
            raise LedgerError("Correct-11-Ds exceeds Detected-11-Ds")
        if not 0 < self.slice_degrees <= 90:
            raise LedgerError("Ds must lie in (0, 90] degrees")

    def __add__(self, other: "CountsLedger") -> "CountsLedger":
        if self.slice_degrees != other.slice_degrees:
            raise LedgerError("cannot merge ledgers with different Ds")
        return CountsLedger(
            n_total=self.n_total + other.n_total,
            sent=self.sent + other.sent,
            detected=self.detected + other.detected,
            detected_det1=self.detected_det1 + other.detected_det1,
            detected_det2=self.detected_det2 + other.detected_det2,
            detected_11_slice=self.detected_11_slice + other.detected_11_slice,
            correct_11_slice=self.correct_11_slice + other.correct_11_slice,
            slice_degrees=self.slice_degrees)

    # -- interchange -------------------------------------------------------

    def to_rows(self) -> dict:
        rows = {"N_total": self.n_total}
        for a in range(3):
            for b in range(3):
                rows[f"Sent-{a}{b}"] = self.sent[a, b]
                rows[f"Detected-{a}{b}"] = self.detected[a, b]
        rows["Detected-Det1"] = self.detected_det1
        rows["Detected-Det2"] = self.detected_det2
        rows["Detected-11-Ds"] = self.detected_11_slice
        rows["Correct-11-Ds"] = self.correct_11_slice
        rows["Ds"] = self.slice_degrees
        return rows

    @classmethod
    def from_rows(cls, rows: dict) -> "CountsLedger":
        missing = [r for r in LEDGER_ROWS if r not in rows]
        if missing:
            raise LedgerError(f"ledger rows missing: {', '.join(missing)}")
        sent = np.array([[rows[f"Sent-{a}{b}"] for b in range(3)]
                         for a in range(3)], dtype=float)
        det = np.array([[rows[f"Detected-{a}{b}"] for b in range(3)]
                        for a in range(3)], dtype=float)
        return cls(n_total=rows["N_total"], sent=sent, detected=det,
                   detected_det1=rows["Detected-Det1"],
                   detected_det2=rows["Detected-Det2"],
                   detected_11_slice=rows["Detected-11-Ds"],
                   correct_11_slice=rows["Correct-11-Ds"],
                   slice_degrees=rows["Ds"])

    # -- derived quantities --------------------------------------------------

    def z_error_rate(self) -> float:
        """Bit-flip error fraction of the send/not-send windows."""
        num = self.detected[0, 0] + self.detected[2, 2]
        den = (self.detected[0, 0] + self.detected[0, 2]
               + self.detected[2, 0] + self.detected[2, 2])
        return num / den if den else 0.0

    def x_slice_error_rate(self) -> float:
        if self.detected_11_slice == 0:
            return 0.0
        return 1.0 - self.correct_11_slice / self.detected_11_slice

    def rate(self, a: int, b: int) -> float:
        return self.detected[a, b] / self.sent[a, b] if self.sent[a, b] else 0.0


@dataclass
class RawKeyPair:
    """Aligned raw key bits from the send/not-send windows.

    Bit convention: Alice's bit is 1 iff she sent; Bob's bit is 0 iff he
    sent.  The agreement events are then the one-side-sent detections, and
    both-sent / neither-sent detections appear as bit errors.
    """

    alice_bits: np.ndarray
    bob_bits: np.ndarray
    windows: np.ndarray
    untagged: np.ndarray = None   # single-photon emission marks per window

    def __post_init__(self):
        if len(self.alice_bits) != len(self.bob_bits) \
                or len(self.alice_bits) != len(self.windows):
            raise ValueError("key columns must have equal length")

    def __len__(self) -> int:
        return len(self.alice_bits)

    def error_rate(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.mean(self.alice_bits != self.bob_bits))


def responding_detector(click1: np.ndarray, click2: np.ndarray,
                        rng: np.random.Generator) -> np.ndarray:
    """Resolve each record to one detector; double clicks go to a fair coin."""
    resp = np.where(click2 & ~click1, 1, 0).astype(np.int8)
    double = click1 & click2
    n_double = int(double.sum())
    if n_double:
        resp[double] = rng.integers(0, 2, size=n_double).astype(np.int8)
    return resp


def classify(records: RecordBatch, sent_tally: np.ndarray,
             rng: np.random.Generator,
             slice_degrees: float | None = None) -> CountsLedger:
    """Fold detection records into a counts ledger.

    Every retained record increments exactly one Detected pair and one
    per-detector total.  When ``slice_degrees`` is given, the decoy-decoy
    records are also pushed through phase-slice post-selection.
    """
    a = np.asarray(records.source_a, dtype=np.int64)
    b = np.asarray(records.source_b, dtype=np.int64)
    if len(a) and (a.min() < 0 or a.max() > 2 or b.min() < 0 or b.max() > 2):
        raise RecordError("record with unknown source tag")
    if len(records) and not (records.click1 | records.click2).all():
        raise RecordError("record retained without any click")

    sent = np.asarray(sent_tally, dtype=float)
    detected = np.zeros((3, 3))
    np.add.at(detected, (a, b), 1.0)

    resp = responding_detector(records.click1, records.click2, rng)
    ledger = CountsLedger(
        n_total=float(sent.sum()),
        sent=sent,
        detected=detected,
        detected_det1=float(np.sum(resp == 0)),
        detected_det2=float(np.sum(resp == 1)),
        slice_degrees=slice_degrees if slice_degrees is not None else 10.0)

    if slice_degrees is not None:
        xx = (a == 1) & (b == 1)
        kept, correct = slice_sift(records.delta[xx], resp[xx], slice_degrees)
        ledger.detected_11_slice = float(kept)
        ledger.correct_11_slice = float(correct)
    return ledger


def slice_sift(delta: np.ndarray, responder: np.ndarray,
               d_s: float) -> tuple[int, int]:
    """Phase-slice post-selection of decoy-decoy records.

    Keeps records whose compensated phase difference lies within ``d_s``
    degrees of 0 or pi (two-sided).  A kept record is correct when the
    responding detector matches the sign of cos(delta); records near pi
    therefore count with the flipped convention.
    """
    if not 0 < d_s <= 90:
        raise ValueError("Ds must lie in (0, 90] degrees")
    d = np.asarray(delta, dtype=float) % TWO_PI
    width = math.radians(d_s)
    dist = np.minimum(np.minimum(d, np.abs(d - math.pi)), TWO_PI - d)
    keep = dist <= width + 1e-12
    predicted = (np.cos(d[keep]) <= 0).astype(np.int8)  # det2 near pi
    correct = int(np.sum(predicted == responder[keep]))
    return int(keep.sum()), correct


def z_raw_keys(records: RecordBatch) -> RawKeyPair:
    """Extract aligned raw key bits from send/not-send windows."""
    mask = ((records.source_a != 1) & (records.source_b != 1))
    a = records.source_a[mask]
    b = records.source_b[mask]
    return RawKeyPair(
        alice_bits=(a == 2).astype(np.int8),
        bob_bits=(b != 2).astype(np.int8),
        windows=records.window[mask])


def z_keys_from_counts(n_vv: int, n_vy: int, n_yv: int, n_yy: int,
                       rng: np.random.Generator,
                       untagged_prob_vy: float = 0.0,
                       untagged_prob_yv: float = 0.0) -> RawKeyPair:
    """Synthesize a shuffled raw key with the given detection composition.

    Equivalent to extracting keys from a record stream with these counts;
    used by the desk-scale path where ledgers are sampled analytically.
    Optionally marks the one-side-sent bits as single-photon (untagged)
    events with the given probabilities.
    """
    counts = [int(n_vv), int(n_vy), int(n_yv), int(n_yy)]
    total = sum(counts)
    alice = np.concatenate([np.zeros(counts[0], np.int8),
                            np.zeros(counts[1], np.int8),
                            np.ones(counts[2], np.int8),
                            np.ones(counts[3], np.int8)])
    bob = np.concatenate([np.ones(counts[0], np.int8),
                          np.zeros(counts[1], np.int8),
                          np.ones(counts[2], np.int8),
                          np.zeros(counts[3], np.int8)])
    untagged = np.zeros(total, dtype=bool)
    s0, s1 = counts[0], counts[0] + counts[1]
    s2 = s1 + counts[2]
    if untagged_prob_vy:
        untagged[s0:s1] = rng.random(counts[1]) < untagged_prob_vy
    if untagged_prob_yv:
        untagged[s1:s2] = rng.random(counts[2]) < untagged_prob_yv
    perm = rng.permutation(total)
    return RawKeyPair(alice_bits=alice[perm], bob_bits=bob[perm],
                      windows=np.arange(total, dtype=np.int64)[perm],
                      untagged=untagged[perm])


# ---------------------------------------------------------------------------
# ledger CSV interchange
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 2**63:
        return str(int(v))
    return repr(float(v))


def write_ledger_csv(ledgers: dict, path) -> None:
    """Write ledgers as CSV, one column per channel, paper-style row names."""
    names = list(ledgers)
    with open(path, "w") as f:
        f.write("row," + ",".join(names) + "\n")
        for row in LEDGER_ROWS:
            vals = [ledgers[n].to_rows()[row] for n in names]
            f.write(row + "," + ",".join(_fmt(v) for v in vals) + "\n")


def read_ledger_csv(path) -> dict:
    """Read a ledger CSV back into {column: CountsLedger}."""
    import csv

    with open(path) as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise LedgerError(f"{path}: empty ledger file") from None
    if not header or header[0] != "row":
        raise LedgerError(f"{path}: first column must be 'row'")
    names = header[1:]
    table = {}
    for lineno, parts in enumerate(reader, start=2):
        if not parts:
            continue
        if len(parts) != len(names) + 1:
            raise LedgerError(f"{path}:{lineno}: expected {len(names) + 1} "
                              f"columns, found {len(parts)}")
        try:
            table[parts[0]] = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise LedgerError(f"{path}:{lineno}: {exc}") from None
    out = {}
    for j, name in enumerate(names):
        rows = {r: vals[j] for r, vals in table.items()}
        out[name] = CountsLedger.from_rows(rows)
    return out
