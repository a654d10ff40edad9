"""Hot numeric kernels: numba fast path with a pure-numpy fallback.

The numba path is used whenever numba imports cleanly, unless the environment
variable ``TFQKD_NO_NUMBA`` is set to a non-empty value other than ``0``.
Both paths are deterministic given a seed, but they consume randomness in a
different order, so their outputs agree statistically rather than bitwise.
``benchmarks/bench_kernels.py`` times one against the other.
"""
from __future__ import annotations

import os

import numpy as np

__all__ = [
    "backend",
    "ar1_path",
    "piecewise_drift",
    "mc_windows",
]


def _numba_disabled() -> bool:
    flag = os.environ.get("TFQKD_NO_NUMBA", "")
    return flag not in ("", "0")


_HAVE_NUMBA = False
if not _numba_disabled():
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - exercised via env flag instead
        _HAVE_NUMBA = False


def backend() -> str:
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return "numba" if _HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# first-order feedback recurrence: x[k] = decay * x[k-1] + noise[k]
# ---------------------------------------------------------------------------

def _ar1_path_numpy(noise: np.ndarray, decay: float) -> np.ndarray:
    if decay == 1.0:
        return np.cumsum(noise)
    from scipy.signal import lfilter

    return lfilter([1.0], [1.0, -decay], noise)


def _ar1_path_loop(noise, decay):
    out = np.empty_like(noise)
    x = 0.0
    for k in range(noise.shape[0]):
        x = decay * x + noise[k]
        out[k] = x
    return out


# ---------------------------------------------------------------------------
# Wiener phase path with periodic compensation resets
# ---------------------------------------------------------------------------

def _piecewise_drift_numpy(increments: np.ndarray, resets: np.ndarray,
                           steps_per_reset: int) -> np.ndarray:
    n = increments.shape[0]
    if steps_per_reset >= n:
        return resets[0] + np.cumsum(increments)
    raw = np.cumsum(increments)
    starts = np.arange(0, n, steps_per_reset)
    # subtract the running sum accumulated before each interval, add its reset
    base = resets[: starts.shape[0]] - np.concatenate(([0.0], raw[starts[1:] - 1]))
    return raw + np.repeat(base, np.diff(np.append(starts, n)))


def _piecewise_drift_loop(increments, resets, steps_per_reset):
    n = increments.shape[0]
    out = np.empty(n, dtype=np.float64)
    phi = 0.0
    interval = 0
    for k in range(n):
        if k % steps_per_reset == 0:
            phi = resets[interval]
            interval += 1
        phi += increments[k]
        out[k] = phi
    return out


# ---------------------------------------------------------------------------
# window-level Monte Carlo of the interferometric measurement
# ---------------------------------------------------------------------------
# Per window: draw the source pair, draw discrete phases, advance the channel
# phase-drift residual, form the two output-port Poisson intensities and draw
# threshold-detector clicks.  Windows with at least one click are emitted as
# records carrying the post-compensation phase difference used by sifting.

_TWO_PI = 2.0 * np.pi


def _mc_windows_loop(n_windows, joint_cdf, int_a, int_b, pn1, pn2,
                     n_phase, theta_span, drift_step_std, steps_per_update,
                     resid_std, seed, cap, win, src_a, src_b, delta, c1, c2,
                     sent):
    np.random.seed(seed)
    count = 0
    theta = np.random.normal(0.0, resid_std)  # drift minus its estimate
    for w in range(n_windows):
        if w % steps_per_update == 0:
            theta = np.random.normal(0.0, resid_std)
        theta += np.random.normal(0.0, drift_step_std)

        u = np.random.random()
        pair = 0
        while pair < 8 and u >= joint_cdf[pair]:
            pair += 1
        a = pair // 3
        b = pair % 3
        sent[a, b] += 1

        ka = np.random.randint(0, n_phase)
        kb = np.random.randint(0, n_phase)
        d_sel = (ka - kb) * (theta_span / n_phase)
        d_phys = d_sel + theta

        ia = int_a[a]
        ib = int_b[b]
        half = 0.5 * (ia + ib)
        cross = np.sqrt(ia * ib) * np.cos(d_phys)
        p_click1 = 1.0 - (1.0 - pn1) * np.exp(-(half + cross))
        p_click2 = 1.0 - (1.0 - pn2) * np.exp(-(half - cross))
        k1 = np.random.random() < p_click1
        k2 = np.random.random() < p_click2
        if k1 or k2:
            if count >= cap:
                return -1
            win[count] = w
            src_a[count] = a
            src_b[count] = b
            delta[count] = d_sel % _TWO_PI
            c1[count] = k1
            c2[count] = k2
            count += 1
    return count


def _mc_windows_numpy(n_windows, joint_cdf, int_a, int_b, pn1, pn2,
                      n_phase, theta_span, drift_step_std, steps_per_update,
                      resid_std, seed, chunk=1 << 20):
    rng = np.random.default_rng(seed)
    probs = np.diff(np.concatenate(([0.0], joint_cdf)))
    sent = np.zeros((3, 3), dtype=np.int64)
    parts = []
    # stationary draw of the compensated-drift residual per window: the reset
    # value plus the Wiener wander accumulated since the last compensation
    for start in range(0, n_windows, chunk):
        m = min(chunk, n_windows - start)
        pair = rng.choice(9, size=m, p=probs)
        a = (pair // 3).astype(np.int8)
        b = (pair % 3).astype(np.int8)
        np.add.at(sent, (a.astype(np.int64), b.astype(np.int64)), 1)

        phase_in_cycle = (np.arange(start, start + m) % steps_per_update) + 1
        theta = rng.normal(0.0, resid_std, size=m) + rng.normal(
            0.0, 1.0, size=m) * drift_step_std * np.sqrt(phase_in_cycle)
        d_sel = (rng.integers(0, n_phase, size=m)
                 - rng.integers(0, n_phase, size=m)) * (theta_span / n_phase)
        d_phys = d_sel + theta

        ia = int_a[a]
        ib = int_b[b]
        half = 0.5 * (ia + ib)
        cross = np.sqrt(ia * ib) * np.cos(d_phys)
        k1 = rng.random(m) < 1.0 - (1.0 - pn1) * np.exp(-(half + cross))
        k2 = rng.random(m) < 1.0 - (1.0 - pn2) * np.exp(-(half - cross))
        hit = k1 | k2
        parts.append((np.nonzero(hit)[0] + start, a[hit], b[hit],
                      d_sel[hit] % _TWO_PI, k1[hit], k2[hit]))

    win = np.concatenate([p[0] for p in parts]).astype(np.int64)
    src_a = np.concatenate([p[1] for p in parts])
    src_b = np.concatenate([p[2] for p in parts])
    delta = np.concatenate([p[3] for p in parts])
    c1 = np.concatenate([p[4] for p in parts])
    c2 = np.concatenate([p[5] for p in parts])
    return win, src_a, src_b, delta, c1, c2, sent


if _HAVE_NUMBA:
    _ar1_path_jit = njit(cache=False)(_ar1_path_loop)
    _piecewise_drift_jit = njit(cache=False)(_piecewise_drift_loop)
    _mc_windows_jit = njit(cache=False)(_mc_windows_loop)


def ar1_path(noise: np.ndarray, decay: float) -> np.ndarray:
    """Cumulative first-order loop response to a noise sequence.

    ``decay == 1`` reproduces the raw random walk (zero applied correction).
    """
    noise = np.ascontiguousarray(noise, dtype=np.float64)
    if _HAVE_NUMBA:
        return _ar1_path_jit(noise, float(decay))
    return _ar1_path_numpy(noise, float(decay))


def piecewise_drift(increments: np.ndarray, resets: np.ndarray,
                    steps_per_reset: int) -> np.ndarray:
    """Wiener path whose value restarts from ``resets[i]`` every interval."""
    increments = np.ascontiguousarray(increments, dtype=np.float64)
    resets = np.ascontiguousarray(resets, dtype=np.float64)
    steps_per_reset = int(steps_per_reset)
    if steps_per_reset < 1:
        raise ValueError("steps_per_reset must be >= 1")
    needed = -(-increments.shape[0] // steps_per_reset)
    if resets.shape[0] < needed:
        raise ValueError("not enough reset values for the path length")
    if _HAVE_NUMBA:
        return _piecewise_drift_jit(increments, resets, steps_per_reset)
    return _piecewise_drift_numpy(increments, resets, steps_per_reset)


def mc_windows(n_windows: int, joint_probs: np.ndarray, int_a: np.ndarray,
               int_b: np.ndarray, pn1: float, pn2: float, n_phase: int,
               theta_span: float, drift_step_std: float,
               steps_per_update: int, resid_std: float, seed: int):
    """Monte-Carlo a block of transmission windows at the measurement node.

    Returns ``(window, source_a, source_b, delta, click1, click2, sent)``
    where the first six arrays hold one entry per retained detection and
    ``sent`` is the 3x3 tally of transmitted source pairs.
    """
    n_windows = int(n_windows)
    joint_probs = np.asarray(joint_probs, dtype=np.float64).reshape(9)
    joint_cdf = np.cumsum(joint_probs)
    if abs(joint_cdf[-1] - 1.0) > 1e-9:
        raise ValueError("joint source probabilities must sum to 1")
    joint_cdf[-1] = 1.0
    int_a = np.asarray(int_a, dtype=np.float64)
    int_b = np.asarray(int_b, dtype=np.float64)
    steps_per_update = max(int(steps_per_update), 1)

    if not _HAVE_NUMBA:
        return _mc_windows_numpy(n_windows, joint_cdf, int_a, int_b,
                                 float(pn1), float(pn2), int(n_phase),
                                 float(theta_span), float(drift_step_std),
                                 steps_per_update, float(resid_std), seed)

    # generous record capacity from a union bound on the click probability
    p_hit = 1.0 - (1.0 - pn1) * (1.0 - pn2) * np.exp(
        -(int_a.max() + int_b.max() + 2.0 * np.sqrt(int_a.max() * int_b.max())))
    cap = int(n_windows * min(1.0, p_hit) * 1.5
              + 10.0 * np.sqrt(n_windows * p_hit + 1.0) + 1024)
    cap = min(cap, n_windows)
    while True:
        win = np.empty(cap, dtype=np.int64)
        src_a = np.empty(cap, dtype=np.int8)
        src_b = np.empty(cap, dtype=np.int8)
        delta = np.empty(cap, dtype=np.float64)
        c1 = np.empty(cap, dtype=np.bool_)
        c2 = np.empty(cap, dtype=np.bool_)
        sent = np.zeros((3, 3), dtype=np.int64)
        count = _mc_windows_jit(n_windows, joint_cdf, int_a, int_b,
                                float(pn1), float(pn2), int(n_phase),
                                float(theta_span), float(drift_step_std),
                                steps_per_update, float(resid_std),
                                int(seed) & 0x7FFFFFFF, cap, win, src_a,
                                src_b, delta, c1, c2, sent)
        if count >= 0:
            return (win[:count].copy(), src_a[:count].copy(),
                    src_b[:count].copy(), delta[:count].copy(),
                    c1[:count].copy(), c2[:count].copy(), sent)
        cap = min(cap * 2, n_windows)
