"""Shared DSP helpers: windowed-sinc filter design and streaming decimation.

The decimator taps are sampled from a fixed continuous-time prototype
(cutoff, width and window shape expressed in units of the *target* rate), so
two decimators for different oversampling factors realize the same passband
response up to their sampling aliases. This keeps oversample-convergence
comparisons meaningful down to ~1e-8.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def _kaiser_window(x, beta):
    """Continuous Kaiser window on |x| <= 1 (zero outside)."""
    x = np.asarray(x, dtype=np.float64)
    inside = np.abs(x) <= 1.0
    w = np.zeros_like(x)
    w[inside] = np.i0(beta * np.sqrt(1.0 - x[inside] ** 2)) / np.i0(beta)
    return w


def windowed_sinc_taps(cutoff, half_width, beta, factor):
    """Lowpass FIR taps sampled at ``factor`` times the reference rate.

    ``cutoff`` and ``half_width`` are in reference-rate units (Nyquist = 0.5).
    DC gain is normalized to exactly 1.
    """
    half = int(round(half_width * factor))
    if half < 1:
        raise ContractError("filter support too short for this factor")
    t = np.arange(-half, half + 1) / factor
    h = 2.0 * cutoff * np.sinc(2.0 * cutoff * t) * _kaiser_window(t / half_width, beta)
    return h / h.sum()


class StreamingDecimator:
    """FIR anti-alias filter + pick-every-``factor`` with chunked input.

    Output sample m is the filtered signal at input time ``m * factor``; the
    (odd-length) filter's group delay is compensated internally, and the input
    is treated as zero outside the fed samples.
    """

    def __init__(self, taps: np.ndarray, factor: int):
        taps = np.asarray(taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size % 2 != 1:
            raise ContractError("taps must be a 1-D odd-length array")
        self.taps = taps
        self.factor = int(factor)
        self._delay = (taps.size - 1) // 2
        # buffer holds the zero-padded stream not yet fully consumed
        self._buf = np.zeros(self._delay, dtype=np.float64)
        self._rev = taps[::-1].copy()

    def feed(self, chunk: np.ndarray) -> np.ndarray:
        self._buf = np.concatenate([self._buf, np.asarray(chunk, dtype=np.float64)])
        return self._drain()

    def finish(self) -> np.ndarray:
        self._buf = np.concatenate([self._buf, np.zeros(self._delay)])
        out = self._drain(final=True)
        return out

    def _drain(self, final=False) -> np.ndarray:
        L = self.taps.size
        n = self._buf.size
        if final:
            n_windows = n - L + 1
        else:
            # keep a full window of history for the next chunk
            n_windows = n - L + 1 - (self.factor - 1)
        if n_windows <= 0:
            return np.zeros(0, dtype=np.float64)
        n_out = (n_windows + self.factor - 1) // self.factor
        view = np.lib.stride_tricks.sliding_window_view(self._buf, L)
        out = view[: n_windows: self.factor] @ self._rev
        consumed = n_out * self.factor
        self._buf = self._buf[consumed:].copy()
        return out


def decimation_filters(factor: int, atten_db: float = 115.0):
    """Two-stage anti-alias decimators for an even oversampling ``factor``.

    Stage one drops to twice the target rate with a wide-transition filter;
    stage two is a halfband-style filter with passband to 0.45 and stopband
    from 0.5 of the target rate.
    """
    if factor < 2 or factor % 2 != 0:
        raise ContractError("decimation factor must be even and >= 2")
    beta = 0.1102 * (atten_db - 8.7)
    # half_width for a kaiser design with full transition width df (target-rate
    # units): (A - 7.95) / (2 * 2.285 * 2*pi * df). Rounded UP to an integer
    # number of target-rate samples so the continuous prototype is exactly the
    # same for every even factor (outputs then agree to sampling-alias level).
    width_coef = (atten_db - 7.95) / (2.285 * 2.0 * np.pi)
    # stage 1: cutoff 1.0, transition 0.5 -> 1.5 target-rate units
    h1 = windowed_sinc_taps(1.0, float(np.ceil(width_coef / 2.0)), beta, factor)
    # stage 2: cutoff 0.475, transition 0.45 -> 0.5 at 2x target rate
    h2 = windowed_sinc_taps(0.475, float(np.ceil(width_coef / 0.1)), beta, 2)
    return (StreamingDecimator(h1, factor // 2), StreamingDecimator(h2, 2))
