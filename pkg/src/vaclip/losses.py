"""Loss stack (pre-emphasis, ESR, DC term) and evaluation metrics (SDR, spectra).

Every formula here works on plain numpy arrays and on taped tensors: targets
are always constants, so only the estimate side needs gradients. Time is the
leading axis; 2-D inputs are treated as (time, batch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, MetricError
from .tensor import Tensor, concat, value

PREEMPHASIS_COEF = 0.85
SDR_CAP_DB = 200.0
SPECTRUM_FLOOR_DB = -300.0


def _cat(parts):
    if any(isinstance(p, Tensor) for p in parts):
        return concat(parts, axis=0)
    return np.concatenate(parts, axis=0)


def preemphasis(x, coef: float = PREEMPHASIS_COEF):
    """First-order high-pass 1 - coef*z^-1 along the time axis, x[-1] = 0."""
    if value(x).shape[0] == 0:
        return x
    return _cat([x[:1], x[1:] - coef * x[:-1]])


def _energy(y, mask=None):
    y = np.asarray(y, dtype=np.float64)
    if mask is not None:
        y = y * mask
    return float((y * y).sum())


def _check_pair(y, y_hat):
    if value(y).shape != value(y_hat).shape:
        raise ContractError(
            f"shape mismatch: target {value(y).shape} vs estimate {value(y_hat).shape}")


def esr(y, y_hat, mask=None):
    """Error-to-signal ratio: sum((y - y_hat)^2) / sum(y^2).

    Callers apply pre-emphasis first when building the combined loss. ``mask``
    (same shape, 0/1) restricts both sums to valid samples.
    """
    _check_pair(y, y_hat)
    denom = _energy(value(y), mask)
    if denom <= 0.0:
        raise MetricError("esr undefined for a zero-energy target")
    resid = y - y_hat if isinstance(y_hat, Tensor) else np.asarray(y) - np.asarray(y_hat)
    if mask is not None:
        resid = resid * mask
    num = (resid * resid).sum()
    return num * (1.0 / denom)


def dc_loss(y, y_hat, mask=None):
    """Squared mean residual over mean target power."""
    _check_pair(y, y_hat)
    yv = np.asarray(value(y), dtype=np.float64)
    n = yv.size if mask is None else max(float(np.sum(mask)), 1.0)
    denom = _energy(yv, mask) / n
    if denom <= 0.0:
        raise MetricError("dc_loss undefined for a zero-energy target")
    resid = y - y_hat if isinstance(y_hat, Tensor) else np.asarray(y) - np.asarray(y_hat)
    if mask is not None:
        resid = resid * mask
    m = resid.sum() * (1.0 / n)
    return (m * m) * (1.0 / denom)


@dataclass
class LossBreakdown:
    esr: object
    dc: object
    total: object

    def as_floats(self):
        return LossBreakdown(float(value(self.esr)), float(value(self.dc)),
                             float(value(self.total)))


def combined_loss(y, y_hat, mask=None) -> LossBreakdown:
    """ESR on pre-emphasized signals plus the DC term on the raw pair."""
    e = esr(preemphasis(np.asarray(y, dtype=np.float64)), preemphasis(y_hat), mask)
    d = dc_loss(y, y_hat, mask)
    return LossBreakdown(esr=e, dc=d, total=e + d)


def esr_loss(y, y_hat, mask=None) -> LossBreakdown:
    """Plain ESR as a breakdown (dc fixed at 0); used for the two-state clipper."""
    e = esr(y, y_hat, mask)
    return LossBreakdown(esr=e, dc=0.0, total=e)


LOSS_MODES = {"combined": combined_loss, "esr": esr_loss}


def sdr(y, y_hat) -> float:
    """Signal-to-distortion ratio in dB: 10*log10(sum(y^2)/sum((y-y_hat)^2)).

    Identical signals return the +200 dB cap. This is -10*log10 of the raw
    (non-pre-emphasized) ESR.
    """
    _check_pair(y, y_hat)
    sig = _energy(np.asarray(y, dtype=np.float64))
    if sig <= 0.0:
        raise MetricError("sdr undefined for a zero-energy target")
    err = _energy(np.asarray(y, dtype=np.float64) - np.asarray(y_hat, dtype=np.float64))
    if err == 0.0:
        return SDR_CAP_DB
    return float(min(10.0 * np.log10(sig / err), SDR_CAP_DB))


def magnitude_spectrum(x, window: str = "hann", fft_size: int = 8192) -> np.ndarray:
    """Frame-averaged magnitude spectrum in dB, peak-normalized to 0 dB.

    Frames of ``fft_size`` samples hop by half a frame; short signals are
    zero-padded to one frame. The floor is clamped at -300 dB so silent input
    yields a defined value.
    """
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ContractError("fft_size must be a power of two")
    x = np.asarray(value(x), dtype=np.float64)
    if x.ndim != 1:
        raise ContractError("magnitude_spectrum expects a 1-D signal")
    if window == "hann":
        w = np.hanning(fft_size)
    elif window == "rect":
        w = np.ones(fft_size)
    else:
        raise ContractError(f"unknown window {window!r}")
    if x.size < fft_size:
        x = np.pad(x, (0, fft_size - x.size))
    hop = fft_size // 2
    n_frames = 1 + (x.size - fft_size) // hop
    acc = np.zeros(fft_size // 2 + 1)
    for k in range(n_frames):
        frame = x[k * hop: k * hop + fft_size] * w
        acc += np.abs(np.fft.rfft(frame)) ** 2
    mag = np.sqrt(acc / n_frames)
    peak = mag.max()
    if peak <= 0.0:
        return np.full(fft_size // 2 + 1, SPECTRUM_FLOOR_DB)
    db = 20.0 * np.log10(np.maximum(mag / peak, 10 ** (SPECTRUM_FLOOR_DB / 20.0)))
    return db


def spectrum_frequencies(rate_hz: float, fft_size: int = 8192) -> np.ndarray:
    return np.fft.rfftfreq(fft_size, d=1.0 / rate_hz)
