"""Synthetic program material covering the clippers' operating region.

Each piece starts and ends with a short silence plus raised-cosine fades, so
the circuit state decays to (numerically) zero at piece boundaries and pieces
can be concatenated into one long test stream without state discontinuities.
"""

from __future__ import annotations

import numpy as np

from .audio import AudioSequence
from .dsp import windowed_sinc_taps
from .errors import ContractError

SILENCE_S = 0.05
FADE_S = 0.05


def fade_envelope(n_active: int, rate_hz: float, fade_s: float = FADE_S):
    env = np.ones(n_active)
    nf = min(int(fade_s * rate_hz), n_active // 2)
    if nf > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(nf) / nf))
        env[:nf] = ramp
        env[-nf:] = ramp[::-1]
    return env


def _frame(body: np.ndarray, rate_hz: float) -> np.ndarray:
    ns = int(SILENCE_S * rate_hz)
    return np.concatenate([np.zeros(ns), body, np.zeros(ns)])


def sine_piece(rate_hz, duration_s, freq_hz, amp, phase=0.0) -> np.ndarray:
    n = int(duration_s * rate_hz)
    t = np.arange(n) / rate_hz
    body = amp * np.sin(2 * np.pi * freq_hz * t + phase)
    return _frame(body * fade_envelope(n, rate_hz), rate_hz)


def sine_mix_piece(rate_hz, duration_s, freqs, amps, phases) -> np.ndarray:
    n = int(duration_s * rate_hz)
    t = np.arange(n) / rate_hz
    body = np.zeros(n)
    for f, a, p in zip(freqs, amps, phases):
        body += a * np.sin(2 * np.pi * f * t + p)
    peak = np.max(np.abs(body))
    if peak > 1.0:
        body /= peak
    return _frame(body * fade_envelope(n, rate_hz), rate_hz)


def saw_piece(rate_hz, duration_s, f0_hz, amp, n_harmonics) -> np.ndarray:
    """Additive bandlimited sawtooth (fixed harmonic count, rate independent)."""
    n = int(duration_s * rate_hz)
    t = np.arange(n) / rate_hz
    body = np.zeros(n)
    for k in range(1, n_harmonics + 1):
        body += ((-1.0) ** (k + 1)) / k * np.sin(2 * np.pi * k * f0_hz * t)
    body *= amp * 2.0 / np.pi
    return _frame(body * fade_envelope(n, rate_hz), rate_hz)


def ramp_sine_piece(rate_hz, duration_s, freq_hz, amp) -> np.ndarray:
    """Sine under a 0 -> amp -> 0 triangular amplitude sweep (covers the knee)."""
    n = int(duration_s * rate_hz)
    t = np.arange(n) / rate_hz
    tri = 1.0 - np.abs(2.0 * np.arange(n) / max(n - 1, 1) - 1.0)
    body = amp * tri * np.sin(2 * np.pi * freq_hz * t)
    return _frame(body * fade_envelope(n, rate_hz), rate_hz)


def noise_piece(rate_hz, duration_s, amp, rng, cutoff_hz=2500.0) -> np.ndarray:
    """Dark noise burst: Gaussian noise lowpassed near guitar bandwidth.

    Program material stands in for guitar/bass recordings, whose energy sits
    well below Nyquist; bright noise would dominate the error metrics with
    content no instrument signal carries.
    """
    n = int(duration_s * rate_hz)
    half = 64
    raw = rng.normal(0.0, 1.0, size=n + 2 * half)
    taps = windowed_sinc_taps(cutoff_hz / rate_hz, float(half), 9.0, 1)
    body = np.convolve(raw, taps, mode="same")[half: half + n]
    body *= amp / max(np.max(np.abs(body)), 1e-9)
    return _frame(body * fade_envelope(n, rate_hz), rate_hz)


def harmonic_tone(rate_hz, f0_hz=110.0, n_harmonics=40, amp=0.9,
                  duration_s=1.5) -> AudioSequence:
    """Harmonic-rich low tone (sawtooth-like) used for aliasing inspection.

    The harmonic count is fixed, so the underlying continuous signal is the
    same at every rendering rate.
    """
    body = saw_piece(rate_hz, duration_s, f0_hz, amp, n_harmonics)
    return AudioSequence(body, rate_hz)


_KINDS = ("sine", "sinemix", "saw", "ramp", "noise")


def make_program(total_s: float, rate_hz: float, seed: int,
                 piece_s: float = 3.0, max_amp: float = 1.0):
    """Deterministic list of (name, AudioSequence) pieces totalling >= total_s."""
    if total_s <= 0 or piece_s <= 0:
        raise ContractError("durations must be positive")
    rng = np.random.default_rng(seed)
    n_pieces = int(np.ceil(total_s / piece_s))
    body_s = piece_s - 2 * SILENCE_S
    pieces = []
    for i in range(n_pieces):
        kind = _KINDS[i % len(_KINDS)]
        # amplitudes cycle through the operating region, knee included;
        # frequency ranges mirror guitar/bass fundamentals
        amp = max_amp * float(rng.uniform(0.15, 1.0))
        if kind == "sine":
            freq = float(np.exp(rng.uniform(np.log(55.0), np.log(900.0))))
            sig = sine_piece(rate_hz, body_s, freq, amp,
                             phase=float(rng.uniform(0, 2 * np.pi)))
            name = f"{i:03d}_sine_{freq:.0f}hz"
        elif kind == "sinemix":
            k = int(rng.integers(2, 4))
            freqs = np.exp(rng.uniform(np.log(55.0), np.log(900.0), size=k))
            amps = rng.uniform(0.3, 1.0, size=k) * amp / k * 2.0
            phases = rng.uniform(0, 2 * np.pi, size=k)
            sig = sine_mix_piece(rate_hz, body_s, freqs, amps, phases)
            name = f"{i:03d}_sinemix"
        elif kind == "saw":
            f0 = float(np.exp(rng.uniform(np.log(70.0), np.log(300.0))))
            nh = min(40, int(6000.0 / f0))
            sig = saw_piece(rate_hz, body_s, f0, amp, nh)
            name = f"{i:03d}_saw_{f0:.0f}hz"
        elif kind == "ramp":
            freq = float(np.exp(rng.uniform(np.log(80.0), np.log(500.0))))
            sig = ramp_sine_piece(rate_hz, body_s, freq, max_amp)
            name = f"{i:03d}_ramp_{freq:.0f}hz"
        else:
            sig = noise_piece(rate_hz, body_s, amp, rng)
            name = f"{i:03d}_noise"
        pieces.append((name, AudioSequence(sig, rate_hz)))
    return pieces
