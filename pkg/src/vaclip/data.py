"""WAV I/O, resampling, and dataset segmentation into sequences/minibatches."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .audio import AudioSequence, StateTrajectory
from .dsp import windowed_sinc_taps
from .errors import AudioIOError, ContractError


def read_wav(path):
    """Raw WAV read: returns (samples as float64 in [-1, 1] scale, rate).

    Multi-channel data comes back as (N, C); integer PCM is normalized by its
    full scale, float data is passed through.
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise AudioIOError(f"no such file: {path}", path=path) from None
    except (ValueError, OSError) as err:
        raise AudioIOError(f"unreadable WAV {path}: {err}", path=path) from None
    if data.dtype == np.int16:
        out = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        out = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        out = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        out = data.astype(np.float64)
    else:
        raise AudioIOError(f"unsupported WAV sample format {data.dtype} in {path}",
                           path=path)
    return out, float(rate)


def load_wav(path) -> AudioSequence:
    """Load a mono WAV as an AudioSequence."""
    data, rate = read_wav(path)
    if data.ndim != 1:
        raise AudioIOError(f"{path} has {data.shape[1]} channels, expected mono",
                           path=path)
    return AudioSequence(data, rate)


def load_states(path) -> StateTrajectory:
    """Load a (possibly multi-channel) WAV as a state trajectory in volts."""
    data, rate = read_wav(path)
    return StateTrajectory(data if data.ndim == 2 else data[:, None], rate)


def write_wav(path, samples, rate_hz: float) -> None:
    """Write float32 WAV; (N,) or (N, C) input, values stored verbatim."""
    arr = np.asarray(samples, dtype=np.float32)
    try:
        wavfile.write(path, int(round(rate_hz)), arr)
    except OSError as err:
        raise AudioIOError(f"cannot write WAV {path}: {err}", path=path) from None


_RESAMPLE_BETA = 0.1102 * (115.0 - 8.7)
_RESAMPLE_HALF_WIDTH = 75.0  # reference-rate samples; transition 0.45 -> 0.5


def resample(seq: AudioSequence, new_rate_hz: float) -> AudioSequence:
    """Windowed-sinc polyphase resampling (passband flat to 0.45 * min rate)."""
    if not new_rate_hz > 0:
        raise ContractError("new_rate must be positive")
    if abs(new_rate_hz - seq.rate_hz) < 1e-9:
        return AudioSequence(seq.samples.copy(), seq.rate_hz)
    frac = Fraction(new_rate_hz / seq.rate_hz).limit_denominator(1000)
    up, down = frac.numerator, frac.denominator
    # taps sampled at the upsampled rate, prototype fixed at the narrower rate
    min_rate = min(seq.rate_hz, new_rate_hz)
    up_rate = seq.rate_hz * up
    factor = up_rate / min_rate
    # resample_poly compensates the zero-stuffing gain internally for array
    # windows, so taps are passed with plain unity DC gain
    taps = windowed_sinc_taps(0.475, _RESAMPLE_HALF_WIDTH, _RESAMPLE_BETA, factor)
    out = resample_poly(seq.samples, up, down, window=taps)
    n_out = int(math.ceil(len(seq) * up / down))
    return AudioSequence(out[:n_out], new_rate_hz)


@dataclass(frozen=True)
class SegmentationConfig:
    sequence_len: int = 22050
    subsequence_len: int = 2048

    def __post_init__(self):
        if self.sequence_len <= 0 or self.subsequence_len <= 0:
            raise ContractError("segment lengths must be positive")
        if self.subsequence_len > self.sequence_len:
            raise ContractError("subsequence_len must be <= sequence_len")

    @property
    def n_subsequences(self):
        return -(-self.sequence_len // self.subsequence_len)


@dataclass
class TrainSequence:
    """One training sequence: padded input/targets plus the state before it."""

    x: np.ndarray         # (sequence_len,)
    target: np.ndarray    # (sequence_len, state_dim)
    y0: np.ndarray        # (state_dim,) ground-truth state one sample before x[0]
    length: int           # valid samples (rest is zero padding)


def cut_sequences(pieces, cfg: SegmentationConfig):
    """Cut (input, target-trajectory) pieces into teacher-forcible sequences.

    The initial state of a sequence is the target state at the sample just
    before it (zero state at a piece start, which is exact for oracle data).
    """
    seqs = []
    for x, traj in pieces:
        xs = x.samples if isinstance(x, AudioSequence) else np.asarray(x)
        ts = traj.states if isinstance(traj, StateTrajectory) else np.asarray(traj)
        if ts.shape[0] != xs.shape[0]:
            raise ContractError("input and state target lengths differ")
        state_dim = ts.shape[1]
        n = xs.shape[0]
        for start in range(0, n, cfg.sequence_len):
            stop = min(start + cfg.sequence_len, n)
            length = stop - start
            xseq = np.zeros(cfg.sequence_len)
            tseq = np.zeros((cfg.sequence_len, state_dim))
            xseq[:length] = xs[start:stop]
            tseq[:length] = ts[start:stop]
            y0 = ts[start - 1].copy() if start > 0 else np.zeros(state_dim)
            seqs.append(TrainSequence(xseq, tseq, y0, length))
    return seqs


@dataclass
class Minibatch:
    """A group of sequences processed subsequence by subsequence."""

    x: np.ndarray        # (B, sequence_len)
    target: np.ndarray   # (B, sequence_len, state_dim)
    y0: np.ndarray       # (B, state_dim) state before the sequence
    lengths: np.ndarray  # (B,)
    cfg: SegmentationConfig

    @property
    def n_subsequences(self):
        return self.cfg.n_subsequences

    def subsequence(self, k: int):
        """(x, target, y0, mask) for subsequence k, teacher-forced initial state.

        y0 is the target state at the sample preceding the subsequence (the
        sequence-initial state for k = 0). mask flags valid (unpadded) samples.
        """
        sub = self.cfg.subsequence_len
        lo = k * sub
        hi = min(lo + sub, self.cfg.sequence_len)
        x = self.x[:, lo:hi]
        target = self.target[:, lo:hi, :]
        y0 = self.y0 if k == 0 else self.target[:, lo - 1, :]
        idx = np.arange(lo, hi)
        mask = (idx[None, :] < self.lengths[:, None]).astype(np.float64)
        return x, target, y0, mask


def segment(pieces, cfg: SegmentationConfig, batch_size: int, seed: int = 0):
    """Cut pieces into sequences and group them into shuffled minibatches.

    Shuffling permutes whole sequences only; iteration order is deterministic
    for a given seed.
    """
    seqs = cut_sequences(pieces, cfg)
    return batch_sequences(seqs, cfg, batch_size, seed)


def batch_sequences(seqs, cfg: SegmentationConfig, batch_size: int, seed: int = 0):
    if batch_size <= 0:
        raise ContractError("batch_size must be positive")
    order = np.random.default_rng(seed).permutation(len(seqs))
    batches = []
    for lo in range(0, len(seqs), batch_size):
        chunk = [seqs[i] for i in order[lo: lo + batch_size]]
        batches.append(Minibatch(
            x=np.stack([s.x for s in chunk]),
            target=np.stack([s.target for s in chunk]),
            y0=np.stack([s.y0 for s in chunk]),
            lengths=np.asarray([s.length for s in chunk], dtype=np.int64),
            cfg=cfg,
        ))
    return batches
