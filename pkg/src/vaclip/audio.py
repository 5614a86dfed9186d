"""Sample-domain data carriers used across the toolkit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass
class AudioSequence:
    """Mono sample vector plus its sampling rate."""

    samples: np.ndarray
    rate_hz: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ContractError("AudioSequence is mono; got shape "
                                f"{self.samples.shape}")
        if not self.rate_hz > 0:
            raise ContractError("rate_hz must be positive")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self):
        return len(self) / self.rate_hz


@dataclass
class StateTrajectory:
    """Per-sample state vectors; channel 0 is the audio output voltage."""

    states: np.ndarray  # (N, state_dim)
    rate_hz: float

    def __post_init__(self):
        st = np.asarray(self.states, dtype=np.float64)
        if st.ndim == 1:
            st = st[:, None]
        if st.ndim != 2:
            raise ContractError(f"states must be (N, dim), got {st.shape}")
        self.states = st

    def __len__(self):
        return self.states.shape[0]

    @property
    def state_dim(self):
        return self.states.shape[1]

    @property
    def output(self):
        return self.states[:, 0]

    def to_audio(self) -> AudioSequence:
        return AudioSequence(self.output.copy(), self.rate_hz)
