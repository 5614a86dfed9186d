"""Analytical diode-clipper circuits and the high-accuracy reference integrator.

The first-order clipper is an RC lowpass into an antiparallel diode pair; its
single state is the capacitor (= output) voltage. The second-order variant
inserts a series capacitor between the resistor and the output node, which
blocks DC and stores charge across asymmetric program material. Nodal analysis
of the second-order circuit (series C1 carrying the resistor current into the
output node, with C2 and the diode pair to ground) gives

    i_R = (g*v_in - y1 - y2) / R
    dy2/dt = i_R / C1
    dy1/dt = i_R / C2 - (2*Is/C2) * sinh(y1 / (n*Vt))

with y2 the series-capacitor voltage and y1 the output. The test suite checks
these equations against a brute-force nodal current-balance solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .audio import AudioSequence, StateTrajectory
from .dsp import decimation_filters
from .errors import ContractError, OracleError


@dataclass(frozen=True)
class DiodeParams:
    """Shockley parameters for one diode of the antiparallel pair (1N4148-class)."""

    saturation_current: float = 2.52e-9  # A
    ideality: float = 1.752
    thermal_voltage: float = 0.02585  # V

    def __post_init__(self):
        if min(self.saturation_current, self.ideality, self.thermal_voltage) <= 0:
            raise ContractError("diode parameters must be positive")

    @property
    def nvt(self):
        return self.ideality * self.thermal_voltage


@dataclass(frozen=True)
class Clipper1:
    """First-order diode clipper: R into C parallel with the diode pair."""

    resistance: float = 2200.0
    capacitance: float = 1e-8
    input_gain: float = 5.0
    diode: DiodeParams = field(default_factory=DiodeParams)

    name = "clipper1"
    state_dim = 1

    @property
    def shunt_capacitance(self):
        return self.capacitance


@dataclass(frozen=True)
class Clipper2:
    """Second-order clipper: series capacitor added between resistor and output."""

    resistance: float = 2200.0
    series_capacitance: float = 4.7e-7  # C1, across states y2
    shunt_capacitance: float = 1e-8     # C2, across the output y1
    input_gain: float = 5.0
    diode: DiodeParams = field(default_factory=DiodeParams)

    name = "clipper2"
    state_dim = 2


CIRCUITS = {"clipper1": Clipper1, "clipper2": Clipper2}


def make_circuit(name: str, diode: DiodeParams | None = None):
    try:
        cls = CIRCUITS[name]
    except KeyError:
        raise ContractError(f"unknown circuit {name!r}; pick one of {sorted(CIRCUITS)}")
    return cls(diode=diode) if diode is not None else cls()


def _sinh_guarded(arg):
    arg = np.asarray(arg, dtype=np.float64)
    if np.any(np.abs(arg) > 690.0):
        raise OracleError("diode junction voltage out of physical range "
                          "(sinh overflow); state is not trustworthy")
    return np.sinh(arg)


def clipper1_rhs(circuit: Clipper1, v_in, y1):
    """dy1/dt in volts per second; accepts scalars or broadcastable arrays."""
    v_in = np.asarray(v_in, dtype=np.float64)
    y1 = np.asarray(y1, dtype=np.float64)
    drive = circuit.input_gain * v_in
    linear = (drive - y1) / (circuit.resistance * circuit.capacitance)
    diode = (2.0 * circuit.diode.saturation_current / circuit.capacitance) \
        * _sinh_guarded(y1 / circuit.diode.nvt)
    out = linear - diode
    return float(out) if out.ndim == 0 else out


def clipper2_rhs(circuit: Clipper2, v_in, y1, y2):
    """(dy1/dt, dy2/dt) in volts per second from the state-space form above."""
    v_in = np.asarray(v_in, dtype=np.float64)
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    i_r = (circuit.input_gain * v_in - y1 - y2) / circuit.resistance
    dy2 = i_r / circuit.series_capacitance
    dy1 = i_r / circuit.shunt_capacitance \
        - (2.0 * circuit.diode.saturation_current / circuit.shunt_capacitance) \
        * _sinh_guarded(y1 / circuit.diode.nvt)
    if dy1.ndim == 0:
        return float(dy1), float(dy2)
    return dy1, dy2


def circuit_rhs(circuit, v_in, state):
    """Uniform vector form: state (dim,) -> derivative (dim,)."""
    if circuit.state_dim == 1:
        return np.asarray([clipper1_rhs(circuit, v_in, state[0])])
    dy1, dy2 = clipper2_rhs(circuit, v_in, state[0], state[1])
    return np.asarray([dy1, dy2])


def equilibrium_voltage(circuit, drive: float) -> float:
    """Output voltage where the clipper settles under a constant drive.

    Solves (drive - y) / R = 2*Is*sinh(y / nVt) by bisection; for the
    second-order clipper this is the y1 equilibrium with a fully discharged
    series capacitor (the stiffest sustained case).
    """
    if drive == 0.0:
        return 0.0
    sign = 1.0 if drive > 0 else -1.0
    d = abs(drive)
    two_is = 2.0 * circuit.diode.saturation_current
    nvt = circuit.diode.nvt
    r = circuit.resistance

    def balance(y):
        return (d - y) / r - two_is * math.sinh(y / nvt)

    lo, hi = 0.0, d
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if balance(mid) > 0:
            lo = mid
        else:
            hi = mid
    return sign * 0.5 * (lo + hi)


def stiffness(circuit, y1: float) -> float:
    """|d(dy1/dt)/dy1| at operating point y1: the fast eigenvalue magnitude."""
    c = circuit.shunt_capacitance
    nvt = circuit.diode.nvt
    return 1.0 / (circuit.resistance * c) \
        + (2.0 * circuit.diode.saturation_current / (c * nvt)) \
        * math.cosh(min(abs(y1) / nvt, 690.0))


def required_oversample(circuit, rate_hz: float, peak_input: float,
                        z_target: float = 2.2) -> int:
    """Smallest even oversampling factor keeping RK4 stable at the diode knee.

    The knee's local eigenvalue at the hardest sustained operating point must
    satisfy |lambda| * dt <= z_target (inside RK4's real stability interval of
    about 2.78).
    """
    y_knee = equilibrium_voltage(circuit, circuit.input_gain * abs(peak_input))
    lam = stiffness(circuit, y_knee)
    dt_max = z_target / lam
    factor = max(8, math.ceil(1.0 / (rate_hz * dt_max)))
    return factor + (factor % 2)


def reference_integrate(circuit, x: AudioSequence, oversample: int = 32,
                        chunk_samples: int = 65536) -> StateTrajectory:
    """RK4 at ``oversample`` times the audio rate, anti-aliased back to the grid.

    The input is linearly interpolated onto the oversampled grid, the state is
    integrated from zero, and each state channel is decimated through the
    two-stage windowed-sinc filter bank. Odd factors are rounded up to even.
    """
    if oversample < 8:
        raise ContractError("oversample must be >= 8")
    oversample = int(oversample) + (int(oversample) % 2)
    n = len(x)
    if n == 0:
        return StateTrajectory(np.zeros((0, circuit.state_dim)), x.rate_hz)
    dt = 1.0 / (x.rate_hz * oversample)
    total_steps = (n - 1) * oversample
    samples = np.ascontiguousarray(x.samples)
    peak = float(np.max(np.abs(samples))) if n else 0.0

    nvt = circuit.diode.nvt
    gain = circuit.input_gain
    y1bound = max(1.5 * abs(equilibrium_voltage(circuit, gain * peak)), 0.1) + 0.5

    stages = [decimation_filters(oversample) for _ in range(circuit.state_dim)]

    def push(channel, values):
        s1, s2 = stages[channel]
        return s2.feed(s1.feed(values))

    def flush(channel):
        s1, s2 = stages[channel]
        out = s2.feed(s1.finish())
        return np.concatenate([out, s2.finish()])

    outputs = [[] for _ in range(circuit.state_dim)]
    for ch in range(circuit.state_dim):
        outputs[ch].append(push(ch, np.zeros(1)))  # initial state node

    def fail_msg(j):
        pos = j / oversample / x.rate_hz
        return (f"reference integration diverged near t={pos:.6f} s at "
                f"oversample={oversample}; retry with a higher factor "
                f"(required_oversample suggests "
                f"{required_oversample(circuit, x.rate_hz, peak)})")

    if circuit.state_dim == 1:
        inv_rc = 1.0 / (circuit.resistance * circuit.capacitance)
        k_diode = 2.0 * circuit.diode.saturation_current / circuit.capacitance
        y = 0.0
        j = 0
        while j < total_steps:
            j1 = min(j + chunk_samples * oversample, total_steps)
            ys, y, failed = _kernels.clipper1_chunk(
                samples, oversample, j, j1, y, dt, gain, inv_rc, k_diode,
                1.0 / nvt, y1bound)
            if failed >= 0:
                raise OracleError(fail_msg(failed))
            outputs[0].append(push(0, ys))
            j = j1
        outputs[0].append(flush(0))
        states = np.concatenate(outputs[0])[:, None]
    else:
        inv_rc1 = 1.0 / (circuit.resistance * circuit.series_capacitance)
        inv_rc2 = 1.0 / (circuit.resistance * circuit.shunt_capacitance)
        k_diode = 2.0 * circuit.diode.saturation_current / circuit.shunt_capacitance
        y2bound = gain * peak + 2.0
        y1 = 0.0
        y2 = 0.0
        j = 0
        while j < total_steps:
            j1 = min(j + chunk_samples * oversample, total_steps)
            ys, y1, y2, failed = _kernels.clipper2_chunk(
                samples, oversample, j, j1, y1, y2, dt, gain, inv_rc1, inv_rc2,
                k_diode, 1.0 / nvt, y1bound, y2bound)
            if failed >= 0:
                raise OracleError(fail_msg(failed))
            for ch in range(2):
                outputs[ch].append(push(ch, np.ascontiguousarray(ys[:, ch])))
            j = j1
        for ch in range(2):
            outputs[ch].append(flush(ch))
        states = np.stack([np.concatenate(outputs[ch]) for ch in range(2)], axis=1)

    if states.shape[0] != n:
        raise OracleError(f"decimator produced {states.shape[0]} samples, "
                          f"expected {n}")
    return StateTrajectory(states, x.rate_hz)
