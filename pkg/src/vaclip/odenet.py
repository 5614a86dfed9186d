"""Model wrappers: ODENet (derivative net + solver), STN and LSTM baselines.

Time normalization: the derivative network learns dy/dtau with a step of 1 at
the training rate. Playing back at rate r keeps the network untouched and sets
dtau = training_rate / r; the excitation grid spacing in normalized time is
then also dtau, so one solver step always advances one input sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .audio import AudioSequence, StateTrajectory
from .errors import ContractError, DimensionError, IntegrationError
from .networks import LSTMSpec, MLPSpec, count_params, lstm_cell, mlp_forward
from .solvers import SolverConfig, integrate
from .tensor import Tensor, concat, stack, value


@dataclass(frozen=True)
class TimeNormalization:
    training_rate_hz: float
    playback_rate_hz: float

    @property
    def dtau(self) -> float:
        return self.training_rate_hz / self.playback_rate_hz


def set_playback_rate(model, rate_hz: float) -> TimeNormalization:
    """Normalized step for playing a trained model at a new rate."""
    if not rate_hz > 0:
        raise ContractError("playback rate must be positive")
    return TimeNormalization(model.training_rate_hz, rate_hz)


class ExcitationInterpolator:
    """Linear interpolation of the excitation at solver time points.

    ``samples`` is (N,) or (B, N); queries are clamped to the sample range and
    exact at integer grid indices. ``grid_spacing`` is the sample spacing in
    normalized time (1 during training, dtau at playback).
    """

    def __init__(self, samples, grid_spacing: float = 1.0):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.size == 0:
            raise ContractError("empty excitation")
        if samples.ndim not in (1, 2):
            raise ContractError("excitation must be (N,) or (B, N)")
        self.samples = samples
        self.grid_spacing = float(grid_spacing)

    def value_at(self, tau: float):
        x = self.samples
        n = x.shape[-1]
        u = tau / self.grid_spacing
        if u <= 0.0:
            return x[..., 0]
        if u >= n - 1:
            return x[..., n - 1]
        i = int(u)
        frac = u - i
        return x[..., i] * (1.0 - frac) + x[..., i + 1] * frac


def interpolate(interp: ExcitationInterpolator, tau: float):
    return interp.value_at(tau)


@dataclass
class RunInfo:
    nonconverged: int = 0
    diverged: bool = False
    fail_step: int = -1


@dataclass
class ODENetModel:
    """Derivative network coupled to a numerical solver."""

    spec: MLPSpec
    params: list
    training_rate_hz: float
    solver: SolverConfig = field(default_factory=SolverConfig)
    include_time: bool = False

    kind = "odenet"

    def __post_init__(self):
        expect = self.spec.out_dim + 1 + (1 if self.include_time else 0)
        if self.spec.in_dim != expect:
            raise DimensionError(
                f"network input dim {self.spec.in_dim} != state_dim + excitation "
                f"(+ time) = {expect}")

    @property
    def state_dim(self):
        return self.spec.out_dim

    def param_count(self):
        return count_params(self.params)


def derivative_eval(model: ODENetModel, tau: float, y, interp: ExcitationInterpolator,
                    params=None):
    """Network evaluated on [x(tau); y] (optionally + tau); returns dy/dtau."""
    p = model.params if params is None else params
    x_t = interp.value_at(tau)
    if value(y).ndim == 2:  # batched (B, S)
        b = value(y).shape[0]
        x_col = np.broadcast_to(np.atleast_1d(x_t), (b,)).reshape(b, 1)
        cols = [x_col, y]
        if model.include_time:
            cols.append(np.full((b, 1), tau))
        inp = concat(cols, axis=1) if isinstance(y, Tensor) \
            else np.concatenate([value(c) for c in cols], axis=1)
    else:
        parts = [np.atleast_1d(np.asarray(x_t, dtype=np.float64)), y]
        if model.include_time:
            parts.append(np.asarray([tau]))
        inp = concat(parts, axis=0) if isinstance(y, Tensor) \
            else np.concatenate([value(c) for c in parts])
    return mlp_forward(model.spec, p, inp)


def forward(model: ODENetModel, x: AudioSequence, y0, solver: SolverConfig = None,
            params=None) -> StateTrajectory:
    """Reference forward pass over one sequence (pure python solver loop).

    trajectory[0] is y0; step n uses the excitation interpolated at normalized
    time n*dtau (the previous input under forward Euler).
    """
    cfg = (solver if solver is not None else model.solver)
    cfg = cfg.with_dtau(model.training_rate_hz / x.rate_hz)
    y0 = np.asarray(y0, dtype=np.float64).reshape(model.state_dim)
    interp = ExcitationInterpolator(x.samples, grid_spacing=cfg.dtau)

    def f(tau, y):
        return derivative_eval(model, tau, y, interp, params=params)

    res = integrate(f, y0, len(x) - 1 if len(x) else 0, cfg)
    return StateTrajectory(res.as_array(), x.rate_hz)


def forward_batch(model: ODENetModel, x_arr, y0_arr, dtau: float = 1.0,
                  params=None, solver: SolverConfig = None):
    """Batched forward for training; returns (IntegrationResult, interp).

    ``x_arr`` is (B, N) excitation, ``y0_arr`` (B, S) teacher-forced initial
    states. States stay (B, S) per step; stack the result for losses.
    """
    cfg = (solver if solver is not None else model.solver).with_dtau(dtau)
    x_arr = np.asarray(x_arr, dtype=np.float64)
    interp = ExcitationInterpolator(x_arr, grid_spacing=dtau)
    y0 = np.asarray(y0_arr, dtype=np.float64)

    def f(tau, y):
        return derivative_eval(model, tau, y, interp, params=params)

    return integrate(f, y0, x_arr.shape[1] - 1, cfg)


@dataclass
class STNModel:
    """Residual state network: y[n+1] = y[n] + h_tau * f([x[n+1]; y[n]])."""

    spec: MLPSpec
    params: list
    training_rate_hz: float

    kind = "stn"

    def __post_init__(self):
        if self.spec.in_dim != self.spec.out_dim + 1:
            raise DimensionError("STN input dim must be state_dim + 1")

    @property
    def state_dim(self):
        return self.spec.out_dim

    def param_count(self):
        return count_params(self.params)


def stn_forward(model: STNModel, x: AudioSequence, y0, h_tau: float = None
                ) -> StateTrajectory:
    """Sequence forward pass with the current-input/previous-output update."""
    if h_tau is None:
        h_tau = model.training_rate_hz / x.rate_hz
    y0 = np.asarray(y0, dtype=np.float64).reshape(model.state_dim)
    res = stn_forward_batch(model, x.samples[None, :], y0[None, :], h_tau)
    states = np.stack([value(s)[0] for s in res])
    return StateTrajectory(states, x.rate_hz)


def stn_forward_batch(model: STNModel, x_arr, y0_arr, h_tau: float = 1.0,
                      params=None):
    """Batched STN unroll; returns the list of per-step (B, S) states."""
    p = model.params if params is None else params
    x_arr = np.asarray(x_arr, dtype=np.float64)
    y = np.asarray(y0_arr, dtype=np.float64)
    states = [y]
    n = x_arr.shape[1]
    for step in range(n - 1):
        xin = x_arr[:, step + 1: step + 2]
        inp = concat([xin, y], axis=1) if isinstance(y, Tensor) \
            else np.concatenate([xin, y], axis=1)
        d = mlp_forward(model.spec, p, inp)
        y = y + h_tau * d
        yv = value(y)
        if not np.all(np.isfinite(yv)) or np.max(np.abs(yv)) > 1e6:
            raise IntegrationError(f"STN state diverged at step {step + 1}",
                                   step=step + 1)
        states.append(y)
    return states


@dataclass
class LSTMModel:
    """LSTM baseline; learns a fixed time step implicitly (no dtau parameter)."""

    spec: LSTMSpec
    params: list
    training_rate_hz: float

    kind = "lstm"

    @property
    def state_dim(self):
        return self.spec.out_dim

    def param_count(self):
        return count_params(self.params)


def lstm_forward_seq(model: LSTMModel, x: AudioSequence) -> StateTrajectory:
    """Whole-sequence inference from a zero hidden state; one output per sample."""
    out, _ = lstm_forward_batch(model, x.samples[None, :])
    states = np.stack([value(o)[0] for o in out])
    return StateTrajectory(states, x.rate_hz)


def lstm_forward_batch(model: LSTMModel, x_arr, state=None, params=None):
    """Batched LSTM over (B, L) samples; returns (per-step outputs, (h, c)).

    ``state`` carries (h, c) across subsequences during truncated BPTT; when
    None, both start at zero (sequence start).
    """
    p = model.params if params is None else params
    x_arr = np.asarray(x_arr, dtype=np.float64)
    b, n = x_arr.shape
    hs = model.spec.hidden_size
    if state is None:
        h = np.zeros((b, hs))
        c = np.zeros((b, hs))
    else:
        h, c = state
    hs_list = []
    for step in range(n):
        h, c = lstm_cell(model.spec, p, x_arr[:, step: step + 1], h, c)
        hs_list.append(h)
    stacked = stack(hs_list, axis=0) if isinstance(h, Tensor) \
        else np.stack([value(v) for v in hs_list])
    w_head, b_head = p[4], p[5]
    flat = stacked.reshape(n * b, hs)
    out = (flat @ w_head + b_head).reshape(n, b, model.spec.out_dim)
    return out, (h, c)


def _run_odenet(model: ODENetModel, x: AudioSequence, y0) -> tuple:
    dtau = model.training_rate_hz / x.rate_hz
    theta, sizes, use_bias, act_id = _kernels.pack_mlp(model.spec, model.params)
    traj, nonconv, failed = _kernels.odenet_run(
        theta, sizes, use_bias, act_id, np.ascontiguousarray(x.samples),
        np.asarray(y0, dtype=np.float64).reshape(model.state_dim), dtau,
        _kernels.SCHEME_IDS[model.solver.scheme], model.solver.implicit_max_iters,
        model.solver.implicit_tol, model.solver.abm_order,
        1 if model.include_time else 0)
    return traj, RunInfo(nonconverged=int(nonconv), diverged=failed >= 0,
                         fail_step=int(failed))


def run_model(model, x: AudioSequence, y0=None) -> tuple:
    """Fast inference path; returns (StateTrajectory, RunInfo).

    Divergence is reported through RunInfo rather than raised: evaluation
    flags the row and, for segmented mode, may continue.
    """
    if y0 is None:
        y0 = np.zeros(model.state_dim)
    if model.kind == "odenet":
        if _kernels.HAVE_NUMBA:
            traj, info = _run_odenet(model, x, y0)
            return StateTrajectory(traj, x.rate_hz), info
        try:
            return forward(model, x, y0), RunInfo()
        except IntegrationError as err:
            n = len(x)
            return (StateTrajectory(np.zeros((n, model.state_dim)), x.rate_hz),
                    RunInfo(diverged=True, fail_step=err.step or -1))
    if model.kind == "stn":
        h_tau = model.training_rate_hz / x.rate_hz
        if _kernels.HAVE_NUMBA:
            theta, sizes, use_bias, act_id = _kernels.pack_mlp(model.spec, model.params)
            traj, failed = _kernels.stn_run(
                theta, sizes, use_bias, act_id, np.ascontiguousarray(x.samples),
                np.asarray(y0, dtype=np.float64).reshape(model.state_dim), h_tau)
            return (StateTrajectory(traj, x.rate_hz),
                    RunInfo(diverged=failed >= 0, fail_step=int(failed)))
        try:
            return stn_forward(model, x, y0, h_tau), RunInfo()
        except IntegrationError as err:
            n = len(x)
            return (StateTrajectory(np.zeros((n, model.state_dim)), x.rate_hz),
                    RunInfo(diverged=True, fail_step=err.step or -1))
    if model.kind == "lstm":
        if _kernels.HAVE_NUMBA:
            p = [np.ascontiguousarray(np.asarray(q, dtype=np.float64))
                 for q in model.params]
            out, _, _ = _kernels.lstm_run(p[0], p[1], p[2], p[3], p[4], p[5],
                                          np.ascontiguousarray(x.samples),
                                          np.zeros(model.spec.hidden_size),
                                          np.zeros(model.spec.hidden_size))
            return StateTrajectory(out, x.rate_hz), RunInfo()
        return lstm_forward_seq(model, x), RunInfo()
    raise ContractError(f"unknown model kind {model.kind!r}")
