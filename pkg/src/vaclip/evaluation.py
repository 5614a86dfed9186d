"""Evaluation harness: long/segmented test runs, multi-rate SDR sweeps,
derivative-field grids, and aliasing spectra."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioSequence, StateTrajectory
from .circuits import (circuit_rhs, clipper1_rhs, clipper2_rhs,
                       reference_integrate, required_oversample)
from .data import resample
from .errors import ContractError
from .losses import dc_loss, esr, magnitude_spectrum, sdr, spectrum_frequencies
from .networks import mlp_forward
from .odenet import run_model
from .signals import harmonic_tone

DEFAULT_RATES = (22050.0, 44100.0, 48000.0, 192000.0)


@dataclass
class EvalRow:
    model: str
    solver: str
    train_rate_hz: float
    test_rate_hz: float
    sdr_db: float
    esr: float
    dc: float
    runtime_s: float
    nonconverged: int = 0
    diverged: bool = False


def _metrics_row(model, label, rate, target_audio, output_audio, runtime,
                 nonconverged, diverged) -> EvalRow:
    solver = model.solver.scheme if model.kind == "odenet" else "-"
    if diverged:
        return EvalRow(label, solver, model.training_rate_hz, rate,
                       float("nan"), float("nan"), float("nan"), runtime,
                       nonconverged, True)
    return EvalRow(label, solver, model.training_rate_hz, rate,
                   sdr(target_audio, output_audio),
                   float(esr(target_audio, output_audio)),
                   float(dc_loss(target_audio, output_audio)),
                   runtime, nonconverged, False)


def evaluate_long(model, x: AudioSequence, target: StateTrajectory,
                  label: str = "model") -> EvalRow:
    """One forward pass over the whole test stream from a zero initial state."""
    t0 = time.perf_counter()
    pred, info = run_model(model, x)
    runtime = time.perf_counter() - t0
    return _metrics_row(model, label, x.rate_hz, target.output, pred.output,
                        runtime, info.nonconverged, info.diverged)


def evaluate_segmented(model, x: AudioSequence, target: StateTrajectory,
                       segment_len: int = 22050, label: str = "model") -> EvalRow:
    """Per-segment runs with teacher-forced segment-initial states, concatenated.

    With ``segment_len >= len(x)`` this equals :func:`evaluate_long` exactly.
    """
    if segment_len <= 0:
        raise ContractError("segment_len must be positive")
    n = len(x)
    outs = []
    nonconverged = 0
    diverged = False
    t0 = time.perf_counter()
    for s in range(0, n, segment_len):
        stop = min(s + segment_len, n)
        seg = AudioSequence(x.samples[s:stop], x.rate_hz)
        y0 = target.states[s - 1] if s > 0 else np.zeros(target.state_dim)
        pred, info = run_model(model, seg, y0=y0[:model.state_dim])
        nonconverged += info.nonconverged
        diverged = diverged or info.diverged
        outs.append(pred.output)
    runtime = time.perf_counter() - t0
    output = np.concatenate(outs)
    return _metrics_row(model, label, x.rate_hz, target.output, output,
                        runtime, nonconverged, diverged)


def rate_sweep(model, dataset, rates=DEFAULT_RATES, oversample: int = 32,
               segmented: bool = False, segment_len: int = 22050,
               label: str = "model"):
    """Evaluate at several sampling rates; ODENet/STN see the new step, LSTM not.

    Test inputs at non-native rates are resampled from the native material;
    ground truth is synthesized by the oracle natively on that resampled input
    (never by resampling targets).
    """
    circuit = dataset.circuit()
    x_native, target_native = dataset.concat_split("test")
    rows = []
    for rate in rates:
        if abs(rate - dataset.rate_hz) < 1e-6:
            x_r, target_r = x_native, target_native
        else:
            x_r = resample(x_native, rate)
            peak = float(np.max(np.abs(x_r.samples))) if len(x_r) else 0.0
            eff = max(int(oversample), required_oversample(circuit, rate, peak))
            target_r = reference_integrate(circuit, x_r, oversample=eff)
        if segmented:
            rows.append(evaluate_segmented(model, x_r, target_r,
                                           segment_len=segment_len, label=label))
        else:
            rows.append(evaluate_long(model, x_r, target_r, label=label))
    return rows


@dataclass
class FieldGrid:
    """|dy/dt| sampled over the (V_in, y1) plane at a fixed y2."""

    vin_axis: np.ndarray
    y1_axis: np.ndarray
    y2_fixed: float
    magnitudes: list          # per state channel, shape (len(y1), len(vin))
    signed: list = field(default_factory=list)  # same shapes, raw values


def derivative_field(target, vin_axis, y1_axis, y2_fixed: float = 0.0) -> FieldGrid:
    """Derivative magnitude grid for a circuit or a trained derivative network.

    Model grids are rescaled to per-second units via the training rate.
    """
    vin_axis = np.asarray(vin_axis, dtype=np.float64)
    y1_axis = np.asarray(y1_axis, dtype=np.float64)
    vv, yy = np.meshgrid(vin_axis, y1_axis)  # (ny, nx)

    if hasattr(target, "kind"):  # trained model
        if target.kind not in ("odenet", "stn"):
            raise ContractError("derivative fields exist only for derivative "
                                "networks (odenet/stn)")
        cols = [vv.ravel(), yy.ravel()]
        if target.state_dim == 2:
            cols.append(np.full(vv.size, y2_fixed))
        if getattr(target, "include_time", False):
            cols.append(np.zeros(vv.size))
        inp = np.stack(cols, axis=1)
        out = mlp_forward(target.spec, target.params, inp) * target.training_rate_hz
        signed = [out[:, k].reshape(vv.shape) for k in range(target.state_dim)]
    elif target.state_dim == 1:
        signed = [clipper1_rhs(target, vv, yy)]
    else:
        d1, d2 = clipper2_rhs(target, vv, yy, np.full_like(vv, y2_fixed))
        signed = [d1, d2]
    return FieldGrid(vin_axis, y1_axis, y2_fixed,
                     magnitudes=[np.abs(s) for s in signed], signed=signed)


def field_is_odd_symmetric(grid: FieldGrid, tol: float = 1e-9) -> bool:
    """Check f(-vin, -y1) == -f(vin, y1) on a symmetric grid (channel 0)."""
    s = grid.signed[0]
    return bool(np.allclose(s, -s[::-1, ::-1], atol=tol * np.abs(s).max()))


def sign_agreement_fraction(model, circuit, n: int = 101,
                            knee_band=(0.4, 0.7), y2_fixed: float = 0.0) -> float:
    """Fraction of grid points where the learned dy1 sign matches the oracle's.

    Points with |y1| inside the knee band are excluded (the sign flip there is
    physically ambiguous), as are points where the oracle derivative is
    numerically zero.
    """
    axis = np.linspace(-1.0, 1.0, n)
    g_model = derivative_field(model, axis, axis, y2_fixed)
    g_oracle = derivative_field(circuit, axis, axis, y2_fixed)
    sm = g_model.signed[0]
    so = g_oracle.signed[0]
    yy = np.abs(np.meshgrid(axis, axis)[1])
    keep = (yy < knee_band[0]) | (yy > knee_band[1])
    keep &= np.abs(so) > 1e-6 * np.abs(so).max()
    return float(np.mean(np.sign(sm[keep]) == np.sign(so[keep])))


@dataclass
class AliasingRow:
    rate_hz: float
    freqs: np.ndarray
    model_db: np.ndarray
    oracle_db: np.ndarray
    excess_db: float
    flagged: bool
    diverged: bool = False


def aliasing_report(model, circuit, rates=DEFAULT_RATES, f0: float = 110.0,
                    n_harmonics: int = 40, amp: float = 0.9,
                    duration_s: float = 1.5, oversample: int = 32,
                    fft_size: int = 8192, excess_threshold_db: float = 10.0):
    """Spectra of model vs oracle on a low harmonic-rich tone, per rate.

    A rate is flagged when the model's mean level in the top octave
    [rate/4, rate/2] exceeds the oracle's by more than the threshold, which
    reproduces the excess high-frequency content of under-sampled nonlinear
    models.
    """
    rows = []
    for rate in rates:
        tone = harmonic_tone(rate, f0_hz=f0, n_harmonics=n_harmonics, amp=amp,
                             duration_s=duration_s)
        eff = max(int(oversample), required_oversample(circuit, rate, amp))
        target = reference_integrate(circuit, tone, oversample=eff)
        pred, info = run_model(model, tone)
        lo = int(0.2 * len(tone))
        hi = int(0.9 * len(tone))
        oracle_db = magnitude_spectrum(target.output[lo:hi], fft_size=fft_size)
        model_db = magnitude_spectrum(pred.output[lo:hi], fft_size=fft_size)
        freqs = spectrum_frequencies(rate, fft_size)
        band = (freqs >= rate / 4.0) & (freqs <= rate / 2.0)
        excess = float(np.mean(model_db[band]) - np.mean(oracle_db[band]))
        rows.append(AliasingRow(rate, freqs, model_db, oracle_db, excess,
                                flagged=bool(excess > excess_threshold_db),
                                diverged=info.diverged))
    return rows


# -- CSV interfaces ----------------------------------------------------------

EVAL_CSV_HEADER = ("model,solver,train_rate,test_rate,sdr_db,esr,dc,"
                   "runtime_s,nonconverged,diverged")


def write_eval_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write(EVAL_CSV_HEADER + "\n")
        for r in rows:
            fh.write(f"{r.model},{r.solver},{r.train_rate_hz!r},"
                     f"{r.test_rate_hz!r},{r.sdr_db!r},{r.esr!r},{r.dc!r},"
                     f"{r.runtime_s!r},{r.nonconverged},{int(r.diverged)}\n")


def write_field_csv(grid: FieldGrid, path) -> None:
    names = ",".join(f"mag_dy{k + 1}" for k in range(len(grid.magnitudes)))
    with open(path, "w") as fh:
        fh.write(f"# y2={grid.y2_fixed!r}\n")
        fh.write(f"vin,y1,{names}\n")
        for i, y1 in enumerate(grid.y1_axis):
            for j, vin in enumerate(grid.vin_axis):
                mags = ",".join(repr(float(m[i, j])) for m in grid.magnitudes)
                fh.write(f"{float(vin)!r},{float(y1)!r},{mags}\n")


def write_spectrum_csv(row: AliasingRow, path) -> None:
    with open(path, "w") as fh:
        fh.write("frequency_hz,model_db,oracle_db\n")
        for f, m, o in zip(row.freqs, row.model_db, row.oracle_db):
            fh.write(f"{float(f)!r},{float(m)!r},{float(o)!r}\n")
