"""Versioned checkpoint files (JSON, fixed key order for diffability)."""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import AudioIOError, ContractError
from .networks import LSTMSpec, MLPSpec, init_lstm_params, init_mlp_params
from .odenet import LSTMModel, ODENetModel, STNModel
from .solvers import SolverConfig

FORMAT_VERSION = 1


def _param_shapes_mlp(spec: MLPSpec):
    shapes = []
    for i in range(spec.n_layers):
        shapes.append((spec.layer_sizes[i], spec.layer_sizes[i + 1]))
        if spec.bias[i]:
            shapes.append((spec.layer_sizes[i + 1],))
    return shapes


def _param_shapes_lstm(spec: LSTMSpec):
    h, i, o = spec.hidden_size, spec.input_size, spec.out_dim
    return [(i, 4 * h), (h, 4 * h), (4 * h,), (4 * h,), (h, o), (o,)]


def save_checkpoint(path, model) -> None:
    """Write a model checkpoint; keys are emitted in a fixed order."""
    if model.kind in ("odenet", "stn"):
        spec_doc = {
            "layer_sizes": list(model.spec.layer_sizes),
            "bias": [bool(b) for b in model.spec.bias],
            "state_dim": model.state_dim,
            "include_time": bool(getattr(model, "include_time", False)),
        }
        activation = model.spec.activation
        scheme = model.solver.scheme if model.kind == "odenet" else None
    elif model.kind == "lstm":
        spec_doc = {
            "hidden_size": model.spec.hidden_size,
            "input_size": model.spec.input_size,
            "out_dim": model.spec.out_dim,
        }
        activation = None
        scheme = None
    else:
        raise ContractError(f"cannot checkpoint model kind {model.kind!r}")
    doc = {
        "format_version": FORMAT_VERSION,
        "model_kind": model.kind,
        "spec": spec_doc,
        "activation": activation,
        "parameters": [np.asarray(p, dtype=np.float64).ravel().tolist()
                       for p in model.params],
        "training_sample_rate_hz": float(model.training_rate_hz),
        "solver_scheme": scheme,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path):
    """Rebuild a model from a checkpoint file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise AudioIOError(f"checkpoint not found: {path}", path=path) from None
    except (OSError, json.JSONDecodeError) as err:
        raise AudioIOError(f"unreadable checkpoint {path}: {err}", path=path) from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise AudioIOError(
            f"unsupported checkpoint format {doc.get('format_version')!r}", path=path)
    kind = doc["model_kind"]
    rate = float(doc["training_sample_rate_hz"])
    flats = [np.asarray(p, dtype=np.float64) for p in doc["parameters"]]

    if kind in ("odenet", "stn"):
        spec = MLPSpec(tuple(doc["spec"]["layer_sizes"]), doc["activation"],
                       tuple(doc["spec"]["bias"]))
        shapes = _param_shapes_mlp(spec)
    elif kind == "lstm":
        spec = LSTMSpec(doc["spec"]["hidden_size"], doc["spec"]["input_size"],
                        doc["spec"]["out_dim"])
        shapes = _param_shapes_lstm(spec)
    else:
        raise AudioIOError(f"unknown model kind {kind!r} in {path}", path=path)
    if len(flats) != len(shapes):
        raise AudioIOError(
            f"checkpoint {path} holds {len(flats)} arrays, expected {len(shapes)}",
            path=path)
    params = []
    for flat, shape in zip(flats, shapes):
        if flat.size != int(np.prod(shape)):
            raise AudioIOError(f"parameter size mismatch in {path}", path=path)
        params.append(flat.reshape(shape))

    if kind == "odenet":
        solver = SolverConfig(scheme=doc["solver_scheme"] or "fe")
        return ODENetModel(spec, params, rate, solver,
                           include_time=bool(doc["spec"].get("include_time", False)))
    if kind == "stn":
        return STNModel(spec, params, rate)
    return LSTMModel(spec, params, rate)


#: unrolled derivative networks start near a zero field (see init_mlp_params)
UNROLLED_FINAL_SCALE = 0.01


def init_model(kind: str, spec, training_rate_hz: float, seed: int,
               solver: SolverConfig = None, include_time: bool = False):
    """Fresh model with seed-deterministic parameters."""
    if kind == "odenet":
        params = init_mlp_params(spec, seed, final_layer_scale=UNROLLED_FINAL_SCALE)
        return ODENetModel(spec, params, training_rate_hz,
                           solver or SolverConfig(), include_time=include_time)
    if kind == "stn":
        params = init_mlp_params(spec, seed, final_layer_scale=UNROLLED_FINAL_SCALE)
        return STNModel(spec, params, training_rate_hz)
    if kind == "lstm":
        return LSTMModel(spec, init_lstm_params(spec, seed), training_rate_hz)
    raise ContractError(f"unknown model kind {kind!r}")
