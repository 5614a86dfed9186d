"""Named model presets, one per benchmarked architecture row."""

from __future__ import annotations

from dataclasses import dataclass

from .checkpoint import init_model
from .errors import ContractError
from .networks import LSTMSpec, MLPSpec
from .solvers import SolverConfig


@dataclass(frozen=True)
class Preset:
    name: str
    kind: str                # odenet | stn | lstm
    circuit: str             # clipper1 | clipper2
    loss_mode: str           # combined | esr
    scheme: str = None       # solver scheme for odenet
    layer_sizes: tuple = None
    bias: tuple = None
    activation: str = None
    hidden_size: int = None

    @property
    def state_dim(self):
        return 1 if self.circuit == "clipper1" else 2


PRESETS = {
    "odenet9-fe": Preset("odenet9-fe", "odenet", "clipper1", "combined",
                         scheme="fe", layer_sizes=(2, 9, 9, 1), activation="relu"),
    "odenet9-ia": Preset("odenet9-ia", "odenet", "clipper1", "combined",
                         scheme="abm", layer_sizes=(2, 9, 9, 1), activation="selu"),
    "stn3x4": Preset("stn3x4", "stn", "clipper1", "combined",
                     layer_sizes=(2, 4, 4, 4, 1),
                     bias=(False, True, False, False), activation="tanh"),
    "lstm8": Preset("lstm8", "lstm", "clipper1", "combined", hidden_size=8),
    "odenet20-rk4": Preset("odenet20-rk4", "odenet", "clipper2", "esr",
                           scheme="rk4", layer_sizes=(3, 20, 20, 2),
                           activation="softsign"),
    "odenet30-fe": Preset("odenet30-fe", "odenet", "clipper2", "esr",
                          scheme="fe", layer_sizes=(3, 30, 30, 2),
                          activation="softsign"),
    "odenet30-tr": Preset("odenet30-tr", "odenet", "clipper2", "esr",
                          scheme="tr", layer_sizes=(3, 30, 30, 2),
                          activation="softsign"),
    "odenet30-rk4": Preset("odenet30-rk4", "odenet", "clipper2", "esr",
                           scheme="rk4", layer_sizes=(3, 30, 30, 2),
                           activation="softsign"),
    "stn2x30": Preset("stn2x30", "stn", "clipper2", "esr",
                      layer_sizes=(3, 30, 30, 2), activation="tanh"),
    "lstm16": Preset("lstm16", "lstm", "clipper2", "esr", hidden_size=16),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ContractError(
            f"unknown model preset {name!r}; pick one of {sorted(PRESETS)}") from None


def build_preset(name: str, training_rate_hz: float = 44100.0, seed: int = 0):
    """Instantiate a preset with seed-deterministic parameters.

    Returns (model, preset).
    """
    p = get_preset(name)
    if p.kind == "lstm":
        spec = LSTMSpec(hidden_size=p.hidden_size, input_size=1,
                        out_dim=p.state_dim)
        return init_model("lstm", spec, training_rate_hz, seed), p
    spec = MLPSpec(p.layer_sizes, activation=p.activation, bias=p.bias)
    solver = SolverConfig(scheme=p.scheme) if p.scheme else None
    return init_model(p.kind, spec, training_rate_hz, seed, solver=solver), p
