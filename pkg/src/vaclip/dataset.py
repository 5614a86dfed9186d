"""Dataset synthesis: oracle targets, WAV files, and the split manifest."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .audio import AudioSequence, StateTrajectory
from .circuits import make_circuit, reference_integrate, required_oversample
from .data import load_states, load_wav, write_wav
from .errors import AudioIOError, ContractError

MANIFEST_NAME = "manifest.json"
SPLIT_FRACTIONS = {"test": 0.2, "val": 0.16, "train": 0.64}


def assign_splits(durations, fractions=None):
    """Greedy duration balancing: each item goes to the most underfull split.

    Deterministic in the item order; ties resolve train > val > test so small
    datasets keep enough training material.
    """
    fractions = fractions or SPLIT_FRACTIONS
    names = ["train", "val", "test"]
    total = float(sum(durations))
    got = {k: 0.0 for k in names}
    out = []
    for d in durations:
        deficits = {k: fractions[k] * total - got[k] for k in names}
        pick = max(names, key=lambda k: deficits[k])
        out.append(pick)
        got[pick] += d
    return out


def synthesize_dataset(circuit, inputs, rate_hz, out_dir, oversample: int = 32,
                       seed: int = 0):
    """Render oracle targets for named input pieces and write the dataset.

    ``inputs`` is a list of (name, AudioSequence) at ``rate_hz``. The
    oversampling factor is raised to the RK4 stability floor for the observed
    peak drive. Returns the manifest dict (also written to manifest.json).
    """
    for name, seq in inputs:
        if not np.all(np.isfinite(seq.samples)):
            raise ContractError(f"non-finite samples in input piece {name!r}")
        if abs(seq.rate_hz - rate_hz) > 1e-6:
            raise ContractError(f"piece {name!r} rate {seq.rate_hz} != {rate_hz}")
    os.makedirs(out_dir, exist_ok=True)
    wav_dir = os.path.join(out_dir, "wav")
    os.makedirs(wav_dir, exist_ok=True)

    peak = max((float(np.max(np.abs(s.samples))) for _, s in inputs), default=0.0)
    eff_oversample = max(int(oversample),
                         required_oversample(circuit, rate_hz, peak))
    eff_oversample += eff_oversample % 2

    splits = assign_splits([s.duration_s for _, s in inputs])
    entries = []
    for (name, seq), split in zip(inputs, splits):
        traj = reference_integrate(circuit, seq, oversample=eff_oversample)
        input_path = os.path.join("wav", f"{name}_input.wav")
        target_path = os.path.join("wav", f"{name}_target.wav")
        try:
            write_wav(os.path.join(out_dir, input_path),
                      seq.samples.astype(np.float32), rate_hz)
            write_wav(os.path.join(out_dir, target_path),
                      traj.states.astype(np.float32), rate_hz)
        except AudioIOError:
            raise
        entries.append({
            "name": name,
            "input_path": input_path,
            "target_path": target_path,
            "split": split,
            "n_samples": len(seq),
        })

    manifest = {
        "format_version": 1,
        "circuit": circuit.name,
        "rate_hz": float(rate_hz),
        "diode_params": {
            "saturation_current": circuit.diode.saturation_current,
            "ideality": circuit.diode.ideality,
            "thermal_voltage": circuit.diode.thermal_voltage,
        },
        "input_gain": circuit.input_gain,
        "oversample": eff_oversample,
        "seed": seed,
        "entries": entries,
    }
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return manifest


@dataclass
class Dataset:
    """Loaded dataset: per-split (input, target) pieces plus circuit metadata."""

    manifest: dict
    pieces: dict  # split -> list of (name, AudioSequence, StateTrajectory)

    @property
    def rate_hz(self):
        return self.manifest["rate_hz"]

    @property
    def state_dim(self):
        return 1 if self.manifest["circuit"] == "clipper1" else 2

    def circuit(self):
        from .circuits import DiodeParams
        d = self.manifest["diode_params"]
        return make_circuit(self.manifest["circuit"],
                            DiodeParams(d["saturation_current"], d["ideality"],
                                        d["thermal_voltage"]))

    def split_pairs(self, split):
        return [(x, t) for _, x, t in self.pieces[split]]

    def concat_split(self, split):
        """Concatenated (input, target) stream for long-sequence evaluation."""
        items = self.pieces[split]
        if not items:
            raise ContractError(f"split {split!r} is empty")
        x = np.concatenate([seq.samples for _, seq, _ in items])
        t = np.concatenate([traj.states for _, _, traj in items], axis=0)
        return (AudioSequence(x, self.rate_hz), StateTrajectory(t, self.rate_hz))


def load_dataset(path) -> Dataset:
    """Read a manifest directory back into memory."""
    mpath = os.path.join(path, MANIFEST_NAME)
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise AudioIOError(f"no manifest at {mpath}", path=mpath) from None
    except (OSError, json.JSONDecodeError) as err:
        raise AudioIOError(f"bad manifest {mpath}: {err}", path=mpath) from None
    pieces = {"train": [], "val": [], "test": []}
    for e in manifest["entries"]:
        x = load_wav(os.path.join(path, e["input_path"]))
        t = load_states(os.path.join(path, e["target_path"]))
        if len(x) != e["n_samples"] or len(t) != e["n_samples"]:
            raise AudioIOError(f"piece {e['name']} length mismatch vs manifest",
                               path=path)
        pieces[e["split"]].append((e["name"], x, t))
    return Dataset(manifest=manifest, pieces=pieces)
