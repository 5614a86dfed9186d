"""Command-line entry point: synthesize, train, process, evaluate, visualize.

Exit codes are a stable contract: 0 success, 2 configuration error, 3 I/O
error, 4 training abort. Every run writes a resolved-config copy next to its
outputs for provenance.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .audio import AudioSequence
from .checkpoint import load_checkpoint, save_checkpoint
from .circuits import make_circuit
from .data import load_wav, write_wav
from .dataset import load_dataset, synthesize_dataset
from .errors import AudioIOError, ContractError, TrainingError, VaclipError
from .evaluation import (DEFAULT_RATES, aliasing_report, derivative_field,
                         field_is_odd_symmetric, rate_sweep, write_eval_csv,
                         write_field_csv, write_spectrum_csv)
from .odenet import run_model
from .presets import build_preset, get_preset
from .signals import make_program
from .training import TrainSchedule, fit

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_TRAINING = 4


def _write_resolved_config(out_dir, name, config) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w") as fh:
        json.dump(config, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ContractError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ContractError(f"bad config {path}: {err}") from None


def _merge(config, args, keys):
    """Flags beat config file values; config beats defaults."""
    out = dict(config)
    for key in keys:
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            out[key] = val
    return out


def cmd_synthesize(args) -> int:
    config = _merge(_load_config(args.config), args,
                    ["circuit", "duration", "rate", "seed", "oversample",
                     "piece_seconds", "out"])
    config.setdefault("circuit", "clipper1")
    config.setdefault("duration", 60.0)
    config.setdefault("rate", 44100.0)
    config.setdefault("seed", 0)
    config.setdefault("oversample", 32)
    config.setdefault("piece_seconds", 3.0)
    if "out" not in config:
        raise ContractError("synthesize needs --out DIR")
    circuit = make_circuit(config["circuit"])
    pieces = make_program(float(config["duration"]), float(config["rate"]),
                          int(config["seed"]), piece_s=float(config["piece_seconds"]))
    manifest = synthesize_dataset(circuit, pieces, float(config["rate"]),
                                  config["out"], oversample=int(config["oversample"]),
                                  seed=int(config["seed"]))
    _write_resolved_config(config["out"], "synthesize_config.json", config)
    print(f"wrote {len(manifest['entries'])} pieces to {config['out']} "
          f"(oversample {manifest['oversample']})")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _merge(_load_config(args.config), args,
                    ["dataset", "model", "seed", "out", "lr", "decay",
                     "max_epochs", "patience", "batch_size", "stop_below"])
    for req in ("dataset", "model", "out"):
        if req not in config:
            raise ContractError(f"train needs --{req}")
    config.setdefault("seed", 0)
    config.setdefault("lr", 1e-3)
    config.setdefault("decay", 0.999)
    config.setdefault("max_epochs", 100)
    config.setdefault("patience", 50)
    config.setdefault("batch_size", 32)
    dataset = load_dataset(config["dataset"])
    preset = get_preset(config["model"])
    if preset.circuit != dataset.manifest["circuit"]:
        raise ContractError(
            f"preset {preset.name} targets {preset.circuit}, dataset holds "
            f"{dataset.manifest['circuit']}")
    model, _ = build_preset(config["model"], dataset.rate_hz, int(config["seed"]))
    schedule = TrainSchedule(
        initial_lr=float(config["lr"]), decay=float(config["decay"]),
        max_epochs=int(config["max_epochs"]), patience=int(config["patience"]),
        batch_size=int(config["batch_size"]),
        stop_below=(float(config["stop_below"])
                    if config.get("stop_below") is not None else None))
    out_dir = config["out"]
    os.makedirs(out_dir, exist_ok=True)
    result = fit(model, dataset, schedule, preset.loss_mode, int(config["seed"]),
                 log=print if args.verbose else None)
    model.params = result.best_params
    save_checkpoint(os.path.join(out_dir, "checkpoint.json"), model)
    with open(os.path.join(out_dir, "history.csv"), "w") as fh:
        fh.write("epoch,train_loss,val_loss,lr\n")
        for row in result.history:
            fh.write(f"{row['epoch']},{row['train_loss']!r},"
                     f"{row['val_loss']!r},{row['lr']!r}\n")
    _write_resolved_config(out_dir, "train_config.json", config)
    print(f"trained {preset.name} for {result.epochs_run} epochs, "
          f"best validation loss {result.best_val:.6f}")
    return EXIT_OK


def cmd_process(args) -> int:
    if args.rate is not None and args.rate <= 0:
        raise ContractError("--rate must be positive")
    model = load_checkpoint(args.checkpoint)
    seq = load_wav(args.input)
    rate = float(args.rate) if args.rate is not None else seq.rate_hz
    pred, info = run_model(model, AudioSequence(seq.samples, rate))
    if info.diverged:
        print(f"warning: model diverged at sample {info.fail_step}",
              file=sys.stderr)
    write_wav(args.output, pred.output.astype(np.float32), rate)
    print(f"wrote {args.output} ({len(pred.output)} samples at {rate:g} Hz)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    dataset = load_dataset(args.dataset)
    rates = [float(r) for r in args.rates.split(",")] if args.rates \
        else list(DEFAULT_RATES)
    rows = []
    for path in args.checkpoint:
        model = load_checkpoint(path)
        label = os.path.splitext(os.path.basename(path))[0]
        rows.extend(rate_sweep(model, dataset, rates=rates,
                               segmented=args.segmented, label=label))
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, "eval_report.csv")
    write_eval_csv(rows, out_csv)
    _write_resolved_config(args.out, "evaluate_config.json", {
        "checkpoints": list(args.checkpoint), "dataset": args.dataset,
        "rates": rates, "segmented": bool(args.segmented)})
    for r in rows:
        status = "diverged" if r.diverged else f"SDR {r.sdr_db:6.1f} dB"
        print(f"{r.model} @ {r.test_rate_hz:8.0f} Hz: {status}")
    print(f"wrote {out_csv}")
    return EXIT_OK


def cmd_visualize(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    if args.checkpoint:
        target = load_checkpoint(args.checkpoint)
        circuit = make_circuit("clipper1" if target.state_dim == 1 else "clipper2")
        tag = os.path.splitext(os.path.basename(args.checkpoint))[0]
    else:
        target = make_circuit(args.oracle)
        circuit = target
        tag = args.oracle

    wrote = []
    if args.field:
        axis = np.linspace(-1.0, 1.0, args.resolution)
        grid = derivative_field(target, axis, axis, y2_fixed=args.y2)
        if args.verify_symmetry:
            if not hasattr(target, "name"):
                raise ContractError("--verify-symmetry applies to oracle fields")
            if not field_is_odd_symmetric(grid):
                raise ContractError("oracle field failed the odd-symmetry check")
        path = os.path.join(args.out, f"field_{tag}_y2_{args.y2:g}.csv")
        write_field_csv(grid, path)
        wrote.append(path)
    if args.spectrum:
        if not hasattr(target, "kind"):
            raise ContractError("--spectrum needs a model checkpoint")
        rates = [float(r) for r in args.rates.split(",")] if args.rates \
            else list(DEFAULT_RATES)
        for row in aliasing_report(target, circuit, rates=rates):
            path = os.path.join(args.out, f"spectrum_{tag}_{row.rate_hz:g}hz.csv")
            write_spectrum_csv(row, path)
            wrote.append(path)
            flag = " ALIASING" if row.flagged else ""
            print(f"rate {row.rate_hz:8.0f}: top-octave excess "
                  f"{row.excess_db:+6.1f} dB{flag}")
    if not wrote:
        raise ContractError("pick --field and/or --spectrum")
    _write_resolved_config(args.out, "visualize_config.json", {
        "target": args.checkpoint or args.oracle, "field": bool(args.field),
        "spectrum": bool(args.spectrum), "y2": args.y2,
        "resolution": args.resolution})
    for p in wrote:
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vaclip",
        description="Learn and evaluate diode-clipper circuit ODEs from signal data")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="render a synthetic dataset with "
                                          "oracle targets")
    p.add_argument("--config")
    p.add_argument("--circuit", choices=["clipper1", "clipper2"])
    p.add_argument("--duration", type=float, help="total seconds of material")
    p.add_argument("--rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--oversample", type=int)
    p.add_argument("--piece-seconds", type=float, dest="piece_seconds")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_synthesize)

    p = sub.add_parser("train", help="train a preset model on a dataset")
    p.add_argument("--config")
    p.add_argument("--dataset")
    p.add_argument("--model")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--stop-below", type=float, dest="stop_below")
    p.add_argument("--out")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("process", help="run audio through a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--rate", type=float, help="playback rate override (Hz)")
    p.set_defaults(fn=cmd_process)

    p = sub.add_parser("evaluate", help="multi-rate SDR report against the oracle")
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--rates", help="comma-separated rates in Hz")
    p.add_argument("--segmented", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("visualize", help="derivative-field / spectrum CSV artifacts")
    p.add_argument("--checkpoint")
    p.add_argument("--oracle", choices=["clipper1", "clipper2"])
    p.add_argument("--field", action="store_true")
    p.add_argument("--spectrum", action="store_true")
    p.add_argument("--y2", type=float, default=0.0)
    p.add_argument("--resolution", type=int, default=101)
    p.add_argument("--rates")
    p.add_argument("--verify-symmetry", action="store_true", dest="verify_symmetry")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_visualize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "visualize" and not args.checkpoint and not args.oracle:
        print("error: visualize needs --checkpoint or --oracle", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except ContractError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (AudioIOError, OSError) as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO
    except TrainingError as err:
        print(f"training aborted: {err}", file=sys.stderr)
        return EXIT_TRAINING
    except VaclipError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
