"""Teacher-forced training: Adam, exponential LR decay, early stopping.

Gradients are taken through the unrolled solver (discretize-then-optimize),
including through however many fixed-point iterations the implicit schemes
actually performed. Each subsequence gets one gradient step; its initial state
is the ground-truth target at the sample just before it.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import SegmentationConfig, batch_sequences, cut_sequences
from .errors import IntegrationError, TrainingError
from .losses import LOSS_MODES
from .odenet import (forward_batch, lstm_forward_batch, run_model,
                     stn_forward_batch)
from .tensor import GradientTape, backward, stack, value


@dataclass
class OptimizerState:
    """Adam first/second moment accumulators, one pair per parameter array."""

    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw):
        return cls(m=[np.zeros_like(np.asarray(p)) for p in params],
                   v=[np.zeros_like(np.asarray(p)) for p in params], **kw)


def adam_step(params, grads, opt: OptimizerState, lr: float):
    """Bias-corrected Adam update; returns the new parameter list."""
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {i}")
    opt.step += 1
    bc1 = 1.0 - opt.beta1 ** opt.step
    bc2 = 1.0 - opt.beta2 ** opt.step
    new = []
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        m[...] = opt.beta1 * m + (1.0 - opt.beta1) * g
        v[...] = opt.beta2 * v + (1.0 - opt.beta2) * g * g
        new.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps))
    return new


def clip_gradients(grads, max_norm: float):
    """Global-norm gradient clipping; returns (grads, norm)."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm and total > max_norm:
        scale = max_norm / total
        grads = [g * scale for g in grads]
    return grads, total


@dataclass
class TrainSchedule:
    initial_lr: float = 1e-3
    decay: float = 0.999
    max_epochs: int = 100
    patience: int = 50
    validate_every: int = 1
    batch_size: int = 32
    clip_norm: float = 1.0
    stop_below: float = None  # optional: stop once validation loss is this low
    max_skip_fraction: float = 0.01

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise TrainingError("initial_lr must be positive")
        if not 0 < self.decay <= 1:
            raise TrainingError("decay must be in (0, 1]")
        if self.patience < 1:
            raise TrainingError("patience must be >= 1")

    def lr_at(self, epoch: int) -> float:
        return self.initial_lr * self.decay ** epoch


def _loss_breakdown(loss_mode, target_t, out, mask_t):
    """Scalar loss from a (time, batch, state) trajectory (tensor or array)."""
    n, b, s_dim = target_t.shape
    if loss_mode == "combined":
        return LOSS_MODES[loss_mode](target_t[:, :, 0], out[:, :, 0], mask_t)
    flat_mask = np.repeat(mask_t[:, :, None], s_dim, axis=2).reshape(n, b * s_dim)
    return LOSS_MODES[loss_mode](target_t.reshape(n, b * s_dim),
                                 out.reshape(n, b * s_dim), flat_mask)


def _loss_value_and_grad(loss_mode, target_t, out_np, mask_t):
    """Loss value and its gradient w.r.t. the raw output trajectory."""
    tape = GradientTape()
    leaf = tape.watch(out_np)
    breakdown = _loss_breakdown(loss_mode, target_t, leaf, mask_t)
    grads = backward(tape, breakdown.total)
    return float(value(breakdown.total)), grads[0]


def _unpack_flat(params, flat):
    out = []
    k = 0
    for p in params:
        p = np.asarray(p)
        out.append(flat[k: k + p.size].reshape(p.shape))
        k += p.size
    return out


def subsequence_gradients(model, loss_mode, x, target, y0, mask):
    """Loss and parameter gradients for one teacher-forced subsequence batch.

    Uses the fused numba unroll for forward-Euler ODENet and STN; any other
    configuration goes through the taped solver (identical math, slower).
    """
    target_t = np.ascontiguousarray(np.transpose(target, (1, 0, 2)))
    mask_t = np.ascontiguousarray(mask.T)
    fast = (_kernels.HAVE_NUMBA and model.kind in ("odenet", "stn")
            and not getattr(model, "include_time", False)
            and (model.kind == "stn" or model.solver.scheme == "fe"))
    if fast:
        theta, sizes, use_bias, act_id = _kernels.pack_mlp(model.spec, model.params)
        shift = 0 if model.kind == "odenet" else 1
        x_c = np.ascontiguousarray(x)
        traj, acts, failed = _kernels.train_unroll_forward(
            theta, sizes, use_bias, act_id, x_c,
            np.ascontiguousarray(y0), 1.0, shift)
        if failed >= 0:
            raise IntegrationError("unrolled forward diverged", step=int(failed))
        loss_val, g_traj = _loss_value_and_grad(loss_mode, target_t, traj, mask_t)
        g_theta, _ = _kernels.train_unroll_backward(
            theta, sizes, use_bias, act_id, x_c, traj, acts,
            np.ascontiguousarray(g_traj), 1.0, shift)
        return loss_val, _unpack_flat(model.params, g_theta)

    tape = GradientTape()
    watched = tape.watch_all(model.params)
    if model.kind == "odenet":
        res = forward_batch(model, x, y0, dtau=1.0, params=watched)
        out = stack(res.states, axis=0)  # (n, B, S)
    elif model.kind == "stn":
        states = stn_forward_batch(model, x, y0, h_tau=1.0, params=watched)
        out = stack(states, axis=0)
    else:
        raise TrainingError(f"no teacher-forced unroll for kind {model.kind!r}")
    breakdown = _loss_breakdown(loss_mode, target_t, out, mask_t)
    grads = backward(tape, breakdown.total)
    return float(value(breakdown.total)), grads


def lstm_subsequence_gradients(model, loss_mode, x, target, mask, state):
    """Truncated-BPTT gradient step for the LSTM; hidden state carries on."""
    tape = GradientTape()
    watched = tape.watch_all(model.params)
    out, new_state = lstm_forward_batch(model, x, state=state, params=watched)
    target_t = np.ascontiguousarray(np.transpose(target, (1, 0, 2)))
    mask_t = np.ascontiguousarray(mask.T)
    breakdown = _loss_breakdown(loss_mode, target_t, out, mask_t)
    grads = backward(tape, breakdown.total)
    detached = (value(new_state[0]).copy(), value(new_state[1]).copy())
    return float(value(breakdown.total)), grads, detached


def train_epoch(model, batches, loss_mode: str, opt: OptimizerState, lr: float,
                clip_norm: float = 1.0, max_skip_fraction: float = 0.01):
    """One pass over the minibatches; a gradient step per subsequence.

    Subsequences whose forward pass diverges are skipped and counted; an
    epoch exceeding ``max_skip_fraction`` aborts with diagnostics.
    """
    losses = []
    skipped = 0
    total = 0
    for batch in batches:
        lstm_state = None
        for k in range(batch.n_subsequences):
            x, target, y0, mask = batch.subsequence(k)
            if not mask.any():
                continue
            total += 1
            try:
                if model.kind == "lstm":
                    loss_val, grads, lstm_state = lstm_subsequence_gradients(
                        model, loss_mode, x, target, mask, lstm_state)
                else:
                    loss_val, grads = subsequence_gradients(
                        model, loss_mode, x, target, y0, mask)
            except IntegrationError:
                skipped += 1
                if model.kind == "lstm":
                    lstm_state = None
                continue
            grads, _ = clip_gradients(grads, clip_norm)
            model.params = adam_step(model.params, grads, opt, lr)
            losses.append(loss_val)
    if total and skipped / total > max_skip_fraction:
        raise TrainingError(
            f"{skipped}/{total} subsequences diverged this epoch; "
            "lower the learning rate or inspect the data")
    return (float(np.mean(losses)) if losses else float("nan")), skipped, total


def validate(model, val_pairs, loss_mode: str) -> float:
    """Loss over held-out pieces, each run from its exact zero initial state."""
    outs = []
    tgts = []
    for x, traj in val_pairs:
        pred, info = run_model(model, x)
        if info.diverged:
            return float("inf")
        take = min(model.state_dim, traj.state_dim)
        outs.append(pred.states[:, :take])
        tgts.append(traj.states[:, :take])
    out = np.concatenate(outs, axis=0)
    tgt = np.concatenate(tgts, axis=0)
    if loss_mode == "combined":
        return float(value(LOSS_MODES[loss_mode](tgt[:, 0], out[:, 0]).total))
    return float(value(LOSS_MODES[loss_mode](tgt, out).total))


@dataclass
class FitResult:
    best_params: list
    best_val: float
    history: list = field(default_factory=list)  # {epoch, train_loss, val_loss, lr}
    epochs_run: int = 0
    stopped_early: bool = False


def fit(model, dataset, schedule: TrainSchedule, loss_mode: str, seed: int,
        seg_cfg: SegmentationConfig = None, log=None) -> FitResult:
    """Full training loop; returns the best-validation checkpoint and history.

    Fully deterministic for a fixed (seed, schedule, dataset): batch order is
    derived from the seed and the epoch index only.
    """
    seg_cfg = seg_cfg or SegmentationConfig()
    train_seqs = cut_sequences(dataset.split_pairs("train"), seg_cfg)
    val_pairs = dataset.split_pairs("val") or dataset.split_pairs("train")
    if not train_seqs:
        raise TrainingError("dataset has no training sequences")
    opt = OptimizerState.for_params(model.params)
    best_val = float("inf")
    best_params = [np.asarray(p).copy() for p in model.params]
    result = FitResult(best_params=best_params, best_val=best_val)
    since_best = 0
    for epoch in range(schedule.max_epochs):
        lr = schedule.lr_at(epoch)
        order_seed = int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])
        batches = batch_sequences(train_seqs, seg_cfg, schedule.batch_size,
                                  seed=order_seed)
        train_loss, skipped, total = train_epoch(
            model, batches, loss_mode, opt, lr,
            clip_norm=schedule.clip_norm,
            max_skip_fraction=schedule.max_skip_fraction)
        val_loss = float("nan")
        if (epoch + 1) % schedule.validate_every == 0:
            val_loss = validate(model, val_pairs, loss_mode)
            if val_loss < best_val:
                best_val = val_loss
                result.best_params = [np.asarray(p).copy() for p in model.params]
                since_best = 0
            else:
                since_best += 1
        result.history.append({"epoch": epoch, "train_loss": train_loss,
                               "val_loss": val_loss, "lr": lr})
        result.epochs_run = epoch + 1
        if log:
            log(f"epoch {epoch}: train {train_loss:.6f} val {val_loss:.6f} "
                f"lr {lr:.2e} skipped {skipped}/{total}")
        if schedule.stop_below is not None and val_loss <= schedule.stop_below:
            result.stopped_early = True
            break
        if since_best >= schedule.patience:
            result.stopped_early = True
            break
    result.best_val = best_val
    return result
