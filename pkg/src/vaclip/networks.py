"""Network definitions: activations, MLP, and LSTM cell with fused gradients.

The MLP forward and the LSTM cell are recorded on the tape as single fused
ops with hand-written backward passes; unrolling a solver over thousands of
samples makes per-primitive recording too slow. Fused gradients are checked
against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor, _acc, _tape_of, value

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


def _relu(x):
    return np.maximum(x, 0.0)


def _drelu(x):
    return (x > 0.0).astype(np.float64)


def _selu(x):
    return SELU_LAMBDA * np.where(x > 0.0, x, SELU_ALPHA * np.expm1(x))


def _dselu(x):
    return SELU_LAMBDA * np.where(x > 0.0, 1.0, SELU_ALPHA * np.exp(x))


def _softsign(x):
    return x / (1.0 + np.abs(x))


def _dsoftsign(x):
    d = 1.0 + np.abs(x)
    return 1.0 / (d * d)


def _tanh(x):
    return np.tanh(x)


def _dtanh(x):
    t = np.tanh(x)
    return 1.0 - t * t


ACTIVATIONS = {
    "relu": (_relu, _drelu),
    "selu": (_selu, _dselu),
    "softsign": (_softsign, _dsoftsign),
    "tanh": (_tanh, _dtanh),
}


def activation_eval(kind: str, x):
    """Apply one of the supported nonlinearities to a scalar or array."""
    try:
        fn, _ = ACTIVATIONS[kind]
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}") from None
    return fn(np.asarray(x, dtype=np.float64))


def activate(x, kind: str):
    """Activation usable on tensors (taped) or plain arrays."""
    fn, dfn = ACTIVATIONS[kind]
    if not isinstance(x, Tensor):
        return fn(x)
    out = Tensor(fn(x.data), tape=_tape_of(x))
    if out.tape is not None:
        d = dfn(x.data)

        def bwd():
            if out.grad is not None:
                _acc(x, out.grad * d)

        out.tape.record(bwd)
    return out


@dataclass(frozen=True)
class MLPSpec:
    """Feedforward net: ``layer_sizes[0]`` inputs through to ``layer_sizes[-1]`` outputs.

    The activation is applied after every layer except the last; the output
    layer is linear so derivative values are unbounded in sign and magnitude.
    ``bias`` holds one flag per weight layer (all enabled when omitted).
    """

    layer_sizes: tuple
    activation: str = "tanh"
    bias: tuple = None  # type: ignore[assignment]

    def __post_init__(self):
        ls = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", ls)
        if len(ls) < 2:
            raise ContractError("MLPSpec needs at least an input and an output size")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        bias = self.bias
        if bias is None:
            bias = tuple(True for _ in range(len(ls) - 1))
        else:
            bias = tuple(bool(b) for b in bias)
            if len(bias) != len(ls) - 1:
                raise ContractError("one bias flag per weight layer required")
        object.__setattr__(self, "bias", bias)

    @property
    def n_layers(self):
        return len(self.layer_sizes) - 1

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def param_count(self):
        n = 0
        for i in range(self.n_layers):
            fan_in, fan_out = self.layer_sizes[i], self.layer_sizes[i + 1]
            n += fan_in * fan_out + (fan_out if self.bias[i] else 0)
        return n


def init_mlp_params(spec: MLPSpec, seed: int, final_layer_scale: float = 1.0):
    """Parameter arrays ``[W0, (b0), W1, (b1), ...]``, U(±1/sqrt(fan_in)) per layer.

    ``final_layer_scale`` shrinks the output layer's draw; derivative networks
    start near a zero field so that unrolling thousands of solver steps cannot
    blow up before any training has happened.
    """
    rng = np.random.default_rng(seed)
    params = []
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.layer_sizes[i], spec.layer_sizes[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        if i == spec.n_layers - 1:
            bound *= final_layer_scale
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        if spec.bias[i]:
            params.append(rng.uniform(-bound, bound, size=fan_out))
    return params


def _split_mlp_params(spec: MLPSpec, params):
    layers = []
    k = 0
    for i in range(spec.n_layers):
        w = params[k]
        k += 1
        b = None
        if spec.bias[i]:
            b = params[k]
            k += 1
        expect = (spec.layer_sizes[i], spec.layer_sizes[i + 1])
        if value(w).shape != expect:
            raise DimensionError(
                f"layer {i} weight shape {value(w).shape}, expected {expect}")
        layers.append((w, b))
    if k != len(params):
        raise DimensionError(f"expected {k} parameter arrays, got {len(params)}")
    return layers


def mlp_forward(spec: MLPSpec, params, x):
    """Evaluate the MLP on a batch ``x`` of shape (B, in_dim) or a 1-D vector.

    Accepts plain arrays (pure inference) or tensors (recorded as one fused op).
    """
    layers = _split_mlp_params(spec, params)
    taped = _tape_of(x, *params)
    squeeze = value(x).ndim == 1
    if squeeze and isinstance(x, Tensor):
        x = x.reshape(1, -1)

    xval = value(x)
    if xval.ndim == 1:
        xval = xval.reshape(1, -1)
    if xval.shape[1] != spec.in_dim:
        raise DimensionError(
            f"input dim {xval.shape[1]} does not match layer_sizes[0]={spec.in_dim}")

    fn, dfn = ACTIVATIONS[spec.activation]
    inputs = []   # layer inputs a_i
    pres = []     # pre-activations z_i
    a = xval
    for i, (w, b) in enumerate(layers):
        inputs.append(a)
        z = a @ value(w)
        if b is not None:
            z = z + value(b)
        pres.append(z)
        a = fn(z) if i < spec.n_layers - 1 else z
    out_data = a

    if taped is None:
        return out_data[0] if squeeze else out_data

    out = Tensor(out_data, tape=taped)

    def bwd():
        if out.grad is None:
            return
        delta = out.grad
        if delta.ndim == 1:
            delta = delta.reshape(1, -1)
        for i in range(spec.n_layers - 1, -1, -1):
            w, b = layers[i]
            if isinstance(w, Tensor) and w.tape is not None:
                _acc(w, inputs[i].T @ delta)
            if b is not None and isinstance(b, Tensor) and b.tape is not None:
                _acc(b, delta.sum(axis=0))
            if i > 0 or (isinstance(x, Tensor) and x.tape is not None):
                delta = delta @ value(w).T
                if i > 0:
                    delta = delta * dfn(pres[i - 1])
        if isinstance(x, Tensor) and x.tape is not None:
            _acc(x, delta if not squeeze else delta[0])

    taped.record(bwd)
    if squeeze:
        return out.reshape(-1)
    return out


@dataclass(frozen=True)
class LSTMSpec:
    """LSTM cell plus linear head mapping hidden state to ``out_dim`` samples."""

    hidden_size: int
    input_size: int = 1
    out_dim: int = 1

    def param_count(self):
        h, i, o = self.hidden_size, self.input_size, self.out_dim
        return 4 * h * (i + h) + 8 * h + h * o + o


def init_lstm_params(spec: LSTMSpec, seed: int):
    """[W_ih, W_hh, b_ih, b_hh, W_head, b_head], all U(±1/sqrt(hidden))."""
    rng = np.random.default_rng(seed)
    h, i, o = spec.hidden_size, spec.input_size, spec.out_dim
    bound = 1.0 / np.sqrt(h)
    u = lambda *shape: rng.uniform(-bound, bound, size=shape)
    return [u(i, 4 * h), u(h, 4 * h), u(4 * h), u(4 * h), u(h, o), u(o)]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_cell(spec: LSTMSpec, params, x_t, h, c):
    """One cell step; gate order (i, f, g, o). Returns (h', c').

    Fused op: accepts tensors for any of params/h/c (x_t is excitation data and
    never needs a gradient here).
    """
    w_ih, w_hh, b_ih, b_hh = params[0], params[1], params[2], params[3]
    taped = _tape_of(h, c, *params[:4])
    hs = spec.hidden_size

    xval = value(x_t)
    if xval.ndim == 1:
        xval = xval.reshape(-1, 1)
    hval, cval = value(h), value(c)
    z = xval @ value(w_ih) + hval @ value(w_hh) + value(b_ih) + value(b_hh)
    ig = _sigmoid(z[:, 0 * hs:1 * hs])
    fg = _sigmoid(z[:, 1 * hs:2 * hs])
    gg = np.tanh(z[:, 2 * hs:3 * hs])
    og = _sigmoid(z[:, 3 * hs:4 * hs])
    c_new = fg * cval + ig * gg
    tc = np.tanh(c_new)
    h_new = og * tc

    if taped is None:
        return h_new, c_new

    h_out = Tensor(h_new, tape=taped)
    c_out = Tensor(c_new, tape=taped)

    def bwd():
        gh = h_out.grad
        gc = c_out.grad
        if gh is None and gc is None:
            return
        dc = np.zeros_like(c_new) if gc is None else gc
        if gh is not None:
            dc = dc + gh * og * (1.0 - tc * tc)
            d_og = gh * tc
        else:
            d_og = np.zeros_like(og)
        d_ig = dc * gg
        d_fg = dc * cval
        d_gg = dc * ig
        dz = np.concatenate(
            [
                d_ig * ig * (1.0 - ig),
                d_fg * fg * (1.0 - fg),
                d_gg * (1.0 - gg * gg),
                d_og * og * (1.0 - og),
            ],
            axis=1,
        )
        if isinstance(w_ih, Tensor) and w_ih.tape is not None:
            _acc(w_ih, xval.T @ dz)
        if isinstance(w_hh, Tensor) and w_hh.tape is not None:
            _acc(w_hh, hval.T @ dz)
        db = dz.sum(axis=0)
        if isinstance(b_ih, Tensor) and b_ih.tape is not None:
            _acc(b_ih, db)
        if isinstance(b_hh, Tensor) and b_hh.tape is not None:
            _acc(b_hh, db)
        if isinstance(h, Tensor) and h.tape is not None:
            _acc(h, dz @ value(w_hh).T)
        if isinstance(c, Tensor) and c.tape is not None:
            _acc(c, dc * fg)

    taped.record(bwd)
    return h_out, c_out


def lstm_forward(spec: LSTMSpec, params, x_t, state):
    """One step: cell update then linear head. Returns (output, (h', c'))."""
    h, c = state
    h_new, c_new = lstm_cell(spec, params, x_t, h, c)
    w_head, b_head = params[4], params[5]
    out = h_new @ w_head + b_head if isinstance(h_new, Tensor) else (
        value(h_new) @ value(w_head) + value(b_head))
    return out, (h_new, c_new)


def count_params(params) -> int:
    return int(sum(value(p).size for p in params))
