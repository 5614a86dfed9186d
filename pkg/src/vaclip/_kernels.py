"""Numba fast paths for long-sequence inference and circuit reference runs.

These kernels exist purely for speed: each one mirrors, operation for
operation, a pure numpy/python implementation elsewhere in the package
(``solvers``/``odenet`` for model inference, ``circuits`` for the analytical
reference). The test suite checks kernel-vs-reference agreement. If numba is
unavailable the callers silently use the reference paths.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        if args and callable(args[0]):
            return args[0]
        return wrap

from .networks import SELU_ALPHA, SELU_LAMBDA

ACT_IDS = {"relu": 0, "selu": 1, "softsign": 2, "tanh": 3}
SCHEME_IDS = {"fe": 0, "tr": 1, "rk4": 2, "abm": 3}

_SELU_L = SELU_LAMBDA
_SELU_A = SELU_ALPHA


def pack_mlp(spec, params):
    """Flatten MLP parameters for the kernels: (theta, sizes, use_bias, act_id)."""
    theta = np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in params])
    sizes = np.asarray(spec.layer_sizes, dtype=np.int64)
    use_bias = np.asarray([1 if b else 0 for b in spec.bias], dtype=np.int64)
    return theta, sizes, use_bias, ACT_IDS[spec.activation]


@njit(cache=True, inline="always")
def _act(v, act_id):
    if act_id == 0:
        return v if v > 0.0 else 0.0
    elif act_id == 1:
        return _SELU_L * (v if v > 0.0 else _SELU_A * (math.exp(v) - 1.0))
    elif act_id == 2:
        return v / (1.0 + abs(v))
    else:
        return math.tanh(v)


@njit(cache=True, inline="always")
def _lerp(x, u):
    n = x.shape[0]
    if u <= 0.0:
        return x[0]
    if u >= n - 1:
        return x[n - 1]
    i = int(u)
    frac = u - i
    return x[i] + frac * (x[i + 1] - x[i])


@njit(cache=True)
def _mlp_eval(theta, sizes, use_bias, act_id, vin, buf_a, buf_b):
    nl = sizes.shape[0] - 1
    cur = buf_a
    nxt = buf_b
    for i in range(sizes[0]):
        cur[i] = vin[i]
    off = 0
    for l in range(nl):
        fi = sizes[l]
        fo = sizes[l + 1]
        for o in range(fo):
            s = 0.0
            for i in range(fi):
                s += cur[i] * theta[off + i * fo + o]
            nxt[o] = s
        off += fi * fo
        if use_bias[l] == 1:
            for o in range(fo):
                nxt[o] += theta[off + o]
            off += fo
        if l < nl - 1:
            for o in range(fo):
                nxt[o] = _act(nxt[o], act_id)
        tmp = cur
        cur = nxt
        nxt = tmp
    return cur


@njit(cache=True)
def _ode_deriv(theta, sizes, use_bias, act_id, x, u, y, dtau, include_time,
               vin, buf_a, buf_b, dout):
    vin[0] = _lerp(x, u)
    s_dim = y.shape[0]
    for i in range(s_dim):
        vin[1 + i] = y[i]
    if include_time == 1:
        vin[1 + s_dim] = u * dtau
    out = _mlp_eval(theta, sizes, use_bias, act_id, vin, buf_a, buf_b)
    for i in range(s_dim):
        dout[i] = out[i]


@njit(cache=True)
def odenet_run(theta, sizes, use_bias, act_id, x, y0, dtau, scheme_id,
               max_iters, tol, abm_order, include_time):
    """Sequential ODENet inference; returns (trajectory, nonconverged, fail_step)."""
    n = x.shape[0]
    s_dim = y0.shape[0]
    traj = np.zeros((n, s_dim))
    maxw = 0
    for i in range(sizes.shape[0]):
        if sizes[i] > maxw:
            maxw = sizes[i]
    vin = np.empty(sizes[0])
    buf_a = np.empty(maxw)
    buf_b = np.empty(maxw)
    y = y0.copy()
    d0 = np.empty(s_dim)
    d1 = np.empty(s_dim)
    d2 = np.empty(s_dim)
    d3 = np.empty(s_dim)
    cur = np.empty(s_dim)
    nxt = np.empty(s_dim)
    hist = np.empty((4, s_dim))
    nhist = 0
    nonconv = 0
    fail = -1
    for i in range(s_dim):
        traj[0, i] = y[i]
    for step in range(n - 1):
        u = float(step)
        if scheme_id == 0:  # forward Euler
            _ode_deriv(theta, sizes, use_bias, act_id, x, u, y, dtau,
                       include_time, vin, buf_a, buf_b, d0)
            for i in range(s_dim):
                y[i] = y[i] + dtau * d0[i]
        elif scheme_id == 2:  # RK4
            _ode_deriv(theta, sizes, use_bias, act_id, x, u, y, dtau,
                       include_time, vin, buf_a, buf_b, d0)
            for i in range(s_dim):
                cur[i] = y[i] + 0.5 * dtau * d0[i]
            _ode_deriv(theta, sizes, use_bias, act_id, x, u + 0.5, cur, dtau,
                       include_time, vin, buf_a, buf_b, d1)
            for i in range(s_dim):
                cur[i] = y[i] + 0.5 * dtau * d1[i]
            _ode_deriv(theta, sizes, use_bias, act_id, x, u + 0.5, cur, dtau,
                       include_time, vin, buf_a, buf_b, d2)
            for i in range(s_dim):
                cur[i] = y[i] + dtau * d2[i]
            _ode_deriv(theta, sizes, use_bias, act_id, x, u + 1.0, cur, dtau,
                       include_time, vin, buf_a, buf_b, d3)
            for i in range(s_dim):
                y[i] = y[i] + dtau / 6.0 * (d0[i] + 2.0 * d1[i] + 2.0 * d2[i] + d3[i])
        elif scheme_id == 1:  # trapezoidal, fixed-point iteration
            _ode_deriv(theta, sizes, use_bias, act_id, x, u, y, dtau,
                       include_time, vin, buf_a, buf_b, d0)
            for i in range(s_dim):
                cur[i] = y[i] + dtau * d0[i]
            ok = False
            for _ in range(max_iters):
                _ode_deriv(theta, sizes, use_bias, act_id, x, u + 1.0, cur,
                           dtau, include_time, vin, buf_a, buf_b, d1)
                delta = 0.0
                for i in range(s_dim):
                    v = y[i] + 0.5 * dtau * (d0[i] + d1[i])
                    dd = abs(v - cur[i])
                    if dd > delta:
                        delta = dd
                    nxt[i] = v
                for i in range(s_dim):
                    cur[i] = nxt[i]
                if delta <= tol:
                    ok = True
                    break
            if not ok:
                nonconv += 1
            for i in range(s_dim):
                y[i] = cur[i]
        else:  # Adams-Bashforth-Moulton, RK4 startup
            if nhist < abm_order - 1:
                _ode_deriv(theta, sizes, use_bias, act_id, x, u, y, dtau,
                           include_time, vin, buf_a, buf_b, d0)
                for i in range(s_dim):
                    hist[nhist, i] = d0[i]
                nhist += 1
                for i in range(s_dim):
                    cur[i] = y[i] + 0.5 * dtau * d0[i]
                _ode_deriv(theta, sizes, use_bias, act_id, x, u + 0.5, cur,
                           dtau, include_time, vin, buf_a, buf_b, d1)
                for i in range(s_dim):
                    cur[i] = y[i] + 0.5 * dtau * d1[i]
                _ode_deriv(theta, sizes, use_bias, act_id, x, u + 0.5, cur,
                           dtau, include_time, vin, buf_a, buf_b, d2)
                for i in range(s_dim):
                    cur[i] = y[i] + dtau * d2[i]
                _ode_deriv(theta, sizes, use_bias, act_id, x, u + 1.0, cur,
                           dtau, include_time, vin, buf_a, buf_b, d3)
                for i in range(s_dim):
                    y[i] = y[i] + dtau / 6.0 * (d0[i] + 2.0 * d1[i] + 2.0 * d2[i] + d3[i])
            else:
                _ode_deriv(theta, sizes, use_bias, act_id, x, u, y, dtau,
                           include_time, vin, buf_a, buf_b, d0)
                if nhist == abm_order:
                    for k in range(abm_order - 1):
                        for i in range(s_dim):
                            hist[k, i] = hist[k + 1, i]
                    nhist -= 1
                for i in range(s_dim):
                    hist[nhist, i] = d0[i]
                nhist += 1
                # predictor
                for i in range(s_dim):
                    cur[i] = y[i]
                if abm_order == 1:
                    for i in range(s_dim):
                        cur[i] += dtau * hist[nhist - 1, i]
                elif abm_order == 2:
                    for i in range(s_dim):
                        cur[i] += dtau * (1.5 * hist[nhist - 1, i]
                                          - 0.5 * hist[nhist - 2, i])
                elif abm_order == 3:
                    for i in range(s_dim):
                        cur[i] += dtau * ((23.0 / 12.0) * hist[nhist - 1, i]
                                          - (16.0 / 12.0) * hist[nhist - 2, i]
                                          + (5.0 / 12.0) * hist[nhist - 3, i])
                else:
                    for i in range(s_dim):
                        cur[i] += dtau * ((55.0 / 24.0) * hist[nhist - 1, i]
                                          - (59.0 / 24.0) * hist[nhist - 2, i]
                                          + (37.0 / 24.0) * hist[nhist - 3, i]
                                          - (9.0 / 24.0) * hist[nhist - 4, i])
                # corrector base: y + dtau * sum of history terms
                for i in range(s_dim):
                    nxt[i] = y[i]
                am0 = 1.0
                if abm_order == 1:
                    am0 = 1.0
                elif abm_order == 2:
                    am0 = 0.5
                    for i in range(s_dim):
                        nxt[i] += dtau * 0.5 * hist[nhist - 1, i]
                elif abm_order == 3:
                    am0 = 5.0 / 12.0
                    for i in range(s_dim):
                        nxt[i] += dtau * ((8.0 / 12.0) * hist[nhist - 1, i]
                                          - (1.0 / 12.0) * hist[nhist - 2, i])
                else:
                    am0 = 9.0 / 24.0
                    for i in range(s_dim):
                        nxt[i] += dtau * ((19.0 / 24.0) * hist[nhist - 1, i]
                                          - (5.0 / 24.0) * hist[nhist - 2, i]
                                          + (1.0 / 24.0) * hist[nhist - 3, i])
                base0 = nxt.copy()
                ok = False
                for _ in range(max_iters):
                    _ode_deriv(theta, sizes, use_bias, act_id, x, u + 1.0, cur,
                               dtau, include_time, vin, buf_a, buf_b, d1)
                    delta = 0.0
                    for i in range(s_dim):
                        v = base0[i] + dtau * am0 * d1[i]
                        dd = abs(v - cur[i])
                        if dd > delta:
                            delta = dd
                        nxt[i] = v
                    for i in range(s_dim):
                        cur[i] = nxt[i]
                    if delta <= tol:
                        ok = True
                        break
                if not ok:
                    nonconv += 1
                for i in range(s_dim):
                    y[i] = cur[i]
        bad = False
        for i in range(s_dim):
            if not math.isfinite(y[i]) or abs(y[i]) > 1e6:
                bad = True
        if bad:
            fail = step + 1
            break
        for i in range(s_dim):
            traj[step + 1, i] = y[i]
    return traj, nonconv, fail


@njit(cache=True)
def stn_run(theta, sizes, use_bias, act_id, x, y0, h_tau):
    """State trajectory network inference: current input, previous output."""
    n = x.shape[0]
    s_dim = y0.shape[0]
    traj = np.zeros((n, s_dim))
    maxw = 0
    for i in range(sizes.shape[0]):
        if sizes[i] > maxw:
            maxw = sizes[i]
    vin = np.empty(sizes[0])
    buf_a = np.empty(maxw)
    buf_b = np.empty(maxw)
    y = y0.copy()
    fail = -1
    for i in range(s_dim):
        traj[0, i] = y[i]
    for step in range(n - 1):
        vin[0] = x[step + 1]
        for i in range(s_dim):
            vin[1 + i] = y[i]
        out = _mlp_eval(theta, sizes, use_bias, act_id, vin, buf_a, buf_b)
        bad = False
        for i in range(s_dim):
            y[i] = y[i] + h_tau * out[i]
            if not math.isfinite(y[i]) or abs(y[i]) > 1e6:
                bad = True
        if bad:
            fail = step + 1
            break
        for i in range(s_dim):
            traj[step + 1, i] = y[i]
    return traj, fail


@njit(cache=True)
def lstm_run(w_ih, w_hh, b_ih, b_hh, w_head, b_head, x, h0, c0):
    """LSTM inference over a sequence; returns (outputs, h, c)."""
    n = x.shape[0]
    hs = w_hh.shape[0]
    od = w_head.shape[1]
    out = np.empty((n, od))
    h = h0.copy()
    c = c0.copy()
    z = np.empty(4 * hs)
    for t in range(n):
        xv = x[t]
        for j in range(4 * hs):
            s = xv * w_ih[0, j] + b_ih[j] + b_hh[j]
            for i in range(hs):
                s += h[i] * w_hh[i, j]
            z[j] = s
        for i in range(hs):
            ig = 1.0 / (1.0 + math.exp(-z[i]))
            fg = 1.0 / (1.0 + math.exp(-z[hs + i]))
            gg = math.tanh(z[2 * hs + i])
            og = 1.0 / (1.0 + math.exp(-z[3 * hs + i]))
            cn = fg * c[i] + ig * gg
            c[i] = cn
            h[i] = og * math.tanh(cn)
        for o in range(od):
            s = b_head[o]
            for i in range(hs):
                s += h[i] * w_head[i, o]
            out[t, o] = s
    return out, h, c


@njit(cache=True, inline="always")
def _rhs1(vd, y, inv_rc, k_diode, inv_nvt):
    a = y * inv_nvt
    if a > 690.0 or a < -690.0:
        return np.nan
    return (vd - y) * inv_rc - k_diode * math.sinh(a)


@njit(cache=True)
def clipper1_chunk(x, os_, j0, j1, y0, dt, gain, inv_rc, k_diode, inv_nvt, ybound):
    """RK4 over full-rate steps [j0, j1); returns states after each step."""
    out = np.empty(j1 - j0)
    y = y0
    fail = -1
    for j in range(j0, j1):
        p = j / os_
        v0 = gain * _lerp(x, p)
        vh = gain * _lerp(x, p + 0.5 / os_)
        v1 = gain * _lerp(x, p + 1.0 / os_)
        k1 = _rhs1(v0, y, inv_rc, k_diode, inv_nvt)
        k2 = _rhs1(vh, y + 0.5 * dt * k1, inv_rc, k_diode, inv_nvt)
        k3 = _rhs1(vh, y + 0.5 * dt * k2, inv_rc, k_diode, inv_nvt)
        k4 = _rhs1(v1, y + dt * k3, inv_rc, k_diode, inv_nvt)
        y = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not math.isfinite(y) or abs(y) > ybound:
            fail = j
            break
        out[j - j0] = y
    return out, y, fail


@njit(cache=True)
def clipper2_chunk(x, os_, j0, j1, y1_0, y2_0, dt, gain, inv_rc1, inv_rc2,
                   k_diode, inv_nvt, y1bound, y2bound):
    """RK4 for the two-state clipper over full-rate steps [j0, j1)."""
    out = np.empty((j1 - j0, 2))
    y1 = y1_0
    y2 = y2_0
    fail = -1
    for j in range(j0, j1):
        p = j / os_
        v0 = gain * _lerp(x, p)
        vh = gain * _lerp(x, p + 0.5 / os_)
        v1 = gain * _lerp(x, p + 1.0 / os_)

        a = y1 * inv_nvt
        if abs(a) > 690.0:
            fail = j
            break
        ir = v0 - y1 - y2
        k1a = ir * inv_rc2 - k_diode * math.sinh(a)
        k1b = ir * inv_rc1

        t1 = y1 + 0.5 * dt * k1a
        t2 = y2 + 0.5 * dt * k1b
        a = t1 * inv_nvt
        if abs(a) > 690.0:
            fail = j
            break
        ir = vh - t1 - t2
        k2a = ir * inv_rc2 - k_diode * math.sinh(a)
        k2b = ir * inv_rc1

        t1 = y1 + 0.5 * dt * k2a
        t2 = y2 + 0.5 * dt * k2b
        a = t1 * inv_nvt
        if abs(a) > 690.0:
            fail = j
            break
        ir = vh - t1 - t2
        k3a = ir * inv_rc2 - k_diode * math.sinh(a)
        k3b = ir * inv_rc1

        t1 = y1 + dt * k3a
        t2 = y2 + dt * k3b
        a = t1 * inv_nvt
        if abs(a) > 690.0:
            fail = j
            break
        ir = v1 - t1 - t2
        k4a = ir * inv_rc2 - k_diode * math.sinh(a)
        k4b = ir * inv_rc1

        y1 = y1 + dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        y2 = y2 + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        if (not math.isfinite(y1) or not math.isfinite(y2)
                or abs(y1) > y1bound or abs(y2) > y2bound):
            fail = j
            break
        out[j - j0, 0] = y1
        out[j - j0, 1] = y2
    return out, y1, y2, fail


@njit(cache=True, inline="always")
def _act_deriv_from_out(a, act_id):
    # derivative of the activation expressed through its own output
    if act_id == 0:
        return 1.0 if a > 0.0 else 0.0
    elif act_id == 1:
        return _SELU_L if a > 0.0 else a + _SELU_L * _SELU_A
    elif act_id == 2:
        d = 1.0 - abs(a)
        return d * d
    else:
        return 1.0 - a * a


@njit(cache=True)
def train_unroll_forward(theta, sizes, use_bias, act_id, x, y0, dtau, input_shift):
    """Batched unroll of y[n+1] = y[n] + dtau * net([x[n+shift]; y[n]]).

    input_shift 0 is the forward-Euler ODENet (previous input), 1 the STN
    (current input). Returns (trajectory (L,B,S), hidden activations
    (L-1,B,H), fail_step).
    """
    b_sz, n_len = x.shape
    s_dim = y0.shape[1]
    nl = sizes.shape[0] - 1
    h_total = 0
    maxw = sizes[0]
    for l in range(1, nl + 1):
        if sizes[l] > maxw:
            maxw = sizes[l]
        if l < nl:
            h_total += sizes[l]
    traj = np.zeros((n_len, b_sz, s_dim))
    acts = np.empty((n_len - 1, b_sz, h_total))
    buf_a = np.empty((b_sz, maxw))
    buf_b = np.empty((b_sz, maxw))
    fail = -1
    for b in range(b_sz):
        for s in range(s_dim):
            traj[0, b, s] = y0[b, s]
    for n in range(n_len - 1):
        xi = n + input_shift
        if xi > n_len - 1:
            xi = n_len - 1
        for b in range(b_sz):
            buf_a[b, 0] = x[b, xi]
            for s in range(s_dim):
                buf_a[b, 1 + s] = traj[n, b, s]
        off = 0
        hoff = 0
        cur = buf_a
        nxt = buf_b
        for l in range(nl):
            fi = sizes[l]
            fo = sizes[l + 1]
            for b in range(b_sz):
                for o in range(fo):
                    acc = 0.0
                    for i in range(fi):
                        acc += cur[b, i] * theta[off + i * fo + o]
                    nxt[b, o] = acc
            off += fi * fo
            if use_bias[l] == 1:
                for b in range(b_sz):
                    for o in range(fo):
                        nxt[b, o] += theta[off + o]
                off += fo
            if l < nl - 1:
                for b in range(b_sz):
                    for o in range(fo):
                        v = _act(nxt[b, o], act_id)
                        nxt[b, o] = v
                        acts[n, b, hoff + o] = v
                hoff += fo
            tmp = cur
            cur = nxt
            nxt = tmp
        bad = False
        for b in range(b_sz):
            for s in range(s_dim):
                v = traj[n, b, s] + dtau * cur[b, s]
                traj[n + 1, b, s] = v
                if not math.isfinite(v) or abs(v) > 1e6:
                    bad = True
        if bad:
            fail = n + 1
            break
    return traj, acts, fail


@njit(cache=True)
def train_unroll_backward(theta, sizes, use_bias, act_id, x, traj, acts,
                          g_traj, dtau, input_shift):
    """Reverse pass of train_unroll_forward given dLoss/dTrajectory.

    Returns (gradient w.r.t. theta, gradient w.r.t. y0).
    """
    n_len, b_sz, s_dim = traj.shape
    nl = sizes.shape[0] - 1
    maxw = sizes[0]
    for l in range(1, nl + 1):
        if sizes[l] > maxw:
            maxw = sizes[l]
    # per-layer theta and activation-cache offsets
    off_w = np.empty(nl, dtype=np.int64)
    off_b = np.empty(nl, dtype=np.int64)
    off_h = np.empty(nl, dtype=np.int64)
    off = 0
    hoff = 0
    for l in range(nl):
        off_w[l] = off
        off += sizes[l] * sizes[l + 1]
        if use_bias[l] == 1:
            off_b[l] = off
            off += sizes[l + 1]
        else:
            off_b[l] = -1
        off_h[l] = hoff
        if l < nl - 1:
            hoff += sizes[l + 1]
    g_theta = np.zeros(theta.shape[0])
    gy = np.empty((b_sz, s_dim))
    for b in range(b_sz):
        for s in range(s_dim):
            gy[b, s] = g_traj[n_len - 1, b, s]
    delta = np.empty((b_sz, maxw))
    delta2 = np.empty((b_sz, maxw))
    a_in = np.empty((b_sz, maxw))
    for n in range(n_len - 2, -1, -1):
        for b in range(b_sz):
            for s in range(s_dim):
                delta[b, s] = dtau * gy[b, s]
        for l in range(nl - 1, -1, -1):
            fi = sizes[l]
            fo = sizes[l + 1]
            # layer input activations
            if l == 0:
                xi = n + input_shift
                if xi > n_len - 1:
                    xi = n_len - 1
                for b in range(b_sz):
                    a_in[b, 0] = x[b, xi]
                    for s in range(s_dim):
                        a_in[b, 1 + s] = traj[n, b, s]
            else:
                ho = off_h[l - 1]
                for b in range(b_sz):
                    for i in range(fi):
                        a_in[b, i] = acts[n, b, ho + i]
            wo = off_w[l]
            for i in range(fi):
                for o in range(fo):
                    acc = 0.0
                    for b in range(b_sz):
                        acc += a_in[b, i] * delta[b, o]
                    g_theta[wo + i * fo + o] += acc
            if off_b[l] >= 0:
                bo = off_b[l]
                for o in range(fo):
                    acc = 0.0
                    for b in range(b_sz):
                        acc += delta[b, o]
                    g_theta[bo + o] += acc
            # input gradient
            for b in range(b_sz):
                for i in range(fi):
                    acc = 0.0
                    for o in range(fo):
                        acc += delta[b, o] * theta[wo + i * fo + o]
                    delta2[b, i] = acc
            if l > 0:
                for b in range(b_sz):
                    for i in range(fi):
                        delta2[b, i] *= _act_deriv_from_out(a_in[b, i], act_id)
            tmp = delta
            delta = delta2
            delta2 = tmp
        for b in range(b_sz):
            for s in range(s_dim):
                gy[b, s] = gy[b, s] + delta[b, 1 + s] + g_traj[n, b, s]
    return g_theta, gy
