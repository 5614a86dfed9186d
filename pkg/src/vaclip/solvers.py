"""Fixed-step integration schemes over a caller-supplied derivative function.

All schemes work in normalized time: the step ``dtau`` is dimensionless and
equals 1 at the training sampling rate. State vectors may be numpy arrays or
taped tensors; the step arithmetic goes through operator overloading, so
gradients flow through every evaluation actually performed (including the
fixed-point iterations of the implicit schemes).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, IntegrationError
from .tensor import value

SCHEMES = ("fe", "tr", "rk4", "abm")

#: states with any |component| above this are treated as diverged
DIVERGENCE_GUARD = 1e6

# Adams-Bashforth weights for f_n, f_{n-1}, ... and Adams-Moulton weights for
# f_{n+1}, f_n, f_{n-1}, ... by order.
_AB = {
    1: (1.0,),
    2: (1.5, -0.5),
    3: (23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0),
    4: (55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0),
}
_AM = {
    1: (1.0,),
    2: (0.5, 0.5),
    3: (5.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0),
    4: (9.0 / 24.0, 19.0 / 24.0, -5.0 / 24.0, 1.0 / 24.0),
}


@dataclass(frozen=True)
class SolverConfig:
    scheme: str = "fe"
    dtau: float = 1.0
    implicit_max_iters: int = 10
    implicit_tol: float = 1e-9
    abm_order: int = 2

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ContractError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        if not self.dtau > 0:
            raise ContractError("dtau must be positive")
        if self.implicit_max_iters < 1:
            raise ContractError("implicit_max_iters must be >= 1")
        if not self.implicit_tol >= 0:
            raise ContractError("implicit_tol must be >= 0")
        if self.abm_order not in _AB:
            raise ContractError(f"abm_order must be in {sorted(_AB)}")

    def with_dtau(self, dtau: float) -> "SolverConfig":
        return replace(self, dtau=dtau)


@dataclass
class IntegrationResult:
    """Trajectory plus bookkeeping from the implicit correctors."""

    states: list  # length n_steps + 1, states[0] is y0
    nonconverged: int = 0

    def as_array(self):
        return np.stack([np.atleast_1d(np.asarray(value(s), dtype=np.float64))
                         for s in self.states])


def _check_derivative(d, tau):
    dv = value(d)
    if not np.all(np.isfinite(dv)):
        raise IntegrationError(f"non-finite derivative at tau={tau}", tau=tau)


def _check_state(y, step):
    yv = value(y)
    if not np.all(np.isfinite(yv)) or np.max(np.abs(yv)) > DIVERGENCE_GUARD:
        raise IntegrationError(f"state diverged at step {step}", step=step)


def _delta_norm(a, b):
    return float(np.max(np.abs(value(a) - value(b))))


def fe_step(f, tau, y, dtau):
    """Forward Euler: y + dtau * f(tau, y)."""
    d = f(tau, y)
    _check_derivative(d, tau)
    return y + dtau * d


def tr_step(f, tau, y, dtau, cfg: SolverConfig):
    """Trapezoidal rule via fixed-point iteration from a forward-Euler predictor.

    Returns ``(y_next, converged)``; a non-converged step hands back the last
    iterate so training can proceed, and the caller counts the flag.
    """
    d0 = f(tau, y)
    _check_derivative(d0, tau)
    base = y + (0.5 * dtau) * d0
    cur = y + dtau * d0
    converged = False
    for _ in range(cfg.implicit_max_iters):
        nxt = base + (0.5 * dtau) * f(tau + dtau, cur)
        delta = _delta_norm(nxt, cur)
        cur = nxt
        if delta <= cfg.implicit_tol:
            converged = True
            break
    return cur, converged


def rk4_step(f, tau, y, dtau):
    """Classical explicit 4-stage Runge-Kutta step."""
    half = 0.5 * dtau
    k1 = f(tau, y)
    _check_derivative(k1, tau)
    k2 = f(tau + half, y + half * k1)
    k3 = f(tau + half, y + half * k2)
    k4 = f(tau + dtau, y + dtau * k3)
    return y + (dtau / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def abm_integrate(f, y0, n_steps, cfg: SolverConfig) -> IntegrationResult:
    """Adams-Bashforth predictor + iterated Adams-Moulton corrector.

    Startup steps below the scheme order come from RK4. The derivative history
    holds f evaluated at the accepted grid nodes (PECE form).
    """
    if n_steps < 0:
        raise ContractError("n_steps must be >= 0")
    order = cfg.abm_order
    ab, am = _AB[order], _AM[order]
    dtau = cfg.dtau
    states = [y0]
    hist = []  # f at accepted nodes, newest last
    nonconverged = 0
    y = y0
    for n in range(n_steps):
        tau = n * dtau
        _check_state(y, n)
        if len(hist) < order - 1 and order > 1:
            fn = f(tau, y)
            _check_derivative(fn, tau)
            hist.append(fn)
            y = rk4_step(f, tau, y, dtau)
        else:
            fn = f(tau, y)
            _check_derivative(fn, tau)
            hist.append(fn)
            if len(hist) > order:
                hist.pop(0)
            pred = y
            for j, coef in enumerate(ab[:len(hist)]):
                pred = pred + (dtau * coef) * hist[-1 - j]
            cur = pred
            base = y
            for j, coef in enumerate(am[1:len(hist) + 1], start=1):
                base = base + (dtau * coef) * hist[len(hist) - j]
            ok = False
            for _ in range(cfg.implicit_max_iters):
                nxt = base + (dtau * am[0]) * f(tau + dtau, cur)
                delta = _delta_norm(nxt, cur)
                cur = nxt
                if delta <= cfg.implicit_tol:
                    ok = True
                    break
            if not ok:
                nonconverged += 1
            y = cur
        _check_state(y, n + 1)
        states.append(y)
    return IntegrationResult(states=states, nonconverged=nonconverged)


def integrate(f, y0, n_steps, cfg: SolverConfig) -> IntegrationResult:
    """Run ``n_steps`` of the configured scheme; trajectory[0] is y0."""
    if n_steps < 0:
        raise ContractError("n_steps must be >= 0")
    if cfg.scheme == "abm":
        return abm_integrate(f, y0, n_steps, cfg)
    states = [y0]
    nonconverged = 0
    y = y0
    dtau = cfg.dtau
    for n in range(n_steps):
        _check_state(y, n)
        tau = n * dtau
        if cfg.scheme == "fe":
            y = fe_step(f, tau, y, dtau)
        elif cfg.scheme == "rk4":
            y = rk4_step(f, tau, y, dtau)
        else:
            y, ok = tr_step(f, tau, y, dtau, cfg)
            if not ok:
                nonconverged += 1
        _check_state(y, n + 1)
        states.append(y)
    return IntegrationResult(states=states, nonconverged=nonconverged)
