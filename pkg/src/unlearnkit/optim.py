"""First- and second-order steppers with ascent and descent modes.

Both steppers are pure functions: they take a state and return a new
one, never mutating inputs, which keeps optimizer trajectories easy to
replay and compare in tests.

Mode handling: ``mode="ascent"`` folds the sign into the gradient before
any moment accumulation, so an ascent step on g is bitwise identical to
a descent step on -g. Curvature estimates are even in the gradient and
unaffected.

The second-order stepper keeps an EMA ``m`` of gradients and an EMA
``h`` of a nonnegative diagonal curvature estimate (by default the
elementwise squared gradient), then moves by

    params - lr * clip(m / max(gamma * h, eps), clip_threshold)

so no coordinate ever moves more than ``lr * clip_threshold`` in one
step. With beta1 = beta2 = 0, gamma = 1, an exact positive diagonal
Hessian supplied and the clip disabled, a step degenerates to a diagonal
Newton step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .numerics import Array, clip_magnitude

OPTIMIZERS = ("fo", "so")  # first-order AdamW, second-order clipped stepper

_MODES = ("descent", "ascent")


def _signed(grad: Array, mode: str) -> Array:
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    return -grad if mode == "ascent" else grad


def ema_update(prev: Array, value: Array, beta: float) -> Array:
    """beta * prev + (1 - beta) * value."""
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"EMA coefficient must satisfy 0 <= beta < 1, got {beta}")
    return beta * prev + (1.0 - beta) * value


def estimate_hessian_diag(grad: Array) -> Array:
    """Squared-gradient diagonal curvature estimate (Gauss-Newton style).

    Nonnegative by construction, which is all the stepper requires.
    """
    return grad * grad


def newton_step(params: Array, grad: Array, hess_diag: Array,
                lr: float = 1.0) -> Array:
    """params - lr * grad / hess_diag for a strictly positive diagonal."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    hess_diag = np.asarray(hess_diag, dtype=np.float64)
    if not (params.shape == grad.shape == hess_diag.shape):
        raise ValueError("params, grad and hess_diag must share a shape")
    if np.any(hess_diag <= 0):
        bad = int(np.flatnonzero(hess_diag <= 0)[0])
        raise ValueError(
            f"nonpositive curvature at index {bad}; damp the diagonal "
            f"before taking a Newton step")
    return params - lr * grad / hess_diag


@dataclass(frozen=True, eq=False)
class SophiaState:
    """State of the clipped second-order stepper."""

    step: int
    m: Array
    h: Array
    lr: float
    beta1: float = 0.9
    beta2: float = 0.95
    gamma: float = 0.04
    eps: float = 1e-5
    clip_threshold: float = 1.0
    hessian_every: int = 1

    def __post_init__(self):
        if self.m.shape != self.h.shape:
            raise ValueError("moment buffers m and h must share a shape")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.clip_threshold <= 0:
            raise ValueError(
                f"clip_threshold must be positive, got {self.clip_threshold}")
        if self.hessian_every < 1:
            raise ValueError(
                f"hessian_every must be a positive integer, got {self.hessian_every}")
        if np.any(self.h < 0):
            raise ValueError("curvature EMA h must be nonnegative")


def sophia_init(dim: int, lr: float, **overrides) -> SophiaState:
    """Fresh state with zeroed moments."""
    return SophiaState(step=0, m=np.zeros(dim), h=np.zeros(dim), lr=lr,
                       **overrides)


def sophia_step(state: SophiaState, grad: Array, params: Array,
                mode: str = "descent",
                hess_estimate: Array | None = None) -> tuple[Array, SophiaState]:
    """One clipped second-order step; returns (new_params, new_state).

    ``hess_estimate`` overrides the default squared-gradient curvature
    sample; it must be elementwise nonnegative. The curvature EMA is
    refreshed on steps 0, hessian_every, 2*hessian_every, ... and carried
    unchanged in between.
    """
    grad = np.asarray(grad, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if grad.shape != state.m.shape or params.shape != state.m.shape:
        raise ValueError(
            f"dimension mismatch: state {state.m.shape}, grad {grad.shape}, "
            f"params {params.shape}")
    g_eff = _signed(grad, mode)
    m_new = ema_update(state.m, g_eff, state.beta1)
    if state.step % state.hessian_every == 0:
        if hess_estimate is None:
            sample = estimate_hessian_diag(grad)  # even in grad: mode-agnostic
        else:
            sample = np.asarray(hess_estimate, dtype=np.float64)
            if sample.shape != state.m.shape:
                raise ValueError("hess_estimate dimension mismatch")
            if np.any(sample < 0):
                bad = int(np.flatnonzero(sample < 0)[0])
                raise ValueError(
                    f"negative curvature estimate at index {bad}; the "
                    f"stepper requires a nonnegative diagonal")
        h_new = ema_update(state.h, sample, state.beta2)
    else:
        h_new = state.h.copy()
    denom = np.maximum(state.gamma * h_new, state.eps)
    update = clip_magnitude(m_new / denom, state.clip_threshold)
    new_params = params - state.lr * update
    return new_params, replace(state, step=state.step + 1, m=m_new, h=h_new)


@dataclass(frozen=True, eq=False)
class AdamWState:
    step: int
    m: Array
    v: Array
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.m.shape != self.v.shape:
            raise ValueError("moment buffers m and v must share a shape")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.weight_decay < 0:
            raise ValueError(
                f"weight_decay must be nonnegative, got {self.weight_decay}")


def adamw_init(dim: int, lr: float, **overrides) -> AdamWState:
    return AdamWState(step=0, m=np.zeros(dim), v=np.zeros(dim), lr=lr,
                      **overrides)


def adamw_step(state: AdamWState, grad: Array, params: Array,
               mode: str = "descent") -> tuple[Array, AdamWState]:
    """Decoupled-weight-decay Adam step; returns (new_params, new_state)."""
    grad = np.asarray(grad, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if grad.shape != state.m.shape or params.shape != state.m.shape:
        raise ValueError(
            f"dimension mismatch: state {state.m.shape}, grad {grad.shape}, "
            f"params {params.shape}")
    g_eff = _signed(grad, mode)
    t = state.step + 1
    m_new = ema_update(state.m, g_eff, state.beta1)
    v_new = ema_update(state.v, g_eff * g_eff, state.beta2)
    m_hat = m_new / (1.0 - state.beta1 ** t)
    v_hat = v_new / (1.0 - state.beta2 ** t)
    decayed = params * (1.0 - state.lr * state.weight_decay)
    new_params = decayed - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, step=t, m=m_new, v=v_new)
