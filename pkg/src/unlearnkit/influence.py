"""One-shot influence-style unlearning, plus an exactly solvable world.

The quadratic instance here is the oracle: per-example losses

    l_i(theta) = ||A_i theta - b_i||^2 / 2

are quadratics, so both "train on everything" and "retrain without the
forget examples" have closed forms, and the influence update can be
checked against the true retrained minimizer to machine precision.

Why the update is exact on quadratics: let theta_o minimize the full
loss, so grad_retain(theta_o) + grad_forget(theta_o) = 0. The retain
loss is quadratic with constant Hessian H_R, hence its minimizer is one
Newton step away:

    theta_star = theta_o - H_R^{-1} grad_retain(theta_o)
               = theta_o + H_R^{-1} grad_forget(theta_o).

On non-quadratic losses the same formula is a local approximation; the
token-model variant below uses a diagonal curvature estimate and damping
in place of the full Hessian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import TinyLM
from .numerics import Array, check_finite


@dataclass(frozen=True, eq=False)
class QuadraticInstance:
    """n_examples stacked least-squares losses ||A_i theta - b_i||^2 / 2."""

    a: Array  # (n_examples, n_rows, dim)
    b: Array  # (n_examples, n_rows)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if a.ndim != 3 or b.ndim != 2 or a.shape[:2] != b.shape:
            raise ValueError(
                f"expected a of shape (n, k, d) and b of shape (n, k), "
                f"got {a.shape} and {b.shape}")
        check_finite(a, "instance matrix")
        check_finite(b, "instance targets")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n_examples(self) -> int:
        return self.a.shape[0]

    @property
    def dim(self) -> int:
        return self.a.shape[2]


def _weights_from_indices(inst: QuadraticInstance, forget_indices,
                          keep_forget: bool) -> Array:
    idx = np.asarray(sorted(set(int(i) for i in forget_indices)), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= inst.n_examples):
        raise ValueError(
            f"forget indices must lie in [0, {inst.n_examples}), got {idx}")
    if idx.size >= inst.n_examples:
        raise ValueError("cannot forget every example; no retain data left")
    weights = np.zeros(inst.n_examples) if keep_forget else np.ones(inst.n_examples)
    weights[idx] = 1.0 if keep_forget else 0.0
    return weights


def weighted_loss(inst: QuadraticInstance, theta: Array, weights: Array) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (inst.n_examples,):
        raise ValueError("need one weight per example")
    residual = inst.a @ theta - inst.b  # (n, k)
    return float(0.5 * np.sum(weights * np.sum(residual ** 2, axis=1)))


def weighted_grad(inst: QuadraticInstance, theta: Array, weights: Array) -> Array:
    theta = np.asarray(theta, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    residual = inst.a @ theta - inst.b
    return np.einsum("n,nkd,nk->d", weights, inst.a, residual)


def weighted_hessian(inst: QuadraticInstance, weights: Array) -> Array:
    weights = np.asarray(weights, dtype=np.float64)
    return np.einsum("n,nkd,nke->de", weights, inst.a, inst.a)


def _solve_spd(hess: Array, rhs: Array, what: str) -> Array:
    eigs = np.linalg.eigvalsh(hess)
    if eigs[0] <= 1e-12 * max(1.0, eigs[-1]):
        raise ValueError(
            f"{what} is singular or nearly so (eigenvalue range "
            f"[{eigs[0]:.3e}, {eigs[-1]:.3e}]); add damping")
    return np.linalg.solve(hess, rhs)


def fit_full(inst: QuadraticInstance) -> Array:
    """Minimizer of the sum of all example losses."""
    ones = np.ones(inst.n_examples)
    hess = weighted_hessian(inst, ones)
    rhs = np.einsum("nkd,nk->d", inst.a, inst.b)
    return _solve_spd(hess, rhs, "full Hessian")


def exact_retrain(inst: QuadraticInstance, forget_indices) -> Array:
    """Minimizer of the retain-only loss: the ground truth for unlearning."""
    weights = _weights_from_indices(inst, forget_indices, keep_forget=False)
    hess = weighted_hessian(inst, weights)
    rhs = np.einsum("n,nkd,nk->d", weights, inst.a, inst.b)
    return _solve_spd(hess, rhs, "retain Hessian")


def influence_unlearn(theta_o: Array, inst: QuadraticInstance, forget_indices,
                      damping: float = 0.0) -> Array:
    """theta_o + (H_R + damping I)^{-1} grad_forget(theta_o).

    H_R is the Hessian of the retain loss. With damping 0 and theta_o the
    full-data minimizer this equals exact_retrain (see module docstring);
    damping trades exactness for stability when H_R is ill-conditioned.
    """
    theta_o = np.asarray(theta_o, dtype=np.float64)
    if theta_o.shape != (inst.dim,):
        raise ValueError(f"theta_o must have shape ({inst.dim},)")
    if damping < 0:
        raise ValueError(f"damping must be nonnegative, got {damping}")
    retain_w = _weights_from_indices(inst, forget_indices, keep_forget=False)
    forget_w = 1.0 - retain_w
    hess = weighted_hessian(inst, retain_w)
    if damping:
        hess = hess + damping * np.eye(inst.dim)
    g_forget = weighted_grad(inst, theta_o, forget_w)
    return theta_o + _solve_spd(hess, g_forget, "damped retain Hessian")


def recommended_damping(hess_diag: Array) -> float:
    """1e-4 times the mean diagonal curvature, floored away from zero."""
    return max(1e-4 * float(np.mean(hess_diag)), 1e-12)


def retrain_gap_report(inst: QuadraticInstance, forget_indices,
                       damping: float = 0.0) -> dict:
    """How far the one-shot update lands from the true retrained solution."""
    theta_o = fit_full(inst)
    theta_star = exact_retrain(inst, forget_indices)
    theta_iu = influence_unlearn(theta_o, inst, forget_indices, damping)
    retain_w = _weights_from_indices(inst, forget_indices, keep_forget=False)
    return {
        "param_gap": float(np.linalg.norm(theta_iu - theta_star)),
        "retain_loss_retrain": weighted_loss(inst, theta_star, retain_w),
        "retain_loss_influence": weighted_loss(inst, theta_iu, retain_w),
        "move_size": float(np.linalg.norm(theta_iu - theta_o)),
    }


def trust_region_damping(hess_diag: Array, grad: Array,
                         step_cap: float = 0.005) -> float:
    """Smallest damping that keeps every coordinate of grad/(h+damping)
    at or below step_cap in magnitude.

    The closed-form update is a quadratic extrapolation, trustworthy only
    near the current parameters, and the squared-gradient curvature proxy
    goes to zero at a converged minimum where the true curvature does
    not. Solving |g_i| <= step_cap * (h_i + damping) for each coordinate
    gives damping >= max_i(|g_i|/step_cap - h_i).
    """
    if step_cap <= 0:
        raise ValueError(f"step_cap must be positive, got {step_cap}")
    needed = np.abs(grad) / step_cap - hess_diag
    return max(float(np.max(needed, initial=0.0)), 1e-12)


def influence_unlearn_lm(model: TinyLM, train_pairs, forget_indices,
                         damping: float | None = None,
                         step_cap: float = 0.005) -> TinyLM:
    """One-shot unlearning update for the token model.

    The Hessian of the mean training loss is approximated by the
    Gauss-Newton diagonal (per-example squared gradients averaged over
    all training pairs), and the update is

        theta + sum_forget grad_e / (h_mean + damping)

    computed at the current parameters. ``damping=None`` picks
    trust_region_damping(h_mean, g_forget, step_cap), the smallest
    damping that caps every coordinate's move at step_cap. The curvature
    model is genuinely rough; expect the edit to be far weaker than
    optimizer-based unlearning on memorized data.
    """
    n = len(train_pairs)
    if n == 0:
        raise ValueError("train_pairs must be non-empty")
    idx = sorted(set(int(i) for i in forget_indices))
    if idx and (idx[0] < 0 or idx[-1] >= n):
        raise ValueError(f"forget indices must lie in [0, {n})")
    if len(idx) >= n:
        raise ValueError("cannot forget every example; no retain data left")
    forget = set(idx)
    h_mean = np.zeros_like(model.params)
    g_forget = np.zeros_like(model.params)
    for e, pair in enumerate(train_pairs):
        g = model.grad_nll([pair], coeffs=np.asarray([1.0]))
        h_mean += g * g
        if e in forget:
            g_forget += g
    h_mean /= n
    if damping is None:
        damping = trust_region_damping(h_mean, g_forget, step_cap)
    if damping <= 0:
        raise ValueError(
            "the diagonal curvature estimate needs positive damping; "
            "pass damping > 0 or leave it as None")
    new_params = model.params + g_forget / (h_mean + damping)
    return TinyLM(model.config, new_params)


def _soul_descend_retain(inst: QuadraticInstance, theta_o: Array,
                         retain_w: Array, lr: float, iterations: int) -> Array:
    """Iterative second-order descent on the retain objective.

    This is the quadratic analogue of the optimizer-based unlearning
    loop: gradient ascent on an unbounded quadratic forget loss has no
    finite target, so the iterative route is judged by how well it
    reaches the retain minimizer, which is the stated goal of unlearning.
    """
    from .optim import sophia_init, sophia_step

    hess_diag = np.diag(weighted_hessian(inst, retain_w)).copy()
    theta = np.array(theta_o, dtype=np.float64)
    state = sophia_init(theta.size, lr=lr)
    for _ in range(iterations):
        g = weighted_grad(inst, theta, retain_w)
        theta, state = sophia_step(state, g, theta, mode="descent",
                                   hess_estimate=hess_diag)
    return theta


def influence_vs_soul_report(problem, forget_indices=None, *, task=None,
                             config=None, damping: float | None = None,
                             lr: float = 0.01, iterations: int = 4000) -> dict:
    """Run one-shot influence unlearning and the iterative optimizer loop
    on the same task and report the forget/retain objectives of each.

    Two problem kinds are supported. A QuadraticInstance (with
    forget_indices) compares the closed-form update against Sophia
    descent on the retain objective; both should reach the retain
    minimizer when the instance is well conditioned. A TinyLM (with an
    UnlearnTask and optional UnlearnRunConfig) compares the one-shot
    token-model update against a full unlearning run; there the
    objectives are mean sequence NLLs. ``forget_indices`` on the model
    path overrides which training pairs the one-shot update forgets
    (default: the task's forget block).
    """
    if isinstance(problem, QuadraticInstance):
        if forget_indices is None:
            raise ValueError("forget_indices is required for quadratic instances")
        inst = problem
        theta_o = fit_full(inst)
        theta_iu = influence_unlearn(theta_o, inst, forget_indices,
                                     damping or 0.0)
        retain_w = _weights_from_indices(inst, forget_indices, keep_forget=False)
        theta_soul = _soul_descend_retain(inst, theta_o, retain_w, lr, iterations)
        forget_w = 1.0 - retain_w
        return {
            "task_kind": "quadratic",
            "iu_forget_objective": weighted_loss(inst, theta_iu, forget_w),
            "iu_retain_objective": weighted_loss(inst, theta_iu, retain_w),
            "soul_forget_objective": weighted_loss(inst, theta_soul, forget_w),
            "soul_retain_objective": weighted_loss(inst, theta_soul, retain_w),
            "iu_params": theta_iu,
            "soul_params": theta_soul,
        }
    if isinstance(problem, TinyLM):
        from .unlearn import UnlearnRunConfig, run_unlearning

        if task is None:
            raise ValueError("task is required for token-model comparisons")
        if config is None:
            config = UnlearnRunConfig()
        pairs = list(task.forget) + list(task.retain)
        if forget_indices is None:
            forget_indices = range(len(task.forget))
        iu_model = influence_unlearn_lm(problem, pairs, forget_indices, damping)
        if config.epochs > 0:
            soul_model = run_unlearning(problem, task, config).model
        else:
            soul_model = TinyLM(problem.config, problem.params.copy())

        def mean_nll(m: TinyLM, batch) -> float:
            return float(np.mean(m.per_example_nll(batch)))

        return {
            "task_kind": "token-model",
            "iu_forget_objective": mean_nll(iu_model, task.forget),
            "iu_retain_objective": mean_nll(iu_model, task.retain),
            "soul_forget_objective": mean_nll(soul_model, task.forget),
            "soul_retain_objective": mean_nll(soul_model, task.retain),
            "iu_params": iu_model.params,
            "soul_params": soul_model.params,
        }
    raise TypeError(
        f"expected a QuadraticInstance or TinyLM, got {type(problem).__name__}")
