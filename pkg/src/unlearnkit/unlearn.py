"""The iterative unlearning loop.

One run walks epochs of interleaved forget/retain batches:

* ``ga`` / ``graddiff`` with the default ``alternate`` schedule take an
  ascent step on each forget-batch NLL gradient followed by a descent
  step on the lambda-scaled retain-batch NLL gradient, sharing a single
  optimizer state across both modes.
* ``po`` / ``npo`` (and any method under ``schedule="combined"``) take
  one descent step per iteration on the combined objective gradient.

Each iteration consumes one forget batch and one retain batch; the
shorter batch list cycles until the longer is exhausted, so every epoch
covers all of both sets at least once.

Lambda scales the retain loss, and hence its gradient, before the
optimizer's moment accumulation ever sees it; the trajectory log records
this convention.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .model import TinyLM, clone_as_reference
from .numerics import Array, rng_stream
from .optim import adamw_init, adamw_step, sophia_init, sophia_step

LAMBDA_NOTE = ("lambda scales the retain loss before moment accumulation "
               "(gradient is scaled, optimizer state sees the scaled signal)")

# Method-specific defaults: learning rates and retain weights that work
# at full scale, rescaled through lr_scale for the tiny model here.
BASE_LR = {
    ("ga", "fo"): 4e-6, ("ga", "so"): 4e-6,
    ("graddiff", "fo"): 5e-6, ("graddiff", "so"): 5e-6,
    ("po", "fo"): 2e-5, ("po", "so"): 1e-5,
    ("npo", "fo"): 2e-5, ("npo", "so"): 1e-5,
}
BASE_LAMBDA = {
    ("ga", "fo"): 0.0, ("ga", "so"): 0.0,
    ("graddiff", "fo"): 0.3, ("graddiff", "so"): 2.0,
    ("po", "fo"): 1.0, ("po", "so"): 5.0,
    ("npo", "fo"): 5.0, ("npo", "so"): 1.0,
}

SCHEDULES = ("alternate", "combined")


def resolve_lr(method: str, optimizer: str, lr: float | None,
               lr_scale: float) -> float:
    if lr is not None:
        return lr
    return BASE_LR[(method, optimizer)] * lr_scale


def resolve_lambda(method: str, optimizer: str, lam: float | None) -> float:
    if lam is not None:
        return lam
    return BASE_LAMBDA[(method, optimizer)]


@dataclass(frozen=True)
class UnlearnTask:
    """What to unlearn: tokenized (prompt, answer) pairs plus method knobs."""

    forget: tuple
    retain: tuple
    method: str
    lam: float | None = None   # None picks the method/optimizer default
    beta: float = 1.0          # npo temperature
    reject_answers: tuple = ()  # token sequences; po substitutes from these

    def __post_init__(self):
        if self.method not in losses.METHODS:
            raise ValueError(
                f"method must be one of {losses.METHODS}, got {self.method!r}")
        if len(self.forget) == 0:
            raise ValueError("forget set must be non-empty")
        if len(self.retain) == 0:
            raise ValueError("retain set must be non-empty")
        if self.method == "po" and len(self.reject_answers) == 0:
            raise ValueError("po needs a non-empty reject answer pool")
        for i, answer in enumerate(self.reject_answers):
            if isinstance(answer, str) or len(answer) == 0:
                raise ValueError(
                    f"reject answer {i} must be a non-empty token sequence "
                    "(encode text answers first)")


@dataclass(frozen=True)
class UnlearnRunConfig:
    optimizer: str = "so"
    lr: float | None = None     # None: method default times lr_scale
    lr_scale: float = 1.0
    epochs: int = 5
    batch_size: int = 8
    seed: int = 0
    schedule: str = "alternate"
    weight_decay: float = 0.0   # fo only
    hessian_every: int = 1      # so only
    clip_threshold: float = 1.0  # so only

    def __post_init__(self):
        if self.optimizer not in ("fo", "so"):
            raise ValueError(f"optimizer must be 'fo' or 'so', got {self.optimizer!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(
                f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")


@dataclass(frozen=True)
class StepRecord:
    step: int
    mode: str      # "ascent" or "descent"
    loss: float    # objective value on the step's own batches
    forget_nll: float   # full forget-set mean NLL after the step
    retain_nll: float   # full retain-set mean NLL after the step
    update_norm: float


@dataclass
class UnlearnResult:
    model: TinyLM
    records: list = field(default_factory=list)
    epoch_forget_nll: list = field(default_factory=list)  # [0] = before any step
    epoch_retain_nll: list = field(default_factory=list)
    epoch_params: list = field(default_factory=list)
    notes: tuple = (LAMBDA_NOTE,)
    wall_seconds: float = 0.0


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    return [order[i:i + batch_size] for i in range(0, order.size, batch_size)]


def run_unlearning(model: TinyLM, task: UnlearnTask, config: UnlearnRunConfig,
                   epoch_callback=None) -> UnlearnResult:
    """Run the configured unlearning loop from the given model.

    The input model is not mutated. ``epoch_callback(epoch, model)`` is
    invoked with a snapshot after every epoch (and at epoch 0 before any
    update); it must treat the snapshot as read-only.
    """
    start = time.perf_counter()
    current = model.copy()
    lam = resolve_lambda(task.method, config.optimizer, task.lam)
    lr = resolve_lr(task.method, config.optimizer, config.lr, config.lr_scale)
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")

    dim = current.params.size
    if config.optimizer == "so":
        state = sophia_init(dim, lr, hessian_every=config.hessian_every,
                            clip_threshold=config.clip_threshold)
    else:
        state = adamw_init(dim, lr, weight_decay=config.weight_decay)

    reference = clone_as_reference(current) if task.method == "npo" else None
    descent_only = task.method in ("po", "npo") or config.schedule == "combined"
    shuffle_rng = rng_stream(config.seed, "unlearn-batch-order")
    target_rng = rng_stream(config.seed, "unlearn-po-targets")

    result = UnlearnResult(model=current)
    forget = list(task.forget)
    retain = list(task.retain)

    def full_nll(pairs) -> float:
        return float(np.mean(current.per_example_nll(pairs)))

    def objective(fb, rb, targets):
        if task.method == "ga":
            if lam == 0.0:
                return losses.ga_loss(current, fb)
            return losses.graddiff_loss(current, fb, rb, lam)
        if task.method == "graddiff":
            return losses.graddiff_loss(current, fb, rb, lam)
        if task.method == "po":
            return losses.po_loss(current, fb, targets, rb, lam)
        return losses.npo_loss(current, reference, fb, rb, lam, task.beta)

    def take_step(grad, mode):
        nonlocal state, current
        before = current.params
        if config.optimizer == "so":
            new_params, state = sophia_step(state, grad, before, mode=mode)
        else:
            new_params, state = adamw_step(state, grad, before, mode=mode)
        current = TinyLM(current.config, new_params)
        return float(np.linalg.norm(new_params - before))

    result.epoch_forget_nll.append(full_nll(forget))
    result.epoch_retain_nll.append(full_nll(retain))
    result.epoch_params.append(current.params.copy())
    if epoch_callback is not None:
        epoch_callback(0, current.copy())

    step_counter = 0
    for epoch in range(config.epochs):
        forget_order = shuffle_rng.permutation(len(forget))
        retain_order = shuffle_rng.permutation(len(retain))
        forget_batches = _batches(forget_order, config.batch_size)
        retain_batches = _batches(retain_order, config.batch_size)
        n_iter = max(len(forget_batches), len(retain_batches))
        if task.method == "po":
            epoch_targets = [
                task.reject_answers[int(target_rng.integers(len(task.reject_answers)))]
                for _ in range(len(forget))]
        for it in range(n_iter):
            fb_idx = forget_batches[it % len(forget_batches)]
            rb_idx = retain_batches[it % len(retain_batches)]
            fb = [forget[i] for i in fb_idx]
            rb = [retain[i] for i in rb_idx]
            targets = ([epoch_targets[i] for i in fb_idx]
                       if task.method == "po" else None)
            if descent_only:
                loss, grad = objective(fb, rb, targets)
                norm = take_step(grad, "descent")
                result.records.append(StepRecord(
                    step_counter, "descent", loss,
                    full_nll(forget), full_nll(retain), norm))
                step_counter += 1
            else:
                # ascent on the forget batch, then descent on the
                # lambda-scaled retain batch, one shared optimizer state
                fvals = current.per_example_nll(fb)
                norm = take_step(current.grad_nll(fb), "ascent")
                result.records.append(StepRecord(
                    step_counter, "ascent", float(np.mean(fvals)),
                    full_nll(forget), full_nll(retain), norm))
                step_counter += 1
                if lam > 0.0:
                    rvals = current.per_example_nll(rb)
                    coeffs = np.full(len(rb), lam / len(rb))
                    norm = take_step(current.grad_nll(rb, coeffs), "descent")
                    result.records.append(StepRecord(
                        step_counter, "descent", lam * float(np.mean(rvals)),
                        full_nll(forget), full_nll(retain), norm))
                    step_counter += 1
        result.epoch_forget_nll.append(full_nll(forget))
        result.epoch_retain_nll.append(full_nll(retain))
        result.epoch_params.append(current.params.copy())
        if epoch_callback is not None:
            epoch_callback(epoch + 1, current.copy())

    result.model = current
    result.wall_seconds = time.perf_counter() - start
    return result


# -- trajectory log ----------------------------------------------------------

TRAJECTORY_COLUMNS = ("step", "mode", "loss", "forget_nll", "retain_nll",
                      "update_norm")


def write_trajectory_log(records, path, notes=(LAMBDA_NOTE,)) -> None:
    """Line-delimited text log: '#' comment header, then one record per line
    with space-separated columns in TRAJECTORY_COLUMNS order."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# trajectory-log v1\n")
        for note in notes:
            fh.write(f"# note: {note}\n")
        fh.write("# columns: " + " ".join(TRAJECTORY_COLUMNS) + "\n")
        for r in records:
            fh.write(f"{r.step} {r.mode} {r.loss!r} {r.forget_nll!r} "
                     f"{r.retain_nll!r} {r.update_norm!r}\n")


def read_trajectory_log(path) -> list[StepRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != len(TRAJECTORY_COLUMNS):
                raise ValueError(
                    f"{path}: line {lineno}: expected "
                    f"{len(TRAJECTORY_COLUMNS)} columns, got {len(parts)}")
            records.append(StepRecord(
                step=int(parts[0]), mode=parts[1], loss=float(parts[2]),
                forget_nll=float(parts[3]), retain_nll=float(parts[4]),
                update_norm=float(parts[5])))
    return records
