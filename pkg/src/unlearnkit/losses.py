"""Unlearning objectives.

Every function returns ``(loss, grad)`` written for a minimizer: running
plain gradient descent on any of these objectives performs the intended
unlearning update. Gradient ascent on the forget set is therefore
expressed as descent on a negated forget NLL.

Methods:

* ``ga``        negated mean forget NLL (pure ascent on forget).
* ``graddiff``  ga plus ``lam`` times mean retain NLL, the
                "forget up, retain down" difference objective.
* ``po``        preference-style descent toward substitute reject
                answers on forget prompts, plus the retain term.
* ``npo``       smooth preference objective against a frozen reference
                model; its strength per example saturates as the model
                drifts from the reference, which keeps late steps tame.
"""

from __future__ import annotations

import numpy as np

from .model import TinyLM
from .numerics import Array

METHODS = ("ga", "graddiff", "po", "npo")


def _sigmoid(x: Array) -> Array:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x: Array) -> Array:
    return np.logaddexp(0.0, x)


def ga_loss(model: TinyLM, forget) -> tuple[float, Array]:
    """Negated mean NLL over the forget batch."""
    if len(forget) == 0:
        raise ValueError("forget batch must be non-empty")
    nll = model.per_example_nll(forget)
    coeffs = np.full(len(forget), -1.0 / len(forget))
    return float(-np.mean(nll)), model.grad_nll(forget, coeffs)


def graddiff_loss(model: TinyLM, forget, retain, lam: float) -> tuple[float, Array]:
    """ga plus ``lam`` * mean retain NLL. ``lam == 0`` reduces exactly to ga."""
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    loss, grad = ga_loss(model, forget)
    if lam == 0.0:
        return loss, grad
    if len(retain) == 0:
        raise ValueError("retain batch must be non-empty when lam > 0")
    retain_nll = model.per_example_nll(retain)
    coeffs = np.full(len(retain), lam / len(retain))
    return (loss + lam * float(np.mean(retain_nll)),
            grad + model.grad_nll(retain, coeffs))


def po_loss(model: TinyLM, forget, targets, retain, lam: float) -> tuple[float, Array]:
    """Mean NLL of substitute answers on forget prompts, plus the retain term.

    ``targets[e]`` is the token sequence the model should prefer for the
    prompt of ``forget[e]``; the true forget answers are ignored.
    """
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    if len(forget) == 0:
        raise ValueError("forget batch must be non-empty")
    if len(targets) != len(forget):
        raise ValueError(
            f"need one substitute answer per forget example, got "
            f"{len(targets)} for {len(forget)}")
    substituted = [(x, tgt) for (x, _), tgt in zip(forget, targets)]
    nll = model.per_example_nll(substituted)
    loss = float(np.mean(nll))
    grad = model.grad_nll(substituted)
    if lam > 0.0:
        if len(retain) == 0:
            raise ValueError("retain batch must be non-empty when lam > 0")
        retain_nll = model.per_example_nll(retain)
        coeffs = np.full(len(retain), lam / len(retain))
        loss += lam * float(np.mean(retain_nll))
        grad = grad + model.grad_nll(retain, coeffs)
    return loss, grad


def npo_loss(model: TinyLM, reference: TinyLM, forget, retain,
             lam: float, beta: float) -> tuple[float, Array]:
    """Reference-anchored forget objective plus the retain term.

    Per forget example the objective is

        (2 / beta) * softplus(beta * (nll_reference - nll_model))

    averaged over the batch, where the NLLs are per-token means, so the
    margin is the log of the ratio of per-token geometric-mean answer
    probabilities and sequence length never inflates it. At
    model == reference every margin is zero and the gradient direction
    coincides with plain ascent on the forget NLL; once the model
    assigns the forget answers far less mass than the reference, the
    sigmoid weight decays toward zero and the example effectively drops
    out, which keeps late steps tame.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    if len(forget) == 0:
        raise ValueError("forget batch must be non-empty")
    if reference.config != model.config:
        raise ValueError("reference model must share the model config")
    nll_model = model.per_example_nll(forget)
    nll_ref = reference.per_example_nll(forget)
    margin = nll_ref - nll_model  # log of the per-token probability ratio
    n = len(forget)
    loss = float(np.mean((2.0 / beta) * _softplus(beta * margin)))
    coeffs = -(2.0 / n) * _sigmoid(beta * margin)
    grad = model.grad_nll(forget, coeffs)
    if lam > 0.0:
        if len(retain) == 0:
            raise ValueError("retain batch must be non-empty when lam > 0")
        retain_nll = model.per_example_nll(retain)
        rcoeffs = np.full(len(retain), lam / len(retain))
        loss += lam * float(np.mean(retain_nll))
        grad = grad + model.grad_nll(retain, rcoeffs)
    return loss, grad
