"""Shared float64 numeric primitives.

Everything in this package runs in float64. The models are small enough
that we can afford it, and it keeps oracle tolerances tight and runs
reproducible across machines.
"""

from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np

Array = np.ndarray

_MASK64 = (1 << 64) - 1


def check_finite(values: Array, what: str = "array") -> None:
    """Raise FloatingPointError if any entry is NaN or infinite."""
    values = np.asarray(values)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values.reshape(-1)))[0])
        raise FloatingPointError(f"non-finite entry in {what} at flat index {bad}")


def as_params(values) -> Array:
    """Coerce to a contiguous 1-D float64 vector, rejecting non-finite entries."""
    vec = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
    check_finite(vec, "parameter vector")
    return vec


def clip_magnitude(values: Array, bound: float) -> Array:
    """Elementwise clip to the symmetric interval [-bound, bound]."""
    if bound < 0:
        raise ValueError(f"clip bound must be nonnegative, got {bound}")
    return np.clip(values, -bound, bound)


def rng_stream(seed: int, purpose: str) -> np.random.Generator:
    """Independent reproducible random stream keyed by (seed, purpose).

    The purpose string is hashed into the Philox spawn key, so each named
    consumer gets its own counter-based stream. Adding a new consumer with
    a fresh purpose never perturbs the draws of existing ones, which is
    what keeps end-to-end runs byte-stable as the code grows.
    """
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    seq = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=(key,))
    return np.random.Generator(np.random.Philox(seq))


def finite_diff_gradient(f: Callable[[Array], float], theta: Array,
                         step: float = 1e-5) -> Array:
    """Central-difference gradient estimate, one coordinate at a time.

    This is the reference oracle for every analytic gradient in the
    package; it is deliberately simple and makes no attempt to be fast.
    """
    if step <= 0:
        raise ValueError(f"finite difference step must be positive, got {step}")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        probe = theta.copy()
        probe[i] = theta[i] + step
        f_plus = float(f(probe))
        probe[i] = theta[i] - step
        f_minus = float(f(probe))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite loss while probing coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_error(estimate: Array, reference: Array) -> float:
    """||est - ref||_2 / max(||ref||_2, 1e-12), the gradient-check metric.

    The aggregate L2 form is the usual gradcheck choice: it is insensitive
    to individual coordinates whose true value happens to sit near zero,
    where an elementwise ratio would just measure finite-difference noise.
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if estimate.shape != reference.shape:
        raise ValueError(f"shape mismatch {estimate.shape} vs {reference.shape}")
    denom = max(float(np.linalg.norm(reference)), 1e-12)
    return float(np.linalg.norm(estimate - reference)) / denom
