"""Tiny causal token-prediction models with exact analytic gradients.

Two architectures share one parameter-vector interface:

* ``linear``: a bigram logit table. Position t+1 is predicted from the
  logit row of token t alone (uniform before the first token). Small
  enough to check by hand, which makes it the workhorse of the tests.
* ``mlp``: learned token embeddings over a fixed causal window of the
  most recent ``window`` tokens, concatenated and pushed through
  ``depth - 1`` tanh hidden layers to vocabulary logits. Positions
  before the start of the sequence use a dedicated pad embedding row.

Everything is float64 and deterministic. Gradients are derived by hand
(no autodiff) and are validated against central finite differences in
the test suite.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass

import numpy as np

from .numerics import Array, as_params, check_finite, rng_stream

PAD_SLOT = -1  # sentinel meaning "before the start of the sequence"

_CHECKPOINT_FORMAT = "tinylm-checkpoint"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 64
    context_window: int = 32
    hidden_dim: int = 32
    depth: int = 2
    arch: str = "mlp"
    embed_dim: int = 8
    window: int = 16

    def __post_init__(self):
        if self.arch not in ("mlp", "linear"):
            raise ValueError(f"unknown arch {self.arch!r}, expected 'mlp' or 'linear'")
        for name in ("vocab_size", "context_window", "hidden_dim", "depth",
                     "embed_dim", "window"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")

    def layer_dims(self) -> list[int]:
        """Affine layer sizes for the mlp arch: input, hiddens, vocab logits."""
        return ([self.window * self.embed_dim]
                + [self.hidden_dim] * (self.depth - 1)
                + [self.vocab_size])


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) layout of the flat parameter vector."""
    if config.arch == "linear":
        return [("table", (config.vocab_size, config.vocab_size))]
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("embed", (config.vocab_size + 1, config.embed_dim)),  # row V = pad slot
    ]
    dims = config.layer_dims()
    for i in range(len(dims) - 1):
        shapes.append((f"w{i}", (dims[i], dims[i + 1])))
        shapes.append((f"b{i}", (dims[i + 1],)))
    return shapes


def param_count(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_shapes(config))


def unpack_params(config: ModelConfig, params: Array) -> dict[str, Array]:
    """Views into the flat vector, keyed by tensor name. Writes propagate."""
    expected = param_count(config)
    if params.shape != (expected,):
        raise ValueError(f"expected {expected} parameters, got shape {params.shape}")
    out = {}
    offset = 0
    for name, shape in param_shapes(config):
        size = int(np.prod(shape))
        out[name] = params[offset:offset + size].reshape(shape)
        offset += size
    return out


def init_params(config: ModelConfig, seed: int) -> Array:
    """Uniform(-0.1, 0.1) weights and embeddings, zero biases."""
    rng = rng_stream(seed, "model-init")
    pieces = []
    for name, shape in param_shapes(config):
        if name.startswith("b"):
            pieces.append(np.zeros(shape, dtype=np.float64).reshape(-1))
        else:
            pieces.append(rng.uniform(-0.1, 0.1, size=int(np.prod(shape))))
    return np.concatenate(pieces)


def _as_tokens(tokens, vocab_size: int, what: str) -> np.ndarray:
    arr = np.asarray(list(tokens), dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError(f"{what} must be a flat token sequence")
    if arr.size and (arr.min() < 0 or arr.max() >= vocab_size):
        raise ValueError(f"{what} contains token ids outside [0, {vocab_size})")
    return arr


@dataclass
class TinyLM:
    """A parameter vector plus the config that tells us how to read it."""

    config: ModelConfig
    params: Array

    def __post_init__(self):
        self.params = as_params(self.params)
        expected = param_count(self.config)
        if self.params.size != expected:
            raise ValueError(
                f"parameter vector has {self.params.size} entries, "
                f"config implies {expected}")

    def copy(self) -> "TinyLM":
        return TinyLM(self.config, self.params.copy())

    # -- forward ---------------------------------------------------------

    def _row_logits(self, tokens: np.ndarray, ends: np.ndarray,
                    starts: np.ndarray | None = None, want_cache: bool = False):
        """Logits for prediction rows whose causal context ends at ``ends``.

        ends[r] is the index of the last visible token for row r. Rows may
        come from several sequences packed into one token array, so
        starts[r] marks where row r's own sequence begins; positions before
        it are padding, and ends[r] == starts[r] - 1 conditions on nothing.
        """
        cfg = self.config
        if starts is None:
            starts = np.zeros_like(ends)
        tensors = unpack_params(cfg, self.params)
        if tokens.size == 0:
            # all rows must then be start-of-sequence rows; the dummy token
            # is never read because every gather index is masked
            tokens = np.zeros(1, dtype=np.int64)
        if cfg.arch == "linear":
            prev = np.where(ends >= starts, tokens[np.maximum(ends, 0)], PAD_SLOT)
            logits = np.zeros((ends.size, cfg.vocab_size))
            seen = prev >= 0
            logits[seen] = tensors["table"][prev[seen]]
            cache = {"prev": prev} if want_cache else None
            return logits, cache

        w = cfg.window
        idx = ends[:, None] - np.arange(w - 1, -1, -1)[None, :]
        valid = idx >= starts[:, None]
        slots = np.where(valid, tokens[np.maximum(idx, 0)], cfg.vocab_size)
        act = tensors["embed"][slots].reshape(ends.size, w * cfg.embed_dim)
        acts = [act]
        n_layers = cfg.depth
        for i in range(n_layers):
            act = act @ tensors[f"w{i}"] + tensors[f"b{i}"]
            if i < n_layers - 1:
                act = np.tanh(act)
                acts.append(act)
        cache = {"slots": slots, "acts": acts} if want_cache else None
        return act, cache

    def forward_logits(self, context) -> Array:
        """(L, V) logits where row t predicts position t+1 from tokens 0..t.

        The last row is therefore the distribution over the continuation
        of the whole context.
        """
        cfg = self.config
        tokens = _as_tokens(context, cfg.vocab_size, "context")
        if tokens.size > cfg.context_window:
            raise ValueError(
                f"context of {tokens.size} tokens exceeds context_window "
                f"{cfg.context_window}; caller must truncate")
        ends = np.arange(tokens.size)
        logits, _ = self._row_logits(tokens, ends)
        return logits

    def per_token_logprobs(self, x, y) -> Array:
        """log p(y_t | x, y_<t) for each answer token, shape (len(y),)."""
        cfg = self.config
        xt = _as_tokens(x, cfg.vocab_size, "prompt")
        yt = _as_tokens(y, cfg.vocab_size, "answer")
        if yt.size == 0:
            raise ValueError("answer must contain at least one token")
        full = np.concatenate([xt, yt])
        if full.size > cfg.context_window:
            raise ValueError(
                f"sequence of {full.size} tokens exceeds context_window "
                f"{cfg.context_window}")
        ends = np.arange(xt.size - 1, full.size - 1)
        logits, _ = self._row_logits(full, ends)
        logp = _log_softmax(logits)
        return logp[np.arange(yt.size), yt]

    def sequence_nll(self, x, y) -> float:
        """Mean negative log-likelihood per answer token."""
        return float(-np.mean(self.per_token_logprobs(x, y)))

    def per_example_nll(self, batch) -> Array:
        """sequence_nll for every (x, y) pair in one batched forward pass."""
        tokens, ends, targets, rows, _ = self._batch_rows(batch, None)
        logits, _ = self._row_logits(tokens, ends, rows["starts"])
        logp = _log_softmax(logits)
        picked = logp[np.arange(targets.size), targets]
        out = np.zeros(len(batch))
        np.add.at(out, rows["example"], -picked * rows["inv_len"])
        return out

    # -- gradients -------------------------------------------------------

    def _batch_rows(self, batch, coeffs):
        """Flatten a batch of (x, y) pairs into prediction rows.

        Returns the concatenated token array, per-row context end indices
        into it, per-row targets, and per-row weights so that
        sum_rows weight_r * nll_r == sum_e coeffs[e] * sequence_nll_e.
        """
        cfg = self.config
        if len(batch) == 0:
            raise ValueError("batch must contain at least one example")
        if coeffs is None:
            coeffs = np.full(len(batch), 1.0 / len(batch))
        else:
            coeffs = np.asarray(coeffs, dtype=np.float64)
            if coeffs.shape != (len(batch),):
                raise ValueError(
                    f"need one coefficient per example, got {coeffs.shape} "
                    f"for {len(batch)} examples")
        all_tokens, all_ends, all_starts, all_targets = [], [], [], []
        example_id, inv_len, weights = [], [], []
        offset = 0
        for e, (x, y) in enumerate(batch):
            xt = _as_tokens(x, cfg.vocab_size, f"prompt {e}")
            yt = _as_tokens(y, cfg.vocab_size, f"answer {e}")
            if yt.size == 0:
                raise ValueError(f"answer {e} must contain at least one token")
            full = np.concatenate([xt, yt])
            if full.size > cfg.context_window:
                raise ValueError(
                    f"example {e} has {full.size} tokens, exceeding "
                    f"context_window {cfg.context_window}")
            all_tokens.append(full)
            all_ends.append(np.arange(xt.size - 1, full.size - 1) + offset)
            all_starts.append(np.full(yt.size, offset))
            all_targets.append(yt)
            example_id.append(np.full(yt.size, e))
            inv_len.append(np.full(yt.size, 1.0 / yt.size))
            weights.append(np.full(yt.size, coeffs[e] / yt.size))
            offset += full.size
        rows = {
            "starts": np.concatenate(all_starts),
            "example": np.concatenate(example_id),
            "inv_len": np.concatenate(inv_len),
            "weight": np.concatenate(weights),
        }
        return (np.concatenate(all_tokens), np.concatenate(all_ends),
                np.concatenate(all_targets), rows, coeffs)

    def grad_nll(self, batch, coeffs=None) -> Array:
        """Flat gradient of sum_e coeffs[e] * sequence_nll(x_e, y_e).

        With coeffs omitted this is the gradient of the batch-mean NLL.
        """
        cfg = self.config
        tokens, ends, targets, rows, _ = self._batch_rows(batch, coeffs)
        logits, cache = self._row_logits(tokens, ends, rows["starts"],
                                         want_cache=True)
        probs = _softmax(logits)
        dlogits = probs * rows["weight"][:, None]
        dlogits[np.arange(targets.size), targets] -= rows["weight"]

        tensors = unpack_params(cfg, self.params)
        grad = np.zeros_like(self.params)
        gtensors = unpack_params(cfg, grad)

        if cfg.arch == "linear":
            prev = cache["prev"]
            seen = prev >= 0
            np.add.at(gtensors["table"], prev[seen], dlogits[seen])
            return grad

        acts = cache["acts"]
        delta = dlogits
        for i in range(cfg.depth - 1, -1, -1):
            gtensors[f"w{i}"] += acts[i].T @ delta
            gtensors[f"b{i}"] += delta.sum(axis=0)
            if i > 0:
                delta = (delta @ tensors[f"w{i}"].T) * (1.0 - acts[i] ** 2)
            else:
                delta = delta @ tensors[f"w{i}"].T
        dembed = delta.reshape(-1, cfg.window, cfg.embed_dim)
        np.add.at(gtensors["embed"], cache["slots"], dembed)
        return grad

    # -- generation ------------------------------------------------------

    def greedy_decode(self, prompt, max_new_tokens: int, eos_id: int | None = None):
        """Argmax continuation of the prompt (ties break to the lowest id).

        Generation stops after ``max_new_tokens`` tokens or once ``eos_id``
        is produced; the end token, if produced, is included in the output.
        Conditioning only ever sees the trailing ``window`` tokens, so the
        running sequence may grow past context_window without error.
        """
        cfg = self.config
        if max_new_tokens < 0:
            raise ValueError("max_new_tokens must be nonnegative")
        tokens = list(_as_tokens(prompt, cfg.vocab_size, "prompt"))
        out = []
        for _ in range(max_new_tokens):
            arr = np.asarray(tokens, dtype=np.int64)
            logits, _ = self._row_logits(arr, np.asarray([arr.size - 1]))
            nxt = int(np.argmax(logits[0]))
            out.append(nxt)
            tokens.append(nxt)
            if eos_id is not None and nxt == eos_id:
                break
        return out

    # -- persistence -----------------------------------------------------

    def save(self, path) -> None:
        """Write a checkpoint: one canonical JSON header line, then raw
        little-endian float64 parameter bytes. Byte-stable for fixed
        (config, params)."""
        header = {
            "format": _CHECKPOINT_FORMAT,
            "version": _CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "dtype": "<f8",
            "count": int(self.params.size),
        }
        blob = self.params.astype("<f8").tobytes()
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True,
                                separators=(",", ":")).encode("ascii"))
            fh.write(b"\n")
            fh.write(blob)

    @classmethod
    def load(cls, path) -> "TinyLM":
        with open(path, "rb") as fh:
            raw = fh.read()
        newline = raw.find(b"\n")
        if newline < 0:
            raise ValueError(f"malformed checkpoint {path}: missing header line")
        try:
            header = json.loads(raw[:newline].decode("ascii"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"malformed checkpoint {path}: {exc}") from None
        if not isinstance(header, dict) or header.get("format") != _CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a model checkpoint")
        if header.get("version") != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        if header.get("dtype") != "<f8":
            raise ValueError(f"unsupported checkpoint dtype {header.get('dtype')}")
        try:
            config = ModelConfig(**header["config"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed checkpoint config in {path}: {exc}") from None
        count = header.get("count")
        blob = raw[newline + 1:]
        if not isinstance(count, int) or len(blob) != 8 * count:
            raise ValueError(
                f"checkpoint {path} body has {len(blob)} bytes, header "
                f"promises {count} float64 values")
        params = np.frombuffer(blob, dtype="<f8").astype(np.float64)
        check_finite(params, "checkpoint parameters")
        return cls(config, params)


def _log_softmax(logits: Array) -> Array:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _softmax(logits: Array) -> Array:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=-1, keepdims=True)


def clone_as_reference(model: TinyLM) -> TinyLM:
    """Frozen snapshot used as the reference policy in preference losses."""
    return copy.deepcopy(model)
