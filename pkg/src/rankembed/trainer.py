"""Minibatch SGD for the ranking model.

Randomness is keyed off ``(seed, stream, counter)`` rather than a single
evolving generator, so a run can be resumed from a checkpoint at any batch
boundary and reproduce the uninterrupted run bit for bit:

* epoch ``e`` shuffles sentences and draws corruptions from ``[seed, 1, e]``;
* the dev pool is corrupted once from ``[seed, 2]``;
* every dev evaluation samples minibatches from ``[seed, 3]`` (the same
  sample each time, so successive points differ only through the params);
* the initial training-loss point uses ``[seed, 4]``;
* parameter initialization uses ``[seed, 0]``.
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .corpus import window_arrays
from .errors import (
    ChecksumError,
    DataError,
    DivergenceError,
    FormatError,
    TruncatedFileError,
    VersionMismatchError,
)
from .model import (
    ModelConfig,
    PairGradients,
    RankingParams,
    batch_backward,
    batch_losses,
    init_params,
    params_from_bytes,
    params_to_bytes,
)

log = logging.getLogger(__name__)

STATE_MAGIC = b"PGTS"
STATE_VERSION = 1
_STATE_HEADER = struct.Struct("<4sIQ")

_EVAL_CHUNK = 1 << 15
_EPOCH_CHUNK_SENTENCES = 2048


@dataclass
class TrainConfig:
    batch_size: int = 16
    base_lr: float = 0.1
    dev_sample_batches: int = 10_000
    max_examples: int | None = None
    max_epochs: int | None = None
    plateau_patience: int = 5
    plateau_min_delta: float = 0.0
    eval_every: int = 100_000
    seed: int = 0
    fan_in: bool = True
    allow_unk_centers: bool = False
    threads: int = 1
    dtype: str = "float64"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be > 0")
        if self.plateau_min_delta < 0:
            raise ValueError("plateau_min_delta must be >= 0")
        if self.eval_every < 1 or self.dev_sample_batches < 1:
            raise ValueError("eval_every and dev_sample_batches must be >= 1")


@dataclass(frozen=True)
class LayerRates:
    C: float
    W1: float
    b1: float
    W2: float
    b2: float

    @classmethod
    def from_config(cls, config: ModelConfig, base_lr: float, fan_in: bool = True) -> "LayerRates":
        """Divide the base rate by each layer's fan-in; the embedding layer counts as fan-in 1."""
        if not fan_in:
            return cls(base_lr, base_lr, base_lr, base_lr, base_lr)
        hidden_rate = base_lr / config.input_width
        out_rate = base_lr / config.hidden
        return cls(base_lr, hidden_rate, hidden_rate, out_rate, out_rate)


@dataclass
class TrainState:
    params: RankingParams
    seed: int
    examples_seen: int = 0
    history: list[tuple[int, float, float]] = field(default_factory=list)
    epoch: int = 0
    epoch_offset: int = 0
    best_params: RankingParams | None = None
    best_dev_loss: float = float("inf")
    evals_since_improvement: int = 0
    running_loss_sum: float = 0.0
    running_loss_count: int = 0

    def counters(self) -> dict:
        return {
            "seed": self.seed,
            "examples_seen": self.examples_seen,
            "history": [list(h) for h in self.history],
            "epoch": self.epoch,
            "epoch_offset": self.epoch_offset,
            "best_dev_loss": self.best_dev_loss if np.isfinite(self.best_dev_loss) else None,
            "evals_since_improvement": self.evals_since_improvement,
            "running_loss_sum": self.running_loss_sum,
            "running_loss_count": self.running_loss_count,
            "dtype": str(self.params.C.dtype),
        }

    def equals(self, other: "TrainState") -> bool:
        if self.counters() != other.counters() or not self.params.equals(other.params):
            return False
        if (self.best_params is None) != (other.best_params is None):
            return False
        return self.best_params is None or self.best_params.equals(other.best_params)


def new_state(model_config: ModelConfig, train_config: TrainConfig) -> TrainState:
    rng = np.random.default_rng([train_config.seed, 0])
    params = init_params(model_config, rng, dtype=np.dtype(train_config.dtype))
    return TrainState(params=params, seed=train_config.seed)


def _as_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray):
        return batch
    originals = np.asarray([ex.original for ex in batch], dtype=np.int64)
    corrupted = np.asarray([ex.corrupted for ex in batch], dtype=np.int64)
    return originals, corrupted


def _gradients(params, originals, corrupted, threads: int) -> tuple[np.ndarray, PairGradients]:
    B = len(originals)
    if threads <= 1 or B < 2 * threads:
        return batch_backward(params, originals, corrupted)
    shards = np.array_split(np.arange(B), threads)
    with ThreadPoolExecutor(threads) as pool:
        parts = list(
            pool.map(lambda s: batch_backward(params, originals[s], corrupted[s], scale=1.0 / B), shards)
        )
    losses = np.concatenate([p[0] for p in parts])
    grads = parts[0][1]
    for _, g in parts[1:]:
        grads = grads + g
    return losses, grads


def _apply(params: RankingParams, grads: PairGradients, rates: LayerRates) -> None:
    params.C[grads.C_rows] -= rates.C * grads.C_grad
    params.W1 -= rates.W1 * grads.W1
    params.b1 -= rates.b1 * grads.b1
    params.W2 -= rates.W2 * grads.W2
    params.b2 -= rates.b2 * grads.b2


def _step(params, originals, corrupted, rates, threads, examples_seen) -> float:
    losses, grads = _gradients(params, originals, corrupted, threads)
    if not (np.isfinite(losses).all() and grads.is_finite()):
        bad = [
            name
            for name, g in zip(("C", "W1", "b1", "W2", "b2"), (grads.C_grad, grads.W1, grads.b1, grads.W2, grads.b2))
            if not np.isfinite(g).all()
        ]
        raise DivergenceError(
            f"divergence: non-finite gradient after {examples_seen} examples "
            f"(groups {bad or 'none'}, max |param| {max(float(np.abs(t).max()) for t in params.tensors()):.3g})"
        )
    if losses.any():
        _apply(params, grads, rates)
    return float(losses.mean())


def sgd_step(state: TrainState, batch, rates: LayerRates, threads: int = 1) -> TrainState:
    """Update ``state`` in place with one minibatch and return it.

    ``batch`` is a sequence of :class:`WindowExample` or an
    ``(originals, corrupted)`` pair of int arrays.
    """
    originals, corrupted = _as_arrays(batch)
    if len(originals) == 0:
        raise ValueError("empty batch")
    loss = _step(state.params, originals, corrupted, rates, threads, state.examples_seen)
    state.examples_seen += len(originals)
    state.running_loss_sum += loss * len(originals)
    state.running_loss_count += len(originals)
    return state


def mean_pair_loss(params: RankingParams, originals: np.ndarray, corrupted: np.ndarray) -> float:
    total = 0.0
    for start in range(0, len(originals), _EVAL_CHUNK):
        sl = slice(start, start + _EVAL_CHUNK)
        total += float(batch_losses(params, originals[sl], corrupted[sl]).sum())
    return total / len(originals)


def estimate_dev_loss(
    params: RankingParams,
    dev: tuple[np.ndarray, np.ndarray],
    sample_batches: int,
    rng: np.random.Generator,
    batch_size: int = 16,
) -> float:
    """Mean pair loss over ``sample_batches`` minibatches drawn with replacement from ``dev``."""
    originals, corrupted = _as_arrays(dev)
    if len(originals) == 0:
        raise DataError("empty development set")
    idx = rng.integers(0, len(originals), size=sample_batches * batch_size)
    return mean_pair_loss(params, originals[idx], corrupted[idx])


def build_pool(
    sentences: Sequence[Sequence[int]], n: int, vocab_size: int, rng: np.random.Generator, allow_unk_centers=False
) -> tuple[np.ndarray, np.ndarray]:
    """All window pairs of ``sentences``, concatenated in order."""
    origs, corrs = [], []
    for sent in sentences:
        o, c = window_arrays(sent, n, vocab_size, rng, allow_unk_centers=allow_unk_centers)
        origs.append(o)
        corrs.append(c)
    if not origs:
        width = 2 * n + 1
        return np.empty((0, width), dtype=np.int64), np.empty((0, width), dtype=np.int64)
    return np.concatenate(origs), np.concatenate(corrs)


def epoch_stream(
    sentences: Sequence[Sequence[int]],
    n: int,
    vocab_size: int,
    seed: int,
    epoch: int,
    allow_unk_centers: bool = False,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Window pairs for one epoch: shuffled sentences, fresh corruptions, emitted in chunks."""
    rng = np.random.default_rng([seed, 1, epoch])
    order = rng.permutation(len(sentences))
    for start in range(0, len(order), _EPOCH_CHUNK_SENTENCES):
        chunk = [sentences[i] for i in order[start : start + _EPOCH_CHUNK_SENTENCES]]
        o, c = build_pool(chunk, n, vocab_size, rng, allow_unk_centers)
        if len(o):
            yield o, c


def _batches(stream, batch_size: int, skip: int):
    """Re-chunk a stream of window arrays into minibatches, skipping the first ``skip`` pairs."""
    buf_o: list[np.ndarray] = []
    buf_c: list[np.ndarray] = []
    held = 0
    for o, c in stream:
        if skip:
            drop = min(skip, len(o))
            o, c, skip = o[drop:], c[drop:], skip - drop
            if not len(o):
                continue
        buf_o.append(o)
        buf_c.append(c)
        held += len(o)
        if held < batch_size:
            continue
        o, c = np.concatenate(buf_o), np.concatenate(buf_c)
        whole = (len(o) // batch_size) * batch_size
        for start in range(0, whole, batch_size):
            yield o[start : start + batch_size], c[start : start + batch_size]
        buf_o, buf_c = [o[whole:]], [c[whole:]]
        held = len(o) - whole
    if held:
        yield np.concatenate(buf_o), np.concatenate(buf_c)


def _evaluate(state: TrainState, dev_pool, config: TrainConfig, train_loss: float) -> bool:
    """Record a history point; returns True when the plateau rule says stop."""
    dev_loss = estimate_dev_loss(
        state.params, dev_pool, config.dev_sample_batches, np.random.default_rng([config.seed, 3]), config.batch_size
    )
    state.history.append((state.examples_seen, train_loss, dev_loss))
    log.info("examples=%d train_loss=%.5f dev_loss=%.5f", state.examples_seen, train_loss, dev_loss)
    if dev_loss < state.best_dev_loss - config.plateau_min_delta:
        state.best_dev_loss = dev_loss
        state.best_params = state.params.copy()
        state.evals_since_improvement = 0
        return False
    state.evals_since_improvement += 1
    return state.evals_since_improvement >= config.plateau_patience


def train(
    train_sentences: Sequence[Sequence[int]],
    dev_sentences: Sequence[Sequence[int]],
    model_config: ModelConfig,
    config: TrainConfig,
    state: TrainState | None = None,
    on_eval: Callable[[TrainState], None] | None = None,
) -> TrainState:
    """Run SGD until ``max_examples``, ``max_epochs`` or a dev-loss plateau.

    Dev loss is evaluated every ``eval_every`` examples. Passing a ``state``
    loaded from a checkpoint continues that run.
    """
    if not train_sentences:
        raise DataError("empty training corpus")
    if not dev_sentences:
        raise DataError("empty development set")
    if config.max_examples is None and config.max_epochs is None and config.plateau_patience < 1:
        raise ValueError("training has no stopping bound")
    if state is None:
        state = new_state(model_config, config)
    elif state.params.config != model_config:
        raise DataError(f"checkpoint config {state.params.config} does not match {model_config}")
    params = state.params
    n, V = model_config.n, model_config.vocab_size
    rates = LayerRates.from_config(model_config, config.base_lr, config.fan_in)
    dev_pool = build_pool(dev_sentences, n, V, np.random.default_rng([config.seed, 2]), config.allow_unk_centers)
    if not len(dev_pool[0]):
        raise DataError("development set produced no windows")

    def limit_reached() -> bool:
        return config.max_examples is not None and state.examples_seen >= config.max_examples

    if not state.history and not limit_reached():
        sample = build_pool(
            train_sentences[:2000], n, V, np.random.default_rng([config.seed, 4]), config.allow_unk_centers
        )
        initial_train = estimate_dev_loss(
            params, sample, config.dev_sample_batches, np.random.default_rng([config.seed, 3]), config.batch_size
        )
        stop = _evaluate(state, dev_pool, config, initial_train)
        if on_eval:
            on_eval(state)
        if stop:
            return state

    while not limit_reached() and (config.max_epochs is None or state.epoch < config.max_epochs):
        stream = epoch_stream(train_sentences, n, V, config.seed, state.epoch, config.allow_unk_centers)
        stop = False
        for o, c in _batches(stream, config.batch_size, state.epoch_offset):
            if config.max_examples is not None:
                room = config.max_examples - state.examples_seen
                o, c = o[:room], c[:room]
            before = state.examples_seen
            sgd_step(state, (o, c), rates, config.threads)
            state.epoch_offset += len(o)
            if state.examples_seen // config.eval_every > before // config.eval_every:
                train_loss = state.running_loss_sum / state.running_loss_count
                state.running_loss_sum, state.running_loss_count = 0.0, 0
                stop = _evaluate(state, dev_pool, config, train_loss)
                if on_eval:
                    on_eval(state)
            if stop or limit_reached():
                break
        if stop:
            break
        if not limit_reached():
            state.epoch += 1
            state.epoch_offset = 0
        else:
            break
    return state


def state_to_bytes(state: TrainState) -> bytes:
    meta = json.dumps(state.counters(), sort_keys=True).encode("utf-8")
    body = [struct.pack("<Q", len(meta)), meta, params_to_bytes(state.params)]
    if state.best_params is not None:
        body += [b"\x01", params_to_bytes(state.best_params)]
    else:
        body.append(b"\x00")
    payload = b"".join(body)
    head = _STATE_HEADER.pack(STATE_MAGIC, STATE_VERSION, len(payload))
    return head + payload + struct.pack("<I", zlib.crc32(head + payload))


def state_from_bytes(data: bytes) -> TrainState:
    if len(data) < 4 or data[:4] != STATE_MAGIC:
        raise FormatError("bad format: missing PGTS magic bytes")
    if len(data) < _STATE_HEADER.size:
        raise TruncatedFileError("truncated checkpoint header")
    _, version, payload_len = _STATE_HEADER.unpack_from(data)
    if version != STATE_VERSION:
        raise VersionMismatchError(f"unsupported checkpoint version {version}")
    end = _STATE_HEADER.size + payload_len
    if len(data) < end + 4:
        raise TruncatedFileError(f"truncated checkpoint: {len(data)} of {end + 4} bytes")
    if len(data) > end + 4:
        raise FormatError("trailing bytes after checkpoint")
    (crc,) = struct.unpack_from("<I", data, end)
    if zlib.crc32(data[:end]) != crc:
        raise ChecksumError("checkpoint checksum mismatch")
    payload = data[_STATE_HEADER.size : end]
    (meta_len,) = struct.unpack_from("<Q", payload)
    meta = json.loads(payload[8 : 8 + meta_len].decode("utf-8"))
    offset = 8 + meta_len
    dtype = np.dtype(meta["dtype"])
    params, used = params_from_bytes(payload[offset:])
    offset += used
    best = None
    if payload[offset : offset + 1] == b"\x01":
        best, _ = params_from_bytes(payload[offset + 1 :])
        best = best.astype(dtype)
    return TrainState(
        params=params.astype(dtype),
        seed=meta["seed"],
        examples_seen=meta["examples_seen"],
        history=[tuple(h) for h in meta["history"]],
        epoch=meta["epoch"],
        epoch_offset=meta["epoch_offset"],
        best_params=best,
        best_dev_loss=float("inf") if meta["best_dev_loss"] is None else meta["best_dev_loss"],
        evals_since_improvement=meta["evals_since_improvement"],
        running_loss_sum=meta["running_loss_sum"],
        running_loss_count=meta["running_loss_count"],
    )


def checkpoint_save(state: TrainState, path: str | Path) -> None:
    Path(path).write_bytes(state_to_bytes(state))


def checkpoint_load(path: str | Path) -> TrainState:
    return state_from_bytes(Path(path).read_bytes())


def write_learning_curve(state: TrainState, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("examples,train_loss,dev_loss\n")
        for seen, tr, dv in state.history:
            f.write(f"{seen},{tr!r},{dv!r}\n")


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)


def smooth_median3(values: Sequence[float]) -> list[float]:
    """Medians of every complete window of three consecutive values (length ``len(values) - 2``)."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 3:
        return v.tolist()
    return np.median(np.lib.stride_tricks.sliding_window_view(v, 3), axis=1).tolist()
