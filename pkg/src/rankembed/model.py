"""Window-scoring network trained with a pairwise ranking hinge loss.

A window of ``2n+1`` token ids is embedded through ``C`` and concatenated
into ``P``; the score is ``W2 . tanh(W1 P + b1) + b2``. Training pairs a
genuine window with a copy whose center word was replaced, and penalizes
``max(0, 1 - score(original) + score(corrupted))``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import WindowExample
from .errors import FormatError, TruncatedFileError, VersionMismatchError

MAGIC = b"PGEM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sI4Q")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n: int = 2
    dim: int = 64
    hidden: int = 32

    def __post_init__(self) -> None:
        if self.n < 0 or min(self.vocab_size, self.dim, self.hidden) < 1:
            raise ValueError(f"invalid model config {self}")

    @property
    def window(self) -> int:
        return 2 * self.n + 1

    @property
    def input_width(self) -> int:
        return self.window * self.dim


def parameter_count(config: ModelConfig) -> int:
    return (
        config.window * config.dim * config.hidden
        + config.hidden
        + config.hidden
        + 1
        + config.vocab_size * config.dim
    )


@dataclass
class RankingParams:
    config: ModelConfig
    C: np.ndarray  # (V, M)
    W1: np.ndarray  # (H, (2n+1)M)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (H,)
    b2: np.ndarray  # 0-d

    GROUPS = ("C", "W1", "b1", "W2", "b2")

    def tensors(self) -> list[np.ndarray]:
        return [getattr(self, g) for g in self.GROUPS]

    def size(self) -> int:
        return sum(t.size for t in self.tensors())

    def copy(self) -> "RankingParams":
        return RankingParams(self.config, *(t.copy() for t in self.tensors()))

    def astype(self, dtype) -> "RankingParams":
        return RankingParams(self.config, *(t.astype(dtype) for t in self.tensors()))

    def equals(self, other: "RankingParams") -> bool:
        """Bitwise equality of all tensors."""
        return self.config == other.config and all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.tensors(), other.tensors())
        )


def init_params(config: ModelConfig, rng: np.random.Generator, dtype=np.float64) -> RankingParams:
    """Embeddings ~ U[-0.5, 0.5]; weight layers ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)]; zero biases."""
    C = rng.uniform(-0.5, 0.5, size=(config.vocab_size, config.dim))
    r1 = 1.0 / np.sqrt(config.input_width)
    W1 = rng.uniform(-r1, r1, size=(config.hidden, config.input_width))
    r2 = 1.0 / np.sqrt(config.hidden)
    W2 = rng.uniform(-r2, r2, size=config.hidden)
    return RankingParams(
        config,
        C.astype(dtype),
        W1.astype(dtype),
        np.zeros(config.hidden, dtype=dtype),
        W2.astype(dtype),
        np.zeros((), dtype=dtype),
    )


@dataclass
class ScoreTrace:
    P: np.ndarray
    A: np.ndarray
    score: float


def _check_ids(ids: np.ndarray, vocab_size: int) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ValueError(f"token id out of range [0, {vocab_size})")


def forward_score(params: RankingParams, window: Sequence[int]) -> ScoreTrace:
    ids = np.asarray(window, dtype=np.int64)
    if ids.shape != (params.config.window,):
        raise ValueError(f"window must have {params.config.window} ids, got {ids.shape}")
    _check_ids(ids, params.config.vocab_size)
    P = params.C[ids].reshape(-1)
    A = np.tanh(params.W1 @ P + params.b1)
    score = float(params.W2 @ A + params.b2)
    return ScoreTrace(P, A, score)


def score_windows(params: RankingParams, windows: np.ndarray) -> np.ndarray:
    """Scores for a ``(B, 2n+1)`` batch of windows."""
    P = params.C[windows].reshape(len(windows), -1)
    A = np.tanh(P @ params.W1.T + params.b1)
    return A @ params.W2 + params.b2


def pair_loss(score_original: float, score_corrupted: float) -> float:
    return max(0.0, 1.0 - score_original + score_corrupted)


def batch_losses(params: RankingParams, originals: np.ndarray, corrupted: np.ndarray) -> np.ndarray:
    so = score_windows(params, originals)
    sc = score_windows(params, corrupted)
    return np.maximum(0.0, 1.0 - so + sc)


@dataclass
class PairGradients:
    """Gradients for every group; embedding rows are kept sparse.

    ``C_rows`` holds the distinct touched row ids and ``C_grad`` the
    matching ``(len(C_rows), M)`` gradient rows.
    """

    C_rows: np.ndarray
    C_grad: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def C_dict(self) -> dict[int, np.ndarray]:
        return {int(r): g for r, g in zip(self.C_rows, self.C_grad)}

    def dense_C(self, vocab_size: int) -> np.ndarray:
        out = np.zeros((vocab_size, self.C_grad.shape[1]), dtype=self.C_grad.dtype)
        out[self.C_rows] = self.C_grad
        return out

    def is_finite(self) -> bool:
        return all(
            np.isfinite(g).all() for g in (self.C_grad, self.W1, self.b1, self.W2, self.b2)
        )

    def __add__(self, other: "PairGradients") -> "PairGradients":
        rows, inv = np.unique(np.concatenate([self.C_rows, other.C_rows]), return_inverse=True)
        grad = np.zeros((len(rows), self.C_grad.shape[1]), dtype=self.C_grad.dtype)
        np.add.at(grad, inv, np.concatenate([self.C_grad, other.C_grad]))
        return PairGradients(
            rows,
            grad,
            self.W1 + other.W1,
            self.b1 + other.b1,
            self.W2 + other.W2,
            self.b2 + other.b2,
        )


def batch_backward(
    params: RankingParams, originals: np.ndarray, corrupted: np.ndarray, scale: float | None = None
) -> tuple[np.ndarray, PairGradients]:
    """Per-pair losses and the gradient of ``scale * sum(losses)``.

    ``scale`` defaults to ``1/B`` so the gradient is that of the batch mean.
    """
    originals = np.asarray(originals, dtype=np.int64)
    corrupted = np.asarray(corrupted, dtype=np.int64)
    B, L = originals.shape
    M = params.config.dim
    if scale is None:
        scale = 1.0 / B
    windows = np.concatenate([originals, corrupted])
    P = params.C[windows].reshape(2 * B, L * M)
    A = np.tanh(P @ params.W1.T + params.b1)
    s = A @ params.W2 + params.b2
    losses = np.maximum(0.0, 1.0 - s[:B] + s[B:])

    active = (losses > 0).astype(P.dtype) * scale
    # d loss / d score: -1 for the original, +1 for the corrupted window
    ds = np.concatenate([-active, active])
    dW2 = ds @ A
    db2 = np.asarray(ds.sum(), dtype=P.dtype)
    dZ = np.outer(ds, params.W2) * (1.0 - A * A)
    dW1 = dZ.T @ P
    db1 = dZ.sum(axis=0)
    dP = (dZ @ params.W1).reshape(2 * B * L, M)
    rows, inv = np.unique(windows.reshape(-1), return_inverse=True)
    C_grad = np.zeros((len(rows), M), dtype=P.dtype)
    np.add.at(C_grad, inv, dP)
    return losses, PairGradients(rows, C_grad, dW1, db1, dW2, db2)


def backward(params: RankingParams, example: WindowExample) -> tuple[float, PairGradients]:
    """Loss and exact gradient for a single (original, corrupted) pair."""
    o = np.asarray([example.original], dtype=np.int64)
    c = np.asarray([example.corrupted], dtype=np.int64)
    if o.shape[1] != params.config.window or c.shape != o.shape:
        raise ValueError("window length does not match the model config")
    _check_ids(o, params.config.vocab_size)
    _check_ids(c, params.config.vocab_size)
    losses, grads = batch_backward(params, o, c, scale=1.0)
    return float(losses[0]), grads


def params_to_bytes(params: RankingParams) -> bytes:
    cfg = params.config
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, cfg.n, cfg.dim, cfg.hidden, cfg.vocab_size)]
    for t in params.tensors():
        parts.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return b"".join(parts)


def params_from_bytes(data: bytes) -> tuple[RankingParams, int]:
    """Decode a parameter block; returns the params and the number of bytes consumed."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError("bad format: missing PGEM magic bytes")
    if len(data) < _HEADER.size:
        raise TruncatedFileError("truncated parameter header")
    _, version, n, dim, hidden, vocab_size = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"unsupported parameter format version {version}")
    cfg = ModelConfig(vocab_size=vocab_size, n=n, dim=dim, hidden=hidden)
    shapes = [(vocab_size, dim), (hidden, cfg.input_width), (hidden,), (hidden,), ()]
    offset = _HEADER.size
    tensors = []
    for shape in shapes:
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise TruncatedFileError("truncated parameter tensors")
        tensors.append(np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape))
        offset = end
    return RankingParams(cfg, *tensors), offset


def save_params(params: RankingParams, path: str | Path) -> None:
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path: str | Path) -> RankingParams:
    data = Path(path).read_bytes()
    params, used = params_from_bytes(data)
    if used != len(data):
        raise FormatError(f"{path}: {len(data) - used} trailing bytes after parameters")
    return params
