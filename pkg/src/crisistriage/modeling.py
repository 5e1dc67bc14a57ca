"""Reasoning-enhanced training: prompts, 3-token readout, the summed objective and a reference backend.

The training loss for one example is ``l_cls + l_gen``: cross-entropy of the
label under the softmax over the three category-token logits, plus the mean
per-token negative log-likelihood of the reasoning target (teacher forced).
"""

from __future__ import annotations

import json
import logging
import math
import re
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Protocol, Sequence

import numpy as np

from .augmentation import Chunk
from .enrichment import render_segments
from .io import atomic_write_text
from .reasoning import ReasoningTarget
from .resources import load_text

log = logging.getLogger(__name__)

CLASSIFICATION_PROMPT = load_text("classification_prompt_v1.txt").strip()
GENERATION_PROMPT = load_text("generation_prompt_v1.txt").strip()
CATEGORY_TOKENS = ("0", "1", "2")
CHECKPOINT_FORMAT = "crisistriage.reference-backend"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, losses: "TrainingLosses"):
        super().__init__(f"non-finite loss at step {step}: {losses}")
        self.step = step


# --- prompts ----------------------------------------------------------------


@dataclass(frozen=True)
class PromptBundle:
    context: str
    classification_prompt: str
    generation_prompt: str
    reasoning_target: str

    @property
    def classification_input(self) -> str:
        return f"{self.context}\n{self.classification_prompt}"

    @property
    def generation_input(self) -> str:
        return f"{self.context}\n{self.generation_prompt}"


def chunk_context(chunk: Chunk, include_annotations: bool = True) -> str:
    return render_segments(chunk.segments, include_annotations)


def classification_input(chunk: Chunk, include_annotations: bool = True) -> str:
    return f"{chunk_context(chunk, include_annotations)}\n{CLASSIFICATION_PROMPT}"


def build_prompts(chunk: Chunk, reasoning: ReasoningTarget, include_annotations: bool = True) -> PromptBundle:
    return PromptBundle(
        context=chunk_context(chunk, include_annotations),
        classification_prompt=CLASSIFICATION_PROMPT,
        generation_prompt=GENERATION_PROMPT,
        reasoning_target=reasoning.text,
    )


# --- readout and losses -----------------------------------------------------


def logsumexp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + math.log(float(np.sum(np.exp(x - m))))


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - np.max(x))
    return z / z.sum()


@dataclass(frozen=True)
class CategoryReadout:
    logits: tuple[float, float, float]
    probs: tuple[float, float, float]
    category_tokens: tuple[str, str, str] = CATEGORY_TOKENS

    @classmethod
    def from_logits(cls, logits: Sequence[float]) -> "CategoryReadout":
        arr = np.asarray(logits, dtype=float)
        if arr.shape != (3,) or not np.all(np.isfinite(arr)):
            raise ValueError(f"expected 3 finite logits, got {logits!r}")
        return cls(tuple(float(v) for v in arr), tuple(float(v) for v in softmax(arr)))

    @property
    def predicted(self) -> int:
        return argmax_high(self.probs)


def argmax_high(values: Sequence[float]) -> int:
    """Index of the maximum; ties go to the higher index (higher severity)."""
    best = 0
    for i in range(1, len(values)):
        if values[i] >= values[best]:
            best = i
    return best


def classification_loss(readout: CategoryReadout, label: int) -> float:
    logits = np.asarray(readout.logits)
    return logsumexp(logits) - float(logits[label])


def combined_loss(l_cls: float, l_gen: float) -> float:
    if not (math.isfinite(l_cls) and math.isfinite(l_gen)):
        raise ValueError(f"non-finite loss component: l_cls={l_cls}, l_gen={l_gen}")
    return l_cls + l_gen


@dataclass(frozen=True)
class TrainingLosses:
    l_cls: float
    l_gen: float
    total: float

    @classmethod
    def of(cls, l_cls: float, l_gen: float) -> "TrainingLosses":
        return cls(l_cls, l_gen, l_cls + l_gen)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.l_cls, self.l_gen, self.total))


@dataclass(frozen=True)
class TrainingExample:
    example_id: str
    classification_input: str
    generation_input: str
    target: str
    label: int


def make_example(chunk: Chunk, reasoning: ReasoningTarget, include_annotations: bool = True) -> TrainingExample:
    bundle = build_prompts(chunk, reasoning, include_annotations)
    return TrainingExample(
        chunk.chunk_id, bundle.classification_input, bundle.generation_input, bundle.reasoning_target, chunk.label
    )


class ModelBackend(Protocol):
    category_tokens: tuple[str, str, str]

    def category_logits(self, text: str) -> np.ndarray: ...

    def generation_nll(self, text: str, target: str) -> float: ...

    def apply_update(
        self, batch: Sequence[TrainingExample], learning_rate: float, use_auxiliary_loss: bool = True
    ) -> TrainingLosses: ...

    def save(self, path: str | Path) -> None: ...


# --- reference backend ------------------------------------------------------

_TOKEN_RE = re.compile(r"\[|\]|[^\s\[\];>,.!?:\"()]+")


def tokenize(text: str) -> list[str]:
    """Lower-cased word tokens; tokens inside ``[...]`` annotation blocks get an ``@`` prefix."""
    out = []
    inside = False
    for tok in _TOKEN_RE.findall(text):
        if tok == "[":
            inside = True
        elif tok == "]":
            inside = False
        else:
            tok = tok.lower()
            out.append("@" + tok if inside else tok)
    return out


def hash_token(token: str, dim: int) -> int:
    return zlib.crc32(token.encode("utf-8")) % dim


class _RowStore:
    """Append-only matrix of cached feature rows."""

    def __init__(self, width: int):
        self._data = np.zeros((64, width))
        self._n = 0

    def append(self, row: np.ndarray) -> int:
        if self._n == len(self._data):
            self._data = np.concatenate([self._data, np.zeros_like(self._data)])
        self._data[self._n] = row
        self._n += 1
        return self._n - 1

    def get(self, i: int) -> np.ndarray:
        out = self._data[i].copy()
        out.setflags(write=False)
        return out

    def take(self, rows: list[int]) -> np.ndarray:
        return self._data[rows]


# Roughly one 400 s chunk of synthetic dialogue; long calls overflow it.
DEFAULT_CONTEXT_TOKENS = 192


class ReferenceBackend:
    """Desk-scale trainable stand-in for a fine-tuned LM.

    Classification head: multinomial logistic regression over hashed bag-of-token
    features (binary presence, L2 normalised) of the last ``max_context_tokens``
    tokens of the input, mimicking a finite context window. Generation head: a
    context-free unigram distribution over the hashed vocabulary. Parameters
    start at zero, so the initial readout is uniform and ``l_gen = ln(gen_dim)``.
    """

    category_tokens = CATEGORY_TOKENS

    def __init__(self, dim: int = 4096, gen_dim: Optional[int] = None, max_context_tokens: Optional[int] = DEFAULT_CONTEXT_TOKENS):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        self.gen_dim = int(gen_dim or dim)
        self.max_context_tokens = max_context_tokens
        self.W = np.zeros((3, self.dim))
        self.b = np.zeros(3)
        self.u = np.zeros(self.gen_dim)
        self._feat_index: dict[str, int] = {}
        self._feat_store = _RowStore(self.dim)
        self._target_index: dict[str, int] = {}
        self._target_store = _RowStore(self.gen_dim)

    def config(self) -> dict[str, Any]:
        return {"dim": self.dim, "gen_dim": self.gen_dim, "max_context_tokens": self.max_context_tokens}

    # features

    def _row(self, text: str) -> int:
        row = self._feat_index.get(text)
        if row is None:
            toks = tokenize(text)
            if self.max_context_tokens is not None and len(toks) > self.max_context_tokens:
                toks = toks[-self.max_context_tokens :]
            x = np.zeros(self.dim)
            x[[hash_token(t, self.dim) for t in toks]] = 1.0
            norm = float(np.linalg.norm(x))
            if norm > 0:
                x /= norm
            row = self._feat_store.append(x)
            self._feat_index[text] = row
        return row

    def _target_row(self, target: str) -> int:
        row = self._target_index.get(target)
        if row is None:
            ids = [hash_token(t, self.gen_dim) for t in tokenize(target)]
            if not ids:
                raise ValueError("reasoning target has no tokens")
            q = np.bincount(ids, minlength=self.gen_dim).astype(float) / len(ids)
            row = self._target_store.append(q)
            self._target_index[target] = row
        return row

    def features(self, text: str) -> np.ndarray:
        """Binary token-presence vector of the (window-truncated) input, L2 normalised."""
        return self._feat_store.get(self._row(text))

    def target_distribution(self, target: str) -> np.ndarray:
        """Empirical token distribution of the reasoning target (teacher-forced unigram targets)."""
        return self._target_store.get(self._target_row(target))

    # contract

    def category_logits(self, text: str) -> np.ndarray:
        return self.W @ self.features(text) + self.b

    def generation_nll(self, text: str, target: str) -> float:
        q = self.target_distribution(target)
        return logsumexp(self.u) - float(q @ self.u)

    # flat parameter view used by the optimiser and the gradient check

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b, self.u])

    def set_params(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=float)
        nw = 3 * self.dim
        if theta.shape != (nw + 3 + self.gen_dim,):
            raise ValueError("parameter vector has the wrong size")
        self.W = theta[:nw].reshape(3, self.dim).copy()
        self.b = theta[nw : nw + 3].copy()
        self.u = theta[nw + 3 :].copy()

    def _batch_arrays(self, batch: Sequence[TrainingExample]):
        X = self._feat_store.take([self._row(ex.classification_input) for ex in batch])
        Q = self._target_store.take([self._target_row(ex.target) for ex in batch])
        y = np.array([ex.label for ex in batch])
        return X, Q, y

    def loss_and_grad(
        self, batch: Sequence[TrainingExample], use_auxiliary_loss: bool = True
    ) -> tuple[TrainingLosses, np.ndarray]:
        """Batch-mean losses and the gradient of the optimised objective w.r.t. the flat parameters.

        With ``use_auxiliary_loss=False`` the objective is ``l_cls`` alone; ``l_gen``
        is still reported and its gradient block is zero.
        """
        X, Q, y = self._batch_arrays(batch)
        n = len(batch)
        logits = X @ self.W.T + self.b
        m = logits.max(axis=1, keepdims=True)
        lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))).ravel()
        l_cls = float(np.mean(lse - logits[np.arange(n), y]))
        P = np.exp(logits - lse[:, None])
        P[np.arange(n), y] -= 1.0
        P /= n
        gW = P.T @ X
        gb = P.sum(axis=0)

        lse_u = logsumexp(self.u)
        q_mean = Q.mean(axis=0)
        l_gen = lse_u - float(q_mean @ self.u)
        if use_auxiliary_loss:
            gu = softmax(self.u) - q_mean
        else:
            gu = np.zeros(self.gen_dim)
        losses = TrainingLosses.of(l_cls, l_gen)
        return losses, np.concatenate([gW.ravel(), gb, gu])

    def objective(self, theta: np.ndarray, batch: Sequence[TrainingExample], use_auxiliary_loss: bool = True) -> float:
        saved = self.get_params()
        try:
            self.set_params(theta)
            losses, _ = self.loss_and_grad(batch, use_auxiliary_loss)
        finally:
            self.set_params(saved)
        return losses.total if use_auxiliary_loss else losses.l_cls

    def apply_update(
        self, batch: Sequence[TrainingExample], learning_rate: float, use_auxiliary_loss: bool = True
    ) -> TrainingLosses:
        """One plain gradient-descent step; returns the losses at the pre-step parameters."""
        losses, grad = self.loss_and_grad(batch, use_auxiliary_loss)
        if learning_rate:
            nw = 3 * self.dim
            self.W -= learning_rate * grad[:nw].reshape(3, self.dim)
            self.b -= learning_rate * grad[nw : nw + 3]
            if use_auxiliary_loss:
                self.u -= learning_rate * grad[nw + 3 :]
        return losses

    # checkpoints

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            **self.config(),
            "W": self.W.tolist(),
            "b": self.b.tolist(),
            "u": self.u.tolist(),
        }

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ReferenceBackend":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a reference-backend checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
        model = cls(data["dim"], data["gen_dim"], data["max_context_tokens"])
        model.W = np.asarray(data["W"], dtype=float).reshape(3, model.dim)
        model.b = np.asarray(data["b"], dtype=float)
        model.u = np.asarray(data["u"], dtype=float)
        return model

    @classmethod
    def load(cls, path: str | Path) -> "ReferenceBackend":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --- trainer -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Trainer settings.

    ``backend_options`` is handed to the backend factory untouched; real LM
    backends take their adapter settings (e.g. ``{"lora_rank": 8, "lora_alpha": 64}``)
    from there.
    """

    learning_rate: float = 2.0
    schedule: str = "constant"
    warmup_fraction: float = 0.1
    epochs: int = 100
    batch_size: int = 8
    grad_accum: int = 1
    seed: int = 0
    use_auxiliary_loss: bool = True
    include_annotations: bool = True
    patience: int = 5
    tolerance: float = 1e-4
    monitor: str = "classification"
    backend_options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.monitor not in ("classification", "total"):
            raise ValueError(f"monitor must be 'classification' or 'total', got {self.monitor!r}")
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be finite and >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.grad_accum < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size, grad_accum and patience must be >= 1")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        return cls(**data)


def learning_rate_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Constant, or linear warmup over ``warmup_fraction`` of the steps followed by cosine decay to zero."""
    if cfg.schedule == "constant":
        return cfg.learning_rate
    warmup = int(math.ceil(cfg.warmup_fraction * total_steps))
    if step < warmup:
        return cfg.learning_rate * (step + 1) / warmup
    progress = (step - warmup) / max(1, total_steps - warmup)
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainResult:
    backend: Any
    step_losses: list[TrainingLosses]
    epoch_losses: list[TrainingLosses]
    stopped_early: bool

    @property
    def epochs_run(self) -> int:
        return len(self.epoch_losses)


def _mean_losses(items: Sequence[TrainingLosses], weights: Sequence[int]) -> TrainingLosses:
    w = np.asarray(weights, dtype=float)
    l_cls = float(np.dot([x.l_cls for x in items], w) / w.sum())
    l_gen = float(np.dot([x.l_gen for x in items], w) / w.sum())
    return TrainingLosses.of(l_cls, l_gen)


def train(
    data: Sequence[TrainingExample] | Sequence[tuple[Chunk, ReasoningTarget, int]],
    backend: ModelBackend,
    cfg: TrainConfig | None = None,
    *,
    on_step: Optional[Callable[[int, TrainingLosses], None]] = None,
) -> TrainResult:
    """Seeded minibatch training on ``l_cls + l_gen``.

    ``batch_size * grad_accum`` examples feed each update (the mean-loss
    equivalent of accumulating over ``grad_accum`` micro-batches). Stops after
    ``epochs`` or once the monitored epoch-mean loss (``cfg.monitor``: the
    classification term by default, or the total) fails to improve by
    ``tolerance`` for ``patience`` consecutive epochs.
    """
    cfg = cfg or TrainConfig()
    examples = [
        d if isinstance(d, TrainingExample) else _example_from_triple(d, cfg.include_annotations) for d in data
    ]
    if not examples:
        raise ValueError("training set is empty")
    n = len(examples)
    eff = cfg.batch_size * cfg.grad_accum
    steps_per_epoch = math.ceil(n / eff)
    total_steps = cfg.epochs * steps_per_epoch
    rng = np.random.default_rng(cfg.seed)
    step_losses: list[TrainingLosses] = []
    epoch_losses: list[TrainingLosses] = []
    best = math.inf
    stale = 0
    step = 0
    stopped = False
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        this_epoch, sizes = [], []
        for start in range(0, n, eff):
            batch = [examples[i] for i in order[start : start + eff]]
            lr = learning_rate_at(step, total_steps, cfg)
            losses = backend.apply_update(batch, lr, cfg.use_auxiliary_loss)
            if not losses.is_finite():
                raise TrainingDivergedError(step, losses)
            step_losses.append(losses)
            this_epoch.append(losses)
            sizes.append(len(batch))
            if on_step:
                on_step(step, losses)
            step += 1
        epoch_mean = _mean_losses(this_epoch, sizes)
        epoch_losses.append(epoch_mean)
        watched = epoch_mean.l_cls if cfg.monitor == "classification" else epoch_mean.total
        if best - watched < cfg.tolerance:
            stale += 1
        else:
            stale = 0
        best = min(best, watched)
        if stale >= cfg.patience:
            stopped = True
            break
    return TrainResult(backend, step_losses, epoch_losses, stopped)


def _example_from_triple(item: tuple, include_annotations: bool) -> TrainingExample:
    chunk, reasoning, label = item
    if label != chunk.label:
        raise ValueError(f"label {label} disagrees with chunk {chunk.chunk_id} label {chunk.label}")
    return make_example(chunk, reasoning, include_annotations)


def training_accuracy(backend: ModelBackend, examples: Sequence[TrainingExample]) -> float:
    hits = [argmax_high(backend.category_logits(ex.classification_input)) == ex.label for ex in examples]
    return float(np.mean(hits))
