"""Next-token training: cross-entropy loss, Adam, the epoch loop with
per-epoch evaluation and best-checkpoint tracking, and a seeded random
hyperparameter search.

One training run owns its ModelParams exclusively.  Search trials are
independent (own params, own rng) and are reported in a deterministic order.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import (
    ModelParams,
    TransformerConfig,
    backward,
    forward,
    init_params,
    save_checkpoint,
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    early_stop_patience: int | None = None
    seed: int = 42

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            val = getattr(self, name)
            if not 0.0 <= val < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {val}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ValueError(
                f"early_stop_patience must be >= 1 or None, got {self.early_stop_patience}"
            )


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


def _log_softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def next_token_loss(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the first T-1 positions and its logit gradient.

    targets are the inputs shifted left by one, shape (batch, T-1); the final
    input position predicts nothing and its gradient row is zero.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    b, t, v = logits.shape
    if t < 2:
        raise ValueError("need at least 2 positions to form a next-token target")
    if targets.shape != (b, t - 1):
        raise ValueError(f"targets shape {targets.shape} does not match ({b}, {t - 1})")
    if targets.min() < 0 or targets.max() >= v:
        raise ValueError(f"target ids must lie in [0, {v})")

    logp = _log_softmax(logits[:, :-1, :])
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    count = b * (t - 1)
    loss = -float(picked.sum()) / count

    dlogits = np.zeros_like(logits)
    grad = np.exp(logp)  # softmax minus one-hot at the target ids
    at_target = np.take_along_axis(grad, targets[..., None], axis=-1)
    np.put_along_axis(grad, targets[..., None], at_target - 1.0, axis=-1)
    dlogits[:, :-1, :] = grad / count
    return loss, dlogits


def accuracy(logits: np.ndarray, targets: np.ndarray) -> float:
    """Fraction of predicted positions whose argmax logit is the true next
    token."""
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    b, t, _ = logits.shape
    if targets.shape != (b, t - 1):
        raise ValueError(f"targets shape {targets.shape} does not match ({b}, {t - 1})")
    pred = np.argmax(logits[:, :-1, :], axis=-1)
    return float(np.mean(pred == targets))


class AdamState:
    """First/second moment buffers and the step counter for one ModelParams."""

    def __init__(self, params: ModelParams):
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def to_state_dict(self) -> dict:
        return {"step": self.step, "m": self.m, "v": self.v}

    @classmethod
    def from_state_dict(cls, params: ModelParams, state: dict) -> "AdamState":
        out = cls(params)
        out.step = int(state["step"])
        for k in out.m:
            out.m[k][...] = state["m"][k]
            out.v[k][...] = state["v"][k]
        return out

    def copy_state_dict(self) -> dict:
        return {
            "step": self.step,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }


def optimizer_step(params: ModelParams, grads: dict, state: AdamState, config: TrainConfig) -> None:
    """One Adam update with bias correction and optional decoupled weight
    decay, in place.  Aborts naming the offending tensor on a non-finite
    gradient."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - config.beta1**t
    bc2 = 1.0 - config.beta2**t
    for name, p in params.tensors.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in tensor {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + config.eps)
        if config.weight_decay > 0.0:
            update = update + config.weight_decay * p
        p -= config.learning_rate * update


def _batch_slices(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def evaluate(
    params: ModelParams,
    model_config: TransformerConfig,
    tokens: np.ndarray,
    batch_size: int = 64,
) -> tuple[float, float]:
    """Full-set eval-mode loss and accuracy.  Touches no rng and mutates
    nothing, so it can be interleaved with training freely."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ValueError(f"expected a nonempty (n, seq) token matrix, got shape {tokens.shape}")
    total_nll = 0.0
    total_correct = 0
    total_count = 0
    for sl in _batch_slices(tokens.shape[0], batch_size):
        batch = tokens[sl]
        logits, _ = forward(params, model_config, batch, mode="eval")
        targets = batch[:, 1:]
        logp = _log_softmax(logits[:, :-1, :])
        picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        pred = np.argmax(logits[:, :-1, :], axis=-1)
        total_nll += -float(picked.sum())
        total_correct += int(np.sum(pred == targets))
        total_count += targets.size
    return total_nll / total_count, total_correct / total_count


@dataclass
class TrainResult:
    history: list[EpochMetrics]
    best_params: ModelParams
    best_epoch: int
    best_val_loss: float
    stopped_early: bool


def train(
    params: ModelParams,
    model_config: TransformerConfig,
    train_tokens: np.ndarray,
    val_tokens: np.ndarray,
    config: TrainConfig,
    checkpoint_path=None,
    metrics_path=None,
    log=None,
) -> TrainResult:
    """Run the epoch loop on (n, seq) token matrices, mutating params.

    Each epoch: seeded shuffle, batched forward/backward/Adam steps, then
    full-set eval-mode metrics on both splits.  The best-validation-loss
    epoch is snapshotted (parameters, optimizer moments, rng state) and
    written to checkpoint_path at the end if given; metrics_path gets the
    per-epoch CSV.  ``log``, if given, is called with each EpochMetrics.
    """
    train_tokens = np.asarray(train_tokens)
    val_tokens = np.asarray(val_tokens)
    for name, toks in (("train", train_tokens), ("validation", val_tokens)):
        if toks.ndim != 2 or toks.shape[0] < 1:
            raise ValueError(f"{name} set must be a nonempty (n, seq) token matrix")
        if toks.shape[1] < 2:
            raise ValueError(f"{name} sequences are too short for next-token targets")

    rng = np.random.default_rng(config.seed)
    adam = AdamState(params)
    history: list[EpochMetrics] = []
    best_params = params.copy()
    best_opt = adam.copy_state_dict()
    best_rng = rng.bit_generator.state
    best_val_loss = math.inf
    best_epoch = 0
    since_improve = 0
    stopped_early = False

    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(train_tokens.shape[0])
        for batch_index, sl in enumerate(_batch_slices(perm.size, config.batch_size)):
            batch = train_tokens[perm[sl]]
            logits, trace = forward(params, model_config, batch, mode="train", rng=rng)
            loss, dlogits = next_token_loss(logits, batch[:, 1:])
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss {loss} at epoch {epoch}, batch {batch_index}"
                )
            grads = backward(trace, params, dlogits)
            optimizer_step(params, grads, adam, config)

        train_loss, train_acc = evaluate(params, model_config, train_tokens)
        val_loss, val_acc = evaluate(params, model_config, val_tokens)
        metrics = EpochMetrics(epoch, train_loss, train_acc, val_loss, val_acc)
        history.append(metrics)
        if log is not None:
            log(metrics)

        if val_loss < best_val_loss:
            best_val_loss = val_loss
            best_epoch = epoch
            best_params = params.copy()
            best_opt = adam.copy_state_dict()
            best_rng = rng.bit_generator.state
            since_improve = 0
        else:
            since_improve += 1
            if config.early_stop_patience is not None and since_improve >= config.early_stop_patience:
                stopped_early = True
                break

    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path,
            model_config,
            best_params,
            optimizer=best_opt,
            rng_state=best_rng,
            meta={
                "best_epoch": best_epoch,
                "best_val_loss": best_val_loss,
                "epochs_run": len(history),
                "train_seed": config.seed,
            },
        )
    if metrics_path is not None:
        write_metrics_csv(metrics_path, history)
    return TrainResult(
        history=history,
        best_params=best_params,
        best_epoch=best_epoch,
        best_val_loss=best_val_loss,
        stopped_early=stopped_early,
    )


def write_metrics_csv(path, history: list[EpochMetrics]) -> None:
    """Per-epoch metrics as epoch,train_loss,train_acc,val_loss,val_acc."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for m in history:
            w.writerow([m.epoch, repr(m.train_loss), repr(m.train_acc), repr(m.val_loss), repr(m.val_acc)])


def read_metrics_csv(path) -> list[EpochMetrics]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [
        EpochMetrics(
            epoch=int(r["epoch"]),
            train_loss=float(r["train_loss"]),
            train_acc=float(r["train_acc"]),
            val_loss=float(r["val_loss"]),
            val_acc=float(r["val_acc"]),
        )
        for r in rows
    ]


@dataclass(frozen=True)
class SearchSpace:
    """Candidate sets for the random hyperparameter search."""

    num_layers: tuple[int, ...] = (1, 2, 3)
    num_heads: tuple[int, ...] = (2, 4, 8)
    dropout_rate: tuple[float, ...] = (0.0, 0.1, 0.2)
    learning_rate: tuple[float, ...] = (3e-4, 1e-3, 3e-3)
    d_model: tuple[int, ...] = (32, 64)
    budget: int = 8
    seed: int = 42

    def __post_init__(self):
        for name in ("num_layers", "num_heads", "dropout_rate", "learning_rate", "d_model"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"candidate set {name} is empty")
        if self.budget < 1:
            raise ValueError(f"budget must be >= 1, got {self.budget}")

    def valid_combos(self) -> list[tuple[int, int, float, float, int]]:
        """Cartesian product filtered to combos a TransformerConfig accepts
        (d_model divisible by num_heads)."""
        combos = [
            c
            for c in itertools.product(
                self.num_layers, self.num_heads, self.dropout_rate, self.learning_rate, self.d_model
            )
            if c[4] % c[1] == 0
        ]
        if not combos:
            raise ValueError("no valid (num_heads, d_model) combination in the space")
        return combos


@dataclass
class TrialResult:
    trial: int
    model_config: TransformerConfig
    learning_rate: float
    seed: int
    best_val_loss: float
    best_val_acc: float
    error: str | None = None


def random_search(
    space: SearchSpace,
    train_tokens: np.ndarray,
    val_tokens: np.ndarray,
    base_model: TransformerConfig,
    base_train: TrainConfig,
    epochs: int,
    log=None,
) -> list[TrialResult]:
    """Sample space.budget configs with the seeded generator, train each for
    a reduced epoch budget, and rank by best validation loss.

    A failing trial is recorded with its error and ranked last rather than
    aborting the search.  d_ff follows the sampled d_model at the 2x ratio
    of the defaults.  Same seed, same trial sequence.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    combos = space.valid_combos()
    rng = np.random.default_rng(space.seed)
    results = []
    for trial in range(space.budget):
        layers, heads, drop, lr, d_model = combos[int(rng.integers(len(combos)))]
        trial_seed = int(rng.integers(2**31))
        model_config = TransformerConfig(
            num_layers=layers,
            num_heads=heads,
            d_model=d_model,
            d_ff=2 * d_model,
            vocab_size=base_model.vocab_size,
            max_seq_len=base_model.max_seq_len,
            dropout_rate=drop,
        )
        train_config = TrainConfig(
            epochs=epochs,
            batch_size=base_train.batch_size,
            learning_rate=lr,
            beta1=base_train.beta1,
            beta2=base_train.beta2,
            eps=base_train.eps,
            weight_decay=base_train.weight_decay,
            early_stop_patience=base_train.early_stop_patience,
            seed=trial_seed,
        )
        try:
            params = init_params(model_config, np.random.default_rng(trial_seed))
            out = train(params, model_config, train_tokens, val_tokens, train_config)
            best = min(out.history, key=lambda m: m.val_loss)
            result = TrialResult(
                trial=trial,
                model_config=model_config,
                learning_rate=lr,
                seed=trial_seed,
                best_val_loss=best.val_loss,
                best_val_acc=best.val_acc,
            )
        except Exception as e:  # noqa: BLE001 - per-trial isolation is the contract
            result = TrialResult(
                trial=trial,
                model_config=model_config,
                learning_rate=lr,
                seed=trial_seed,
                best_val_loss=math.inf,
                best_val_acc=0.0,
                error=f"{type(e).__name__}: {e}",
            )
        if log is not None:
            log(result)
        results.append(result)
    return sorted(results, key=lambda r: (r.best_val_loss, r.trial))


def write_trials_csv(path, results: list[TrialResult]) -> None:
    """Ranked trial table, one row per trial."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(
            ["rank", "trial", "num_layers", "num_heads", "d_model", "dropout_rate",
             "learning_rate", "seed", "best_val_loss", "best_val_acc", "error"]
        )
        for rank, r in enumerate(results, start=1):
            c = r.model_config
            w.writerow(
                [rank, r.trial, c.num_layers, c.num_heads, c.d_model, repr(c.dropout_rate),
                 repr(r.learning_rate), r.seed, repr(r.best_val_loss), repr(r.best_val_acc),
                 r.error or ""]
            )
