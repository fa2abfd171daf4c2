"""Estimator-style front end: fit/predict/score on token matrices.

SpiralSequenceModel keeps the scikit-learn contract (constructor stores
hyperparameters verbatim, get_params/set_params/clone work, unfitted use
raises NotFittedError) while delegating the actual math to ``model`` and
``training``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .dataset import split_indices
from .model import (
    TransformerConfig,
    generate,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .training import TrainConfig, evaluate, train
from .validation import check_token_matrix


class SpiralSequenceModel(BaseEstimator):
    """Next-token transformer over quantized field sequences.

    fit(X) trains on an (n, seq) token matrix; with no explicit validation
    set it holds out a seeded fraction of X.  predict gives per-position
    argmax next tokens, score gives next-token accuracy, and generate
    continues a prefix autoregressively.
    """

    def __init__(
        self,
        num_layers: int = 2,
        num_heads: int = 4,
        d_model: int = 64,
        d_ff: int = 128,
        vocab_size: int = 256,
        max_seq_len: int = 128,
        dropout_rate: float = 0.2,
        epochs: int = 2000,
        batch_size: int = 32,
        learning_rate: float = 1e-3,
        weight_decay: float = 0.0,
        early_stop_patience: int | None = None,
        validation_fraction: float = 0.1,
        seed: int = 42,
    ):
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.d_model = d_model
        self.d_ff = d_ff
        self.vocab_size = vocab_size
        self.max_seq_len = max_seq_len
        self.dropout_rate = dropout_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.early_stop_patience = early_stop_patience
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _model_config(self) -> TransformerConfig:
        return TransformerConfig(
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            d_model=self.d_model,
            d_ff=self.d_ff,
            vocab_size=self.vocab_size,
            max_seq_len=self.max_seq_len,
            dropout_rate=self.dropout_rate,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            early_stop_patience=self.early_stop_patience,
            seed=self.seed,
        )

    def _check_is_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(
                "this SpiralSequenceModel is not fitted yet; call fit or load first"
            )

    def _check_X(self, X) -> np.ndarray:
        X = check_token_matrix(X, self.vocab_size)
        if X.shape[1] > self.max_seq_len:
            raise ValueError(
                f"sequence length {X.shape[1]} exceeds max_seq_len {self.max_seq_len}"
            )
        return X

    def fit(self, X, y=None, validation=None, checkpoint_path=None, metrics_path=None, log=None):
        """Train on token matrix X.  y is ignored (targets are X shifted).

        validation: optional explicit (n, seq) matrix; otherwise a seeded
        validation_fraction of X is held out (X then needs >= 2 rows).
        """
        X = self._check_X(X)
        if validation is not None:
            val = self._check_X(validation)
            trn = X
        else:
            train_idx, val_idx = split_indices(X.shape[0], 1.0 - self.validation_fraction, self.seed)
            trn, val = X[train_idx], X[val_idx]

        config = self._model_config()
        params = init_params(config, np.random.default_rng(self.seed))
        result = train(
            params,
            config,
            trn,
            val,
            self._train_config(),
            checkpoint_path=checkpoint_path,
            metrics_path=metrics_path,
            log=log,
        )
        self.config_ = config
        self.params_ = result.best_params
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.best_val_loss_ = result.best_val_loss
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        """Argmax next token at every position: (n, seq) -> (n, seq-1)."""
        self._check_is_fitted()
        X = self._check_X(X)
        from .model import forward

        logits, _ = forward(self.params_, self.config_, X, mode="eval")
        return np.argmax(logits[:, :-1, :], axis=-1)

    def score(self, X, y=None) -> float:
        """Next-token accuracy on X (targets are X shifted left)."""
        self._check_is_fitted()
        X = self._check_X(X)
        _, acc = evaluate(self.params_, self.config_, X)
        return acc

    def evaluate(self, X) -> tuple[float, float]:
        """(cross-entropy loss, accuracy) on X in eval mode."""
        self._check_is_fitted()
        X = self._check_X(X)
        return evaluate(self.params_, self.config_, X)

    def generate(self, prefix, num_steps: int, temperature: float = 0.0, rng=None) -> np.ndarray:
        """Continue a 1-d token prefix by num_steps tokens (greedy unless a
        temperature is given)."""
        self._check_is_fitted()
        return generate(self.params_, self.config_, prefix, num_steps, temperature=temperature, rng=rng)

    def save(self, path) -> None:
        """Write the fitted model as a checkpoint; hyperparameters ride in
        the metadata so load() restores an equivalent estimator."""
        self._check_is_fitted()
        save_checkpoint(
            path,
            self.config_,
            self.params_,
            meta={
                "estimator": self.get_params(),
                "best_epoch": getattr(self, "best_epoch_", None),
                "best_val_loss": getattr(self, "best_val_loss_", None),
            },
        )

    @classmethod
    def load(cls, path) -> "SpiralSequenceModel":
        """Rebuild a fitted estimator from a checkpoint written by save()
        (or by the training CLI)."""
        ckpt = load_checkpoint(path)
        stored = ckpt.meta.get("estimator")
        if stored is not None:
            est = cls(**stored)
        else:
            cfg = ckpt.config
            est = cls(
                num_layers=cfg.num_layers,
                num_heads=cfg.num_heads,
                d_model=cfg.d_model,
                d_ff=cfg.d_ff,
                vocab_size=cfg.vocab_size,
                max_seq_len=cfg.max_seq_len,
                dropout_rate=cfg.dropout_rate,
            )
        est.config_ = ckpt.config
        est.params_ = ckpt.params
        best_epoch = ckpt.meta.get("best_epoch")
        if best_epoch is not None:
            est.best_epoch_ = best_epoch
        best_val = ckpt.meta.get("best_val_loss")
        if best_val is not None:
            est.best_val_loss_ = best_val
        return est
