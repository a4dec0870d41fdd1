"""Estimator-style wrappers so the embedding models compose with sklearn.

``StructuredFactEmbedder`` follows the fit/transform/predict protocol:
fit on (image features, facts) pairs, transform either view into the
shared structured space, and predict the nearest training fact for new
features. ``CcaEmbedder`` mirrors the cross-decomposition API for the
linear baseline.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .cca import cca_embed, cca_fit
from .encoder import MODEL1, MODEL2, EncoderSpec, StackSpec, forward_slots, init_params
from .errors import ValidationError
from .facts import Dataset, FactInstance, StructuredFact, parse_fact, serialize_fact
from .pipeline import language_targets
from .train import LossConfig, TrainConfig, train
from .validation import as_matrix, check_same_length
from .words import WordTable, encode_language, fit_normalizer, load_word_table


def _as_facts(y) -> list[StructuredFact]:
    facts = []
    for item in y:
        if isinstance(item, StructuredFact):
            facts.append(item)
        else:
            facts.append(parse_fact(item))
    return facts


class StructuredFactEmbedder(BaseEstimator, TransformerMixin):
    """Two-view structured embedding learned from (features, fact) pairs.

    Parameters mirror the trainer configuration; ``word_table`` may be a
    WordTable or a path to the plain-text vector format. ``model_kind``
    selects the shared-trunk ("model1") or split-branch ("model2")
    encoder topology.
    """

    def __init__(
        self,
        model_kind: str = MODEL1,
        word_table=None,
        shared_hidden=(64,),
        s_hidden=(),
        po_hidden=(),
        slot_dim: int | None = None,
        distance_kind: str = "sqeuclidean",
        epsilon: float = 1e-8,
        base_lr: float = 0.5e-4,
        new_param_lr_multiplier: float = 10.0,
        momentum: float = 0.9,
        weight_decay: float = 1e-4,
        lr_gamma: float = 0.1,
        lr_step_iters: int = 5000,
        batch_size: int = 100,
        max_iters: int = 2000,
        seed: int = 0,
    ):
        self.model_kind = model_kind
        self.word_table = word_table
        self.shared_hidden = shared_hidden
        self.s_hidden = s_hidden
        self.po_hidden = po_hidden
        self.slot_dim = slot_dim
        self.distance_kind = distance_kind
        self.epsilon = epsilon
        self.base_lr = base_lr
        self.new_param_lr_multiplier = new_param_lr_multiplier
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_gamma = lr_gamma
        self.lr_step_iters = lr_step_iters
        self.batch_size = batch_size
        self.max_iters = max_iters
        self.seed = seed

    def _table(self) -> WordTable:
        if isinstance(self.word_table, WordTable):
            return self.word_table
        if self.word_table is None:
            raise ValidationError("word_table is required (a WordTable or a path)")
        return load_word_table(self.word_table)

    def fit(self, X, y):
        """Train the visual encoder on feature rows X and their facts y."""
        X = as_matrix(X, "X")
        facts = _as_facts(y)
        check_same_length(X, facts, "X", "y")
        table = self._table()
        slot_dim = self.slot_dim or table.dim

        unique_facts = list(dict.fromkeys(facts))
        self.normalizer_ = fit_normalizer(unique_facts, table)
        lang = language_targets(unique_facts, table, self.normalizer_)

        instances = tuple(
            FactInstance(f"row{i:06d}", X[i], fact, "train")
            for i, fact in enumerate(facts)
        )
        dataset = Dataset(instances, X.shape[1])

        is_model2 = self.model_kind == MODEL2
        spec = EncoderSpec(
            model_kind=self.model_kind,
            input_dim=X.shape[1],
            slot_dims=(slot_dim, slot_dim, slot_dim),
            shared=StackSpec(tuple(self.shared_hidden)),
            s_branch=StackSpec(tuple(self.s_hidden) if is_model2 else ()),
            po_branch=StackSpec(tuple(self.po_hidden) if is_model2 else ()),
        )
        params = init_params(spec, self.seed)
        train_cfg = TrainConfig(
            base_lr=self.base_lr,
            new_param_lr_multiplier=self.new_param_lr_multiplier,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            lr_gamma=self.lr_gamma,
            lr_step_iters=self.lr_step_iters,
            batch_size=self.batch_size,
            max_iters=self.max_iters,
            seed=self.seed,
        )
        loss_cfg = LossConfig(self.distance_kind, self.epsilon)
        self.params_, self.loss_trace_ = train(params, dataset, lang, train_cfg, loss_cfg)
        self.word_table_ = table
        self.facts_ = unique_facts
        self.language_embeddings_ = lang
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise ValidationError("estimator is not fitted; call fit first")

    def transform(self, X) -> np.ndarray:
        """Concatenated structured visual embeddings, one row per feature row."""
        self._check_fitted()
        X = as_matrix(X, "X", cols=self.params_.spec.input_dim)
        vs, vp, vo, _ = forward_slots(self.params_, X)
        return np.hstack([vs, vp, vo])

    def transform_language(self, facts) -> np.ndarray:
        """Concatenated language embeddings (zeros in wildcard slots)."""
        self._check_fitted()
        rows = [
            encode_language(f, self.word_table_, self.normalizer_).concat()
            for f in _as_facts(facts)
        ]
        return np.stack(rows)

    def predict(self, X) -> np.ndarray:
        """Serialized nearest training fact per row, by full-mask distance."""
        self._check_fitted()
        visual = self.transform(X)
        candidates = np.stack(
            [self.language_embeddings_[f].concat() for f in self.facts_]
        )
        d2 = (
            np.sum(visual * visual, axis=1)[:, None]
            - 2.0 * visual @ candidates.T
            + np.sum(candidates * candidates, axis=1)[None, :]
        )
        nearest = np.argmin(d2, axis=1)
        return np.array([serialize_fact(self.facts_[i]) for i in nearest])


class CcaEmbedder(BaseEstimator, TransformerMixin):
    """Regularized linear CCA with the cross-decomposition transform API."""

    def __init__(self, n_components: int | None = None, reg: float = 0.0):
        self.n_components = n_components
        self.reg = reg

    def fit(self, X, Y):
        self.model_ = cca_fit(X, Y, dim=self.n_components, reg=self.reg)
        self.correlations_ = self.model_.correlations
        return self

    def transform(self, X, Y=None):
        if not hasattr(self, "model_"):
            raise ValidationError("estimator is not fitted; call fit first")
        x_scores = cca_embed(self.model_, np.asarray(X, dtype=np.float64), "visual")
        if Y is None:
            return x_scores
        y_scores = cca_embed(self.model_, np.asarray(Y, dtype=np.float64), "language")
        return x_scores, y_scores

    def fit_transform(self, X, Y):
        return self.fit(X, Y).transform(X, Y)
