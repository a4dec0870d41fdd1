"""The sklearn-facing estimator wrappers."""

import numpy as np
import pytest
from sklearn.base import clone

from factspace import (
    CcaEmbedder,
    StructuredFactEmbedder,
    SynthSpec,
    ValidationError,
    serialize_fact,
    synth_generate,
)


@pytest.fixture(scope="module")
def synth_xy():
    spec = SynthSpec(s_vocab=8, p_vocab=6, o_vocab=6, facts1=6, facts2=10, facts3=14,
                     images_per_fact=8, latent_dim=8, sigma=0.02, seed=31)
    dataset, table, _ = synth_generate(spec)
    train = dataset.train_instances()
    test = dataset.test_instances()
    X = np.stack([i.features for i in train])
    y = [i.fact for i in train]
    Xt = np.stack([i.features for i in test])
    yt = [i.fact for i in test]
    return table, X, y, Xt, yt


class TestStructuredFactEmbedder:
    def test_fit_transform_shapes(self, synth_xy):
        table, X, y, Xt, _ = synth_xy
        est = StructuredFactEmbedder(
            word_table=table, shared_hidden=(24,), base_lr=0.02,
            batch_size=32, max_iters=400, seed=1,
        )
        est.fit(X, y)
        out = est.transform(Xt)
        assert out.shape == (len(Xt), 3 * table.dim)
        lang = est.transform_language(["s001|p001", "s001"])
        assert lang.shape == (2, 3 * table.dim)
        np.testing.assert_array_equal(lang[1][table.dim:], np.zeros(2 * table.dim))

    def test_predict_recovers_facts(self, synth_xy):
        table, X, y, Xt, yt = synth_xy
        est = StructuredFactEmbedder(
            word_table=table, shared_hidden=(24,), base_lr=0.02,
            batch_size=32, max_iters=600, seed=2,
        )
        est.fit(X, y)
        predictions = est.predict(Xt)
        truth = np.array([serialize_fact(f) for f in yt])
        accuracy = float(np.mean(predictions == truth))
        assert accuracy >= 0.8

    def test_accepts_fact_strings(self, synth_xy):
        table, X, y, _, _ = synth_xy
        strings = [serialize_fact(f) for f in y]
        est = StructuredFactEmbedder(word_table=table, max_iters=10, seed=0)
        est.fit(X, strings)
        assert len(est.facts_) == len(set(strings))

    def test_unfitted_raises(self, synth_xy):
        table, X, _, _, _ = synth_xy
        with pytest.raises(ValidationError):
            StructuredFactEmbedder(word_table=table).transform(X)

    def test_word_table_required(self, synth_xy):
        _, X, y, _, _ = synth_xy
        with pytest.raises(ValidationError):
            StructuredFactEmbedder().fit(X, y)

    def test_sklearn_clone_and_params(self, synth_xy):
        table, _, _, _, _ = synth_xy
        est = StructuredFactEmbedder(word_table=table, model_kind="model2", seed=9)
        cloned = clone(est)
        assert cloned.get_params()["model_kind"] == "model2"
        assert cloned.get_params()["seed"] == 9
        est.set_params(max_iters=5)
        assert est.max_iters == 5

    def test_model2_branches(self, synth_xy):
        table, X, y, Xt, _ = synth_xy
        est = StructuredFactEmbedder(
            word_table=table, model_kind="model2", shared_hidden=(16,),
            s_hidden=(8,), po_hidden=(8,), base_lr=0.02, batch_size=32,
            max_iters=200, seed=3,
        )
        est.fit(X, y)
        assert est.params_.spec.model_kind == "model2"
        assert est.transform(Xt).shape[1] == 3 * table.dim


class TestCcaEmbedder:
    def test_fit_and_correlations(self):
        rng = np.random.default_rng(4)
        Y = rng.standard_normal((300, 5))
        A = rng.standard_normal((5, 5)) + 3.0 * np.eye(5)
        est = CcaEmbedder(n_components=4, reg=0.0).fit(Y @ A, Y)
        np.testing.assert_allclose(est.correlations_, 1.0, atol=1e-8)

    def test_transform_single_and_paired(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((100, 4))
        Y = rng.standard_normal((100, 4))
        est = CcaEmbedder(n_components=2, reg=1e-3).fit(X, Y)
        xs = est.transform(X)
        assert xs.shape == (100, 2)
        xs2, ys = est.transform(X, Y)
        np.testing.assert_array_equal(xs, xs2)
        assert ys.shape == (100, 2)

    def test_fit_transform(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((50, 3))
        Y = rng.standard_normal((50, 3))
        xs, ys = CcaEmbedder(reg=1e-3).fit_transform(X, Y)
        assert xs.shape == ys.shape == (50, 3)

    def test_clone(self):
        est = CcaEmbedder(n_components=3, reg=0.5)
        cloned = clone(est)
        assert cloned.get_params() == {"n_components": 3, "reg": 0.5}

    def test_unfitted_raises(self):
        with pytest.raises(ValidationError):
            CcaEmbedder().transform(np.ones((2, 2)))
