"""Wildcard loss values, analytic gradients, and the trainer schedule."""

import csv

import numpy as np
import pytest

from factspace import (
    DivergenceError,
    EncoderSpec,
    FactEmbedding,
    LossConfig,
    MaskMismatch,
    StackSpec,
    StructuredFact,
    TrainConfig,
    ValidationError,
    WildcardMask,
    batch_loss,
    init_params,
    loss_gradients,
    train,
    wildcard_loss,
    write_loss_trace,
)
from factspace.facts import Dataset, FactInstance
from factspace.synth import SynthSpec, synth_generate
from factspace.pipeline import language_targets
from factspace.words import fit_normalizer

from helpers import fd_gradients, make_gradcheck_case, max_rel_error, random_embedding


def _full(s, p, o):
    return FactEmbedding(np.asarray(s, float), np.asarray(p, float), np.asarray(o, float),
                         WildcardMask(True, True, True))


class TestWildcardLoss:
    def test_identical_embeddings_zero(self):
        rng = np.random.default_rng(0)
        for order in (1, 2, 3):
            emb = random_embedding(rng, (3, 3, 3), order)
            assert wildcard_loss(emb, emb) == 0.0

    def test_hand_case_squared_euclidean(self):
        # Only the S slots differ: ||(1,0)-(0,1)||^2 = 2.
        v = _full([1.0, 0.0], [0.3, 0.4], [1.0, 2.0])
        l = _full([0.0, 1.0], [0.3, 0.4], [1.0, 2.0])
        assert wildcard_loss(v, l) == pytest.approx(2.0, abs=1e-12)

    def test_mask_mismatch_rejected(self):
        rng = np.random.default_rng(1)
        v = random_embedding(rng, (3, 3, 3), 2)
        l = random_embedding(rng, (3, 3, 3), 3)
        with pytest.raises(MaskMismatch):
            wildcard_loss(v, l)

    def test_euclidean_kind_smoothed(self):
        v = _full([1.0, 0.0], [0.0, 0.0], [0.0, 0.0])
        l = _full([0.0, 0.0], [0.0, 0.0], [0.0, 0.0])
        cfg = LossConfig("euclidean", epsilon=1e-3)
        # Three slot terms: sqrt(1 + eps^2) + 2 * sqrt(eps^2).
        expected = np.sqrt(1.0 + 1e-6) + 2e-3
        assert wildcard_loss(v, l, cfg) == pytest.approx(expected, abs=1e-12)

    def test_order2_loss_ignores_object_projection(self):
        # Perturbing W^O arbitrarily cannot change the loss of an
        # order-2 batch: the O slot never enters the masked sum.
        rng = np.random.default_rng(2)
        params, batch, lang = make_gradcheck_case(rng, "model1", orders=(2,))
        base = batch_loss(params, batch, lang)
        params.proj_o = rng.standard_normal(params.proj_o.shape) * 100.0
        assert batch_loss(params, batch, lang) == base


class TestLossGradients:
    def test_order1_batch_zeroes_p_and_o_projections(self):
        rng = np.random.default_rng(3)
        params, batch, lang = make_gradcheck_case(rng, "model1", orders=(1,))
        grads = loss_gradients(params, batch, lang)
        assert np.all(grads["proj_p"] == 0.0)
        assert np.all(grads["proj_o"] == 0.0)
        assert np.any(grads["proj_s"] != 0.0)

    def test_order2_model2_po_branch_flows_through_p(self):
        rng = np.random.default_rng(4)
        params, batch, lang = make_gradcheck_case(rng, "model2", orders=(2,))
        grads = loss_gradients(params, batch, lang)
        assert np.all(grads["proj_o"] == 0.0)
        po_names = [n for n, _ in params.named_parameters() if n.startswith("po_branch")]
        if po_names:
            assert any(np.any(grads[n] != 0.0) for n in po_names)
        # Finite differences agree that the PO branch still matters via W^P.
        numeric = fd_gradients(params, batch, lang, LossConfig())
        assert max_rel_error(grads, numeric) < 1e-4

    @pytest.mark.parametrize("model_kind", ["model1", "model2"])
    def test_gradcheck_random_nets(self, model_kind):
        rng = np.random.default_rng(5 if model_kind == "model1" else 6)
        for _ in range(5):
            params, batch, lang = make_gradcheck_case(rng, model_kind)
            analytic = loss_gradients(params, batch, lang)
            numeric = fd_gradients(params, batch, lang, LossConfig())
            assert max_rel_error(analytic, numeric) < 1e-4

    def test_gradcheck_euclidean_distance(self):
        rng = np.random.default_rng(7)
        cfg = LossConfig("euclidean", epsilon=1e-3)
        params, batch, lang = make_gradcheck_case(rng, "model2")
        analytic = loss_gradients(params, batch, lang, cfg)
        numeric = fd_gradients(params, batch, lang, cfg)
        assert max_rel_error(analytic, numeric) < 1e-4


def _toy_training_setup(seed=0):
    rng = np.random.default_rng(seed)
    spec = EncoderSpec("model1", 4, (3, 3, 3), StackSpec((6,)))
    params = init_params(spec, seed=seed)
    facts = [
        StructuredFact(("a",)),
        StructuredFact(("b",), ("c",)),
        StructuredFact(("b",), ("c",), ("d",)),
    ]
    lang = {f: random_embedding(rng, (3, 3, 3), f.order()) for f in facts}
    instances = tuple(
        FactInstance(f"img{i}", rng.standard_normal(4), facts[i % 3], "train")
        for i in range(30)
    )
    return params, Dataset(instances, 4), lang


class TestTrain:
    def test_paper_defaults(self):
        cfg = TrainConfig()
        assert cfg.base_lr == 0.5e-4
        assert cfg.new_param_lr_multiplier == 10.0
        assert cfg.momentum == 0.9
        assert cfg.weight_decay == 1e-4
        assert cfg.lr_gamma == 0.1
        assert cfg.lr_step_iters == 5000
        assert cfg.batch_size == 100

    def test_zero_learning_rate_leaves_params_bitwise(self):
        params, dataset, lang = _toy_training_setup()
        cfg = TrainConfig(base_lr=0.0, max_iters=5, batch_size=8, seed=1)
        trained, trace = train(params, dataset, lang, cfg)
        for (_, before), (_, after) in zip(params.named_parameters(), trained.named_parameters()):
            np.testing.assert_array_equal(before, after)
        assert len(trace) == 5

    def test_input_params_untouched(self):
        params, dataset, lang = _toy_training_setup()
        snapshot = {n: a.copy() for n, a in params.named_parameters()}
        cfg = TrainConfig(base_lr=0.01, max_iters=10, batch_size=8, seed=1)
        train(params, dataset, lang, cfg)
        for name, arr in params.named_parameters():
            np.testing.assert_array_equal(arr, snapshot[name])

    def test_deterministic_trace(self):
        params, dataset, lang = _toy_training_setup()
        cfg = TrainConfig(base_lr=0.01, max_iters=20, batch_size=8, seed=3)
        _, trace_a = train(params, dataset, lang, cfg)
        _, trace_b = train(params, dataset, lang, cfg)
        assert [(s.iteration, s.loss, s.lr) for s in trace_a] == [
            (s.iteration, s.loss, s.lr) for s in trace_b
        ]

    def test_weight_decay_only_step_matches_formula(self):
        # An order-1 batch gives W^P zero data gradient, so one update is
        # pure decay: W' = W * (1 - lr_proj * weight_decay).
        rng = np.random.default_rng(8)
        spec = EncoderSpec("model1", 4, (3, 3, 3), StackSpec())
        params = init_params(spec, seed=9)
        fact = StructuredFact(("a",))
        lang = {fact: random_embedding(rng, (3, 3, 3), 1)}
        instances = tuple(
            FactInstance(f"i{i}", rng.standard_normal(4), fact, "train") for i in range(4)
        )
        dataset = Dataset(instances, 4)
        cfg = TrainConfig(
            base_lr=0.01, new_param_lr_multiplier=10.0, momentum=0.9,
            weight_decay=1e-3, batch_size=4, max_iters=1, seed=0,
        )
        trained, _ = train(params, dataset, lang, cfg)
        lr_proj = 0.01 * 10.0
        np.testing.assert_allclose(
            trained.proj_p, params.proj_p * (1.0 - lr_proj * 1e-3), rtol=1e-15
        )

    def test_lr_schedule_applied(self):
        params, dataset, lang = _toy_training_setup()
        cfg = TrainConfig(base_lr=0.01, lr_gamma=0.5, lr_step_iters=4,
                          max_iters=9, batch_size=8, seed=0)
        _, trace = train(params, dataset, lang, cfg)
        assert [s.lr for s in trace] == [0.01] * 4 + [0.005] * 4 + [0.0025]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises_with_iteration(self):
        params, dataset, lang = _toy_training_setup()
        cfg = TrainConfig(base_lr=1e6, max_iters=200, batch_size=8, seed=0)
        with pytest.raises(DivergenceError) as err:
            train(params, dataset, lang, cfg)
        assert 0 <= err.value.iteration < 200

    def test_empty_train_split_rejected(self):
        params, dataset, lang = _toy_training_setup()
        test_only = Dataset(
            tuple(
                FactInstance(i.image_id, i.features, i.fact, "test")
                for i in dataset.instances
            ),
            dataset.feature_dim,
        )
        with pytest.raises(ValidationError):
            train(params, test_only, lang, TrainConfig(max_iters=1))

    def test_synthetic_linear_convergence(self):
        # The generator guarantees a low-loss linear solution exists, so
        # 2000 iterations must cut the train loss by more than 10x.
        spec = SynthSpec(s_vocab=10, p_vocab=8, o_vocab=8, facts1=10, facts2=20,
                         facts3=30, images_per_fact=8, latent_dim=8, sigma=0.02, seed=13)
        dataset, table, _ = synth_generate(spec)
        facts = dataset.unique_facts("train")
        norm = fit_normalizer(facts, table)
        lang = language_targets(facts, table, norm)
        enc_spec = EncoderSpec("model1", dataset.feature_dim, (8, 8, 8), StackSpec((32,)))
        params = init_params(enc_spec, seed=1)
        cfg = TrainConfig(base_lr=0.01, batch_size=64, max_iters=2000, seed=2)
        _, trace = train(params, dataset, lang, cfg)
        assert trace[-1].loss < 0.1 * trace[0].loss

    def test_trace_csv_round_trip(self, tmp_path):
        params, dataset, lang = _toy_training_setup()
        cfg = TrainConfig(base_lr=0.01, max_iters=5, batch_size=8, seed=0)
        _, trace = train(params, dataset, lang, cfg)
        path = tmp_path / "trace.csv"
        write_loss_trace(trace, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iter", "loss", "lr"]
        assert len(rows) == 6
        assert float(rows[1][1]) == trace[0].loss
