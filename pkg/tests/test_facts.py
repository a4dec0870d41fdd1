"""Structured fact parsing, wildcard masks, dataset I/O, and counts."""

import numpy as np
import pytest

from factspace import (
    BadFeatureDim,
    DuplicatePair,
    MalformedFact,
    StructuredFact,
    WildcardMask,
    fact_frequency_table,
    fact_order,
    load_dataset,
    normalize_component,
    parse_fact,
    save_dataset,
    serialize_fact,
)
from factspace.facts import Dataset, FactInstance

from helpers import random_fact


class TestParseFact:
    def test_pipe_third_order(self):
        fact = parse_fact("person|riding|horse")
        assert fact.subject == ("person",)
        assert fact.predicate == ("riding",)
        assert fact.object == ("horse",)
        assert fact.order() == 3

    def test_pipe_second_order(self):
        fact = parse_fact("baby|smiling")
        assert fact == StructuredFact(("baby",), ("smiling",))
        assert fact.order() == 2

    def test_object_without_predicate_rejected(self):
        with pytest.raises(MalformedFact):
            parse_fact("girl||horse")

    def test_bracket_syntax_with_underscores(self):
        fact = parse_fact("<baby, sitting_on, high_chair>")
        assert fact.predicate == ("sitting", "on")
        assert fact.object == ("high", "chair")

    def test_bracket_wildcards(self):
        assert parse_fact("<dog,*,*>").order() == 1
        assert parse_fact("<dog, running, *>").order() == 2

    def test_bare_subject(self):
        assert parse_fact("beach") == StructuredFact(("beach",))

    def test_empty_subject(self):
        with pytest.raises(MalformedFact):
            parse_fact("|running")
        with pytest.raises(MalformedFact):
            parse_fact("   ")

    def test_too_many_components(self):
        with pytest.raises(MalformedFact):
            parse_fact("a|b|c|d")

    def test_case_and_whitespace_normalized(self):
        fact = parse_fact("Big  Dog | Sitting_On |  chair")
        assert fact.subject == ("big", "dog")
        assert fact.predicate == ("sitting", "on")


class TestFactOrder:
    def test_first_order(self):
        assert fact_order(StructuredFact(("beach",))) == 1

    def test_third_order(self):
        fact = StructuredFact.from_components("baby", "sitting_on", "high_chair")
        assert fact_order(fact) == 3

    def test_second_order(self):
        assert fact_order(StructuredFact.from_components("baby", "asian")) == 2

    def test_order_matches_mask_bijection(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            fact = random_fact(rng)
            mask = fact.mask()
            assert mask == WildcardMask.from_order(fact.order())
            assert mask.order() == fact.order()


class TestWildcardMask:
    @pytest.mark.parametrize(
        "order,flags", [(1, (True, False, False)), (2, (True, True, False)), (3, (True, True, True))]
    )
    def test_order_patterns(self, order, flags):
        assert WildcardMask.from_order(order).flags() == flags

    def test_invalid_combinations(self):
        with pytest.raises(MalformedFact):
            WildcardMask(False, False, False)
        with pytest.raises(MalformedFact):
            WildcardMask(True, False, True)
        with pytest.raises(MalformedFact):
            WildcardMask.from_order(4)


class TestRoundTrip:
    def test_examples(self):
        for text in ("person|riding|horse", "baby|smiling", "beach"):
            assert serialize_fact(parse_fact(text)) == text

    def test_random_facts(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            fact = random_fact(rng, max_tokens=3)
            assert parse_fact(serialize_fact(fact)) == fact


class TestStructuredFactValidation:
    def test_unnormalized_tokens_rejected(self):
        with pytest.raises(MalformedFact):
            StructuredFact(("Dog",))
        with pytest.raises(MalformedFact):
            StructuredFact(("sitting_on",))
        with pytest.raises(MalformedFact):
            StructuredFact(("two words",))

    def test_delimiter_characters_rejected(self):
        # Tokens holding syntax characters would break the
        # serialize/parse round trip, so they are malformed.
        for bad in ("a|b", "a,b", "<a>", "a*"):
            with pytest.raises(MalformedFact):
                StructuredFact((bad,))

    def test_object_requires_predicate(self):
        with pytest.raises(MalformedFact):
            StructuredFact(("dog",), None, ("ball",))

    def test_from_components_normalizes(self):
        fact = StructuredFact.from_components(" Big Dog ", None, None)
        assert fact.subject == ("big", "dog")

    def test_normalize_component(self):
        assert normalize_component("Sitting_On  THE mat") == ("sitting", "on", "the", "mat")
        assert normalize_component(["a", "B c"]) == ("a", "b", "c")


def _records(dim=4):
    return [
        {"image_id": "i1", "split": "train", "s": ["dog"], "p": None, "o": None,
         "features": [0.0] * dim},
        {"image_id": "i2", "split": "train", "s": ["dog"], "p": ["running"], "o": None,
         "features": [1.0] * dim},
        {"image_id": "i3", "split": "test", "s": ["dog"], "p": ["chasing"], "o": ["cat"],
         "features": [2.0] * dim},
    ]


class TestLoadDataset:
    def test_basic_load(self, dataset_file):
        path = dataset_file({"feature_dim": 4}, _records())
        ds = load_dataset(path)
        assert len(ds) == 3
        assert ds.feature_dim == 4
        assert [i.image_id for i in ds] == ["i1", "i2", "i3"]
        assert len(ds.train_instances()) == 2
        assert len(ds.test_instances()) == 1

    def test_feature_dim_mismatch(self, dataset_file):
        recs = _records()
        recs[1]["features"] = [1.0, 2.0, 3.0]
        path = dataset_file({"feature_dim": 4}, recs)
        with pytest.raises(BadFeatureDim):
            load_dataset(path)

    def test_duplicate_pair(self, dataset_file):
        recs = _records()
        recs.append(dict(recs[0]))
        path = dataset_file({"feature_dim": 4}, recs)
        with pytest.raises(DuplicatePair):
            load_dataset(path)

    def test_same_image_different_facts_allowed(self, dataset_file):
        recs = _records()
        recs.append({"image_id": "i1", "split": "train", "s": ["dog"], "p": ["running"],
                     "o": None, "features": [0.5] * 4})
        ds = load_dataset(dataset_file({"feature_dim": 4}, recs))
        assert len(ds) == 4

    def test_save_load_round_trip(self, tmp_path, dataset_file):
        ds = load_dataset(dataset_file({"feature_dim": 4}, _records()))
        out = tmp_path / "copy.jsonl"
        save_dataset(ds, out)
        again = load_dataset(out)
        assert again.feature_dim == ds.feature_dim
        for a, b in zip(ds, again):
            assert a.image_id == b.image_id
            assert a.fact == b.fact
            assert a.split == b.split
            np.testing.assert_array_equal(a.features, b.features)


def _make_dataset(entries, dim=2):
    instances = []
    for i, (text, split) in enumerate(entries):
        instances.append(FactInstance(f"img{i}", np.zeros(dim), parse_fact(text), split))
    return Dataset(tuple(instances), dim)


class TestFrequencyTable:
    def test_direct_count(self):
        ds = _make_dataset([("dog", "train")] * 7 + [("dog", "test")] * 2)
        freq = fact_frequency_table(ds)
        assert freq.count(parse_fact("dog")) == 7
        assert freq.train_total == 7

    def test_empty_train_split(self):
        ds = _make_dataset([("dog", "test"), ("cat", "test")])
        freq = fact_frequency_table(ds)
        assert freq.count(parse_fact("dog")) == 0
        assert freq.s(parse_fact("dog")) == 0
        assert freq.train_total == 0

    def test_totals_match_train_size(self):
        rng = np.random.default_rng(5)
        entries = [
            (serialize_fact(random_fact(rng, max_tokens=1)), rng.choice(["train", "test"]))
            for _ in range(200)
        ]
        ds = _make_dataset(entries)
        freq = fact_frequency_table(ds)
        assert sum(freq.fact_counts.values()) == len(ds.train_instances())

    def test_marginals_match_brute_force_scan(self):
        rng = np.random.default_rng(11)
        entries = [
            (serialize_fact(random_fact(rng, s_pool=3, p_pool=3, o_pool=3, max_tokens=1)),
             rng.choice(["train", "test"]))
            for _ in range(300)
        ]
        ds = _make_dataset(entries)
        freq = fact_frequency_table(ds)
        train = ds.train_instances()
        probe = parse_fact("s1|p2|o0")
        # Independent scan oracle: count train instances whose fact defines
        # the named components with equal token lists.
        sp_oracle = sum(
            1 for inst in train
            if inst.fact.subject == probe.subject and inst.fact.predicate == probe.predicate
        )
        so_oracle = sum(
            1 for inst in train
            if inst.fact.subject == probe.subject and inst.fact.object == probe.object
        )
        po_oracle = sum(
            1 for inst in train
            if inst.fact.predicate == probe.predicate and inst.fact.object == probe.object
        )
        s_oracle = sum(1 for inst in train if inst.fact.subject == probe.subject)
        assert freq.sp(probe) == sp_oracle
        assert freq.so(probe) == so_oracle
        assert freq.po(probe) == po_oracle
        assert freq.s(probe) == s_oracle
