import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slideprobe.errors import DegenerateError, EvalAborted, NotFound, ValidationError
from slideprobe.evaluate import (
    DatasetItem,
    EvalDataset,
    Explanation,
    ExplanationStore,
    auroc,
    binarize,
    bootstrap_auroc,
    compare_explanations,
    comparison_markdown,
    evaluate_explanation,
    ground_truth,
    subset,
)
from slideprobe.fixtures import BUNDLED_EXPLANATIONS, make_eval_dataset
from slideprobe.vlm import FourWayLabel, VlmConfig, VlmGateway


def pairwise_auroc(scores, labels):
    """Oracle: enumerate every (positive, negative) pair explicitly."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p, n in itertools.product(pos, neg):
        if p > n:
            total += 1.0
        elif p == n:
            total += 0.5
    return total / (len(pos) * len(neg))


def explanations_by_id():
    return {e.id: e for e in BUNDLED_EXPLANATIONS}


def mock_gateway(seed=0):
    return VlmGateway(VlmConfig(backend="mock", mock_seed=seed))


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([0.1, 0.2, 0.9, 0.8], [0, 0, 1, 1]) == 1.0

    def test_inverted(self):
        assert auroc([0.9, 0.8, 0.1, 0.2], [0, 0, 1, 1]) == 0.0

    def test_all_tied(self):
        assert auroc([1, 1, 1, 1], [0, 1, 0, 1]) == 0.5

    def test_single_class_degenerate(self):
        with pytest.raises(DegenerateError):
            auroc([1, 2], [1, 1])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_matches_pairwise_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.choice([0.0, 0.25, 0.5, 1.0, 2.0], size=n)
        assert auroc(scores, labels) == pairwise_auroc(scores, labels)

    def test_label_flip_complements(self):
        rng = np.random.default_rng(9)
        scores = rng.normal(size=30)
        labels = rng.integers(0, 2, size=30)
        labels[0], labels[1] = 0, 1
        a = auroc(scores, labels)
        b = auroc(-scores, labels)
        assert a + b == pytest.approx(1.0, abs=1e-15)


class TestBootstrap:
    def test_seed_reproducible(self):
        scores = [0, 1, 1, 0, 1, 0, 1, 1]
        labels = [0, 1, 0, 0, 1, 0, 1, 1]
        assert bootstrap_auroc(scores, labels, 200, seed=4) == bootstrap_auroc(
            scores, labels, 200, seed=4
        )

    def test_different_seeds_differ(self):
        scores = [0, 1, 1, 0, 1, 0, 1, 1]
        labels = [0, 1, 0, 0, 1, 0, 1, 1]
        assert bootstrap_auroc(scores, labels, 200, seed=1) != bootstrap_auroc(
            scores, labels, 200, seed=2
        )

    def test_mean_tracks_point_estimate(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 2, size=120)
        scores = labels + rng.normal(0, 0.8, size=120)
        mean, std = bootstrap_auroc(scores, labels, 500, seed=0)
        assert abs(mean - auroc(scores, labels)) < 0.03
        assert 0 < std < 0.1

    def test_tiny_single_class_raises(self):
        with pytest.raises(DegenerateError):
            bootstrap_auroc([1.0, 2.0], [1, 1], 10, seed=0)


class TestBuildingBlocks:
    def test_binarize(self):
        assert binarize(FourWayLabel.HIGH) == 1
        assert binarize(FourWayLabel.MEDIUM_HIGH) == 1
        assert binarize(FourWayLabel.MEDIUM_LOW) == 0
        assert binarize(FourWayLabel.LOW) == 0

    def test_ground_truth_boundary(self):
        assert ground_truth(0.001) == 1
        assert ground_truth(0.0) == 0
        assert ground_truth(-3.0) == 0
        assert ground_truth(2.0, boundary=2.5) == 0

    def test_ground_truth_rejects_nan(self):
        with pytest.raises(ValidationError):
            ground_truth(float("nan"))

    def test_subset_zero_keeps_all(self):
        items = [DatasetItem(f"p{i}", x) for i, x in enumerate([-2.0, -0.5, 0.0, 3.0])]
        assert subset(items, 0.0) == items

    def test_subset_strict_inequality(self):
        items = [DatasetItem(f"p{i}", x) for i, x in enumerate([-2.0, -1.0, 1.0, 3.0])]
        kept = subset(items, 1.0)
        assert [it.mil_logit for it in kept] == [-2.0, 3.0]

    def test_subsets_nest(self):
        ds = make_eval_dataset(n=132, seed=11)
        a = {it.patch_ref for it in subset(ds.items, 1.0)}
        b = {it.patch_ref for it in subset(ds.items, 3.0)}
        assert b <= a <= {it.patch_ref for it in ds.items}


class TestDataset:
    def test_duplicate_refs_rejected(self):
        with pytest.raises(ValidationError):
            EvalDataset(id="d", items=(DatasetItem("p", 1.0), DatasetItem("p", 2.0)))

    def test_json_roundtrip(self, tmp_path):
        ds = make_eval_dataset(n=20, seed=1)
        path = tmp_path / "ds.json"
        ds.save(path)
        assert EvalDataset.load(path) == ds

    def test_fixture_dataset_shape(self):
        ds = make_eval_dataset(n=132, seed=11)
        assert len(ds.items) == 132
        logits = [it.mil_logit for it in ds.items]
        assert min(logits) >= -5.0 and max(logits) <= 5.0


class TestExplanationStore:
    def test_crud_persists(self, tmp_path):
        path = tmp_path / "explanations.json"
        store = ExplanationStore(path)
        exp = Explanation(id="e1", name="demo", text="some hypothesis")
        store.put(exp)
        assert ExplanationStore(path).get("e1") == exp
        store.delete("e1")
        with pytest.raises(NotFound):
            ExplanationStore(path).get("e1")


class TestEvaluateExplanation:
    def test_inversion_identity(self):
        ds = make_eval_dataset(n=132, seed=11)
        gw = mock_gateway(seed=0)
        exps = explanations_by_id()
        cache: dict = {}
        fwd = evaluate_explanation(ds, exps["tumor_lymphocyte"], gw,
                                   n_boot=300, seed=0, description_cache=cache)
        inv = evaluate_explanation(ds, exps["tumor_lymphocyte_inverse"], gw,
                                   n_boot=300, seed=0, description_cache=cache)
        for rf, ri in zip(fwd.rows, inv.rows):
            assert rf.auroc_point + ri.auroc_point == pytest.approx(1.0, abs=1e-15)
            assert rf.auroc_mean + ri.auroc_mean == pytest.approx(1.0, abs=0.02)

    def test_describe_called_once_per_patch(self):
        ds = make_eval_dataset(n=40, seed=2)
        gw = mock_gateway()
        cache: dict = {}
        exps = explanations_by_id()
        for eid in ("tumor_lymphocyte", "cow_camel"):
            evaluate_explanation(ds, exps[eid], gw, n_boot=50, seed=0,
                                 description_cache=cache)
        describes = [r for r in gw.archive if r["stage"] == "describe"]
        assert len(describes) == 40

    def test_random_explanation_near_half(self):
        ds = make_eval_dataset(n=132, seed=11)
        exp = explanations_by_id()["cow_camel"]
        res = evaluate_explanation(ds, exp, mock_gateway(seed=0), n_boot=200, seed=0)
        assert 0.35 <= res.rows[0].auroc_mean <= 0.65

    def test_deterministic_json_export(self):
        ds = make_eval_dataset(n=30, seed=5)
        exp = explanations_by_id()["tumor_lymphocyte"]
        a = evaluate_explanation(ds, exp, mock_gateway(), n_boot=100, seed=7)
        b = evaluate_explanation(ds, exp, mock_gateway(), n_boot=100, seed=7)
        assert a.to_json() == b.to_json()
        assert "created_at" not in a.to_json()
        assert a.created_at  # still present on the object itself

    def test_failure_fraction_aborts(self):
        ds = make_eval_dataset(n=20, seed=3)
        gw = mock_gateway()
        calls = [0]
        real = gw.describe_patch

        def flaky(png=None, patch_ref=""):
            calls[0] += 1
            if calls[0] % 2 == 0:
                from slideprobe.errors import VlmError

                raise VlmError("synthetic outage")
            return real(png, patch_ref)

        gw.describe_patch = flaky
        exp = explanations_by_id()["tumor_lymphocyte"]
        with pytest.raises(EvalAborted):
            evaluate_explanation(ds, exp, gw, n_boot=50, seed=0)

    def test_few_failures_reported_not_fatal(self):
        ds = make_eval_dataset(n=40, seed=4)
        gw = mock_gateway()
        real = gw.describe_patch
        bad = {ds.items[0].patch_ref, ds.items[1].patch_ref}

        def flaky(png=None, patch_ref=""):
            if patch_ref in bad:
                from slideprobe.errors import VlmError

                raise VlmError("synthetic outage")
            return real(png, patch_ref)

        gw.describe_patch = flaky
        exp = explanations_by_id()["tumor_lymphocyte"]
        res = evaluate_explanation(ds, exp, gw, n_boot=50, seed=0)
        assert len(res.failures) == 2
        assert len(res.samples) == 38

    def test_median_centering_balances_classes(self):
        items = tuple(DatasetItem(f"fixture:tumor_solid#{i}", 2.0 + i * 0.1)
                      for i in range(20))
        ds = EvalDataset(id="shifted", items=items)
        exp = explanations_by_id()["cow_camel"]
        res = evaluate_explanation(ds, exp, mock_gateway(), thresholds=(0.0,),
                                   n_boot=50, seed=0, center_at_median=True)
        assert res.rows[0].positive_fraction == pytest.approx(0.5, abs=0.05)

    def test_ordinal_metric_present(self):
        ds = make_eval_dataset(n=60, seed=6)
        exp = explanations_by_id()["tumor_lymphocyte"]
        res = evaluate_explanation(ds, exp, mock_gateway(), n_boot=50, seed=0)
        for row in res.rows:
            assert 0.0 <= row.auroc_ordinal <= 1.0


class TestComparison:
    def test_needs_two_explanations(self):
        ds = make_eval_dataset(n=10, seed=0)
        with pytest.raises(ValidationError):
            compare_explanations(ds, [BUNDLED_EXPLANATIONS[0]], mock_gateway())

    def test_markdown_table_shape(self):
        ds = make_eval_dataset(n=132, seed=11)
        comparison = compare_explanations(
            ds, list(BUNDLED_EXPLANATIONS), mock_gateway(), n_boot=100, seed=0
        )
        md = comparison_markdown(comparison)
        lines = md.strip().splitlines()
        assert lines[0] == "| Explanation | X | X1 | X3 |"
        assert len(lines) == 2 + len(BUNDLED_EXPLANATIONS)
        assert md.count("*") == 3  # one winner per column

    def test_informative_beats_random_and_inverse(self):
        ds = make_eval_dataset(n=132, seed=11)
        comparison = compare_explanations(
            ds, list(BUNDLED_EXPLANATIONS), mock_gateway(), n_boot=200, seed=0
        )
        results = comparison["results"]
        tl = results["tumor_lymphocyte"].rows[0].auroc_mean
        assert tl > results["cow_camel"].rows[0].auroc_mean
        assert tl > results["tumor_lymphocyte_inverse"].rows[0].auroc_mean
