import numpy as np
import pytest

from slideprobe.errors import NotFound, ValidationError
from slideprobe.fixtures import GRADIENT_SLIDE_ID
from slideprobe.sweeps import (
    ExperimentStore,
    SweepRequest,
    SweepTrace,
    Verdict,
    run_sweep,
    trace_to_csv,
)


@pytest.fixture()
def experiments(tmp_path):
    return ExperimentStore(tmp_path / "experiments")


def gradient_request(**overrides):
    kwargs = dict(
        slide_id=GRADIENT_SLIDE_ID,
        anchor_x0=150,
        anchor_y0=256,
        direction=(1.0, 0.0),
        stride_px=112.0,
        steps=8,
    )
    kwargs.update(overrides)
    return SweepRequest(**kwargs)


class TestSweepRequest:
    def test_direction_normalized(self):
        req = gradient_request(direction=(3.0, 4.0))
        assert req.direction == pytest.approx((0.6, 0.8))

    def test_zero_direction_rejected(self):
        with pytest.raises(ValidationError):
            gradient_request(direction=(0.0, 0.0))

    def test_steps_bounds(self):
        with pytest.raises(ValidationError):
            gradient_request(steps=0)
        with pytest.raises(ValidationError):
            gradient_request(steps=257)


class TestRunSweep:
    def test_zero_stride_gives_identical_logits(self, slides, toy_backend):
        trace = run_sweep(slides, gradient_request(stride_px=0.0, steps=3), toy_backend)
        assert len(trace.points) == 4
        assert len(set(trace.logits)) == 1
        centers = {(p.center_x0, p.center_y0) for p in trace.points}
        assert len(centers) == 1

    def test_point_count_is_steps_plus_one(self, slides, toy_backend):
        trace = run_sweep(slides, gradient_request(steps=5), toy_backend)
        assert len(trace.points) == 6

    def test_centers_follow_line(self, slides, toy_backend):
        trace = run_sweep(slides, gradient_request(), toy_backend)
        for p in trace.points:
            assert p.center_x0 == pytest.approx(150 + p.index * 112, abs=0.5)
            assert p.center_y0 == pytest.approx(256, abs=0.5)

    def test_gradient_sweep_monotone_nondecreasing(self, slides, toy_backend):
        trace = run_sweep(slides, gradient_request(steps=14), toy_backend)
        logits = [l for l in trace.logits if l is not None]
        assert len(logits) == 15
        assert all(b >= a for a, b in zip(logits, logits[1:]))

    def test_out_of_bounds_steps_truncated_with_warning(self, slides, toy_backend):
        req = gradient_request(anchor_x0=1800, steps=10)
        trace = run_sweep(slides, req, toy_backend)
        assert len(trace.points) < 11
        assert any("out of bounds" in w for w in trace.warnings)

    def test_wide_stride_warns_but_runs(self, slides, toy_backend):
        trace = run_sweep(slides, gradient_request(stride_px=400, steps=2), toy_backend)
        assert any("will not overlap" in w for w in trace.warnings)
        assert len(trace.points) == 3

    def test_deterministic(self, slides, toy_backend):
        a = run_sweep(slides, gradient_request(), toy_backend)
        b = run_sweep(slides, gradient_request(), toy_backend)
        assert a.logits == b.logits

    def test_overlap_fraction(self, slides, toy_backend):
        req = gradient_request(stride_px=112, steps=2)
        trace = run_sweep(slides, req, toy_backend)
        extent = 224 * 1.14 / 1.14
        expected_overlap = (extent - 112) / extent
        p0, p1 = trace.points[0], trace.points[1]
        gap = abs(p1.center_x0 - p0.center_x0)
        assert (extent - gap) / extent == pytest.approx(expected_overlap, abs=1e-6)


class TestPersistence:
    def test_trace_roundtrip(self, slides, toy_backend, experiments):
        trace = run_sweep(slides, gradient_request(steps=3), toy_backend,
                          saliency_sink=experiments.save_saliency)
        experiments.save_trace(trace)
        loaded = experiments.get_trace(trace.trace_id)
        assert loaded.to_dict() == trace.to_dict()
        grid = experiments.load_saliency(loaded.points[0].saliency_ref)
        assert grid.shape == (2, 4)

    def test_list_traces_order_and_pagination(self, slides, toy_backend, experiments):
        ids = []
        for _ in range(3):
            t = run_sweep(slides, gradient_request(steps=1), toy_backend)
            experiments.save_trace(t)
            ids.append(t.trace_id)
        got = experiments.list_traces(GRADIENT_SLIDE_ID)
        assert [t.trace_id for t in got] == ids
        page = experiments.list_traces(GRADIENT_SLIDE_ID, offset=1, limit=1)
        assert [t.trace_id for t in page] == [ids[1]]

    def test_list_empty_store(self, experiments):
        assert experiments.list_traces("nothing") == []

    def test_filter_by_explanation_matches_full_scan(self, slides, toy_backend,
                                                     experiments):
        for eid in ("exp-a", "exp-b", "exp-a"):
            t = run_sweep(slides, gradient_request(steps=1, explanation_id=eid),
                          toy_backend)
            experiments.save_trace(t)
        filtered = experiments.list_traces(GRADIENT_SLIDE_ID, explanation_id="exp-a")
        full = [t for t in experiments.list_traces(GRADIENT_SLIDE_ID)
                if t.request.explanation_id == "exp-a"]
        assert [t.trace_id for t in filtered] == [t.trace_id for t in full]
        assert len(filtered) == 2

    def test_csv_export(self, slides, toy_backend):
        trace = run_sweep(slides, gradient_request(steps=2), toy_backend)
        lines = trace_to_csv(trace).strip().splitlines()
        assert lines[0] == "index,x,y,logit"
        assert len(lines) == 4


class TestVerdicts:
    def make_trace(self, slides, toy_backend, experiments):
        trace = run_sweep(slides, gradient_request(steps=1), toy_backend)
        experiments.save_trace(trace)
        return trace

    def test_roundtrip(self, slides, toy_backend, experiments):
        trace = self.make_trace(slides, toy_backend, experiments)
        v = Verdict(trace_id=trace.trace_id, explanation_id="e1",
                    component_label="healthy glands", outcome="contradicts",
                    note="logit rose with glands", author="tester")
        vid = experiments.record_verdict(v)
        got = experiments.list_verdicts(trace.trace_id)
        assert [x.verdict_id for x in got] == [vid]
        assert got[0].outcome == "contradicts"

    def test_dangling_trace_rejected(self, experiments):
        v = Verdict(trace_id="nope", explanation_id="e1",
                    component_label="x", outcome="supports")
        with pytest.raises(NotFound):
            experiments.record_verdict(v)

    def test_unknown_explanation_rejected(self, slides, toy_backend, experiments):
        trace = self.make_trace(slides, toy_backend, experiments)
        v = Verdict(trace_id=trace.trace_id, explanation_id="ghost",
                    component_label="x", outcome="supports")
        with pytest.raises(NotFound):
            experiments.record_verdict(v, explanation_ids={"e1"})

    def test_append_only_latest_flagged_current(self, slides, toy_backend,
                                                experiments):
        trace = self.make_trace(slides, toy_backend, experiments)
        first = Verdict(trace_id=trace.trace_id, explanation_id="e1",
                        component_label="glands", outcome="supports")
        second = Verdict(trace_id=trace.trace_id, explanation_id="e1",
                         component_label="glands", outcome="contradicts")
        experiments.record_verdict(first)
        experiments.record_verdict(second)
        got = experiments.list_verdicts(trace.trace_id)
        assert len(got) == 2  # both retained
        by_id = {v.verdict_id: v for v in got}
        assert not by_id[first.verdict_id].current
        assert by_id[second.verdict_id].current

    def test_invalid_outcome(self):
        with pytest.raises(ValidationError):
            Verdict(trace_id="t", explanation_id="e", component_label="c",
                    outcome="maybe")
