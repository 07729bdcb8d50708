"""Тесты потокового сегментатора на вручную собранной иерархии."""

from dataclasses import replace

import numpy as np
import orjson
import pytest
from conftest import spherical_gmm
from scipy.stats import linregress

from tscseg.core_model import Standardizer
from tscseg.errors import DimensionMismatch, MissingDirective, NoSamples, ValidationFailed
from tscseg.hier_tsc import TransitionHierarchy
from tscseg.online_segmenter import (
    FEATURE_ENCODE,
    GMM_PREDICTION,
    STAGES,
    TOTAL,
    decision_from_frame,
    latency_snapshot,
    step,
    stream_new,
)
from tscseg.schemas import AssistanceDirective, OnlineConfig

IDLE = np.array([0.0, 10.0])
T1_VISUAL = np.array([0.0, 0.0])
T2_VISUAL = np.array([10.0, 0.0])
AMBIGUOUS = np.array([5.0, 0.0])


def _kinematic() -> np.ndarray:
    k = np.zeros(14)
    k[9] = 1.0
    return k


@pytest.fixture
def hierarchy():
    """Три визуальных кластера: T1, T2 и отброшенный фон."""
    kinematic = {vi: spherical_gmm([np.zeros(14)]) for vi in range(3)}
    return TransitionHierarchy(
        visual_model=spherical_gmm([T1_VISUAL, T2_VISUAL, IDLE]),
        kinematic_models=kinematic,
        standardizer=Standardizer(mean=np.zeros(14), std=np.ones(14)),
        encoder=None,
        canonical_order=("T1", "T2"),
        memberships=(),
        num_demos=1,
        label_map={(0, 0): "T1", (1, 0): "T2", (2, 0): None},
    )


@pytest.fixture
def directives():
    return {
        "T1": AssistanceDirective(transition="T1", target_orientation=[1.0, 0.0, 0.0, 0.0], gripper_command="close"),
        "T2": None,
    }


def _run(session, frames):
    return [session.step(visual, _kinematic()) for visual in frames]


class TestSessionCreation:
    def test_starts_in_first_segment(self, hierarchy, directives):
        session = stream_new(hierarchy, directives, OnlineConfig())
        assert session.segment_label == "S1"
        assert session.next_allowed == "T1"
        assert session.steps == 0

    def test_missing_directive_named(self, hierarchy):
        with pytest.raises(MissingDirective, match="T2"):
            stream_new(hierarchy, {"T1": None}, OnlineConfig())

    def test_unlabeled_hierarchy(self, hierarchy, directives):
        with pytest.raises(ValidationFailed):
            stream_new(replace(hierarchy, label_map={}), directives, OnlineConfig())


class TestDecisions:
    def test_event_after_hysteresis(self, hierarchy, directives):
        session = stream_new(hierarchy, directives, OnlineConfig(hysteresis=3))
        decisions = _run(session, [IDLE] * 10 + [T1_VISUAL] * 3)
        events = [(d.time_index, d.transition_event) for d in decisions if d.transition_event]
        assert events == [(12, "T1")]
        assert decisions[-1].segment_label == "S2"
        assert decisions[-1].directive.gripper_command == "close"
        assert all(d.segment_label == "S1" for d in decisions[:-1])

    def test_pruned_region_never_fires(self, hierarchy, directives):
        session = stream_new(hierarchy, directives, OnlineConfig(hysteresis=1))
        decisions = _run(session, [IDLE] * 20)
        assert all(d.transition_event is None and d.segment_label == "S1" for d in decisions)

    def test_low_posterior_suppressed(self, hierarchy, directives):
        session = stream_new(hierarchy, directives, OnlineConfig(hysteresis=1, posterior_floor=0.6))
        decisions = _run(session, [AMBIGUOUS] * 5)
        assert all(d.transition_event is None for d in decisions)

    def test_interrupted_streak_restarts(self, hierarchy, directives):
        session = stream_new(hierarchy, directives, OnlineConfig(hysteresis=3))
        decisions = _run(session, [T1_VISUAL, T1_VISUAL, IDLE, T1_VISUAL, T1_VISUAL, T1_VISUAL])
        assert [d.transition_event for d in decisions] == [None, None, None, None, None, "T1"]

    def test_canonical_order_enforced(self, hierarchy, directives):
        session = stream_new(hierarchy, directives, OnlineConfig(hysteresis=2))
        decisions = _run(session, [T2_VISUAL] * 5 + [T1_VISUAL] * 2 + [T2_VISUAL] * 2)
        assert [d.transition_event for d in decisions if d.transition_event] == ["T1", "T2"]
        assert decisions[-1].segment_label == "S3"
        assert session.next_allowed is None

    def test_emit_with_flag(self, hierarchy, directives):
        session = stream_new(hierarchy, directives, OnlineConfig(hysteresis=2, out_of_order_policy="emit_with_flag"))
        decisions = _run(session, [T2_VISUAL] * 2)
        assert decisions[-1].transition_event == "T2"
        assert decisions[-1].out_of_order
        assert decisions[-1].segment_label == "S3"

    def test_sessions_are_independent(self, hierarchy, directives):
        frames = [IDLE] * 3 + [T1_VISUAL] * 3 + [T2_VISUAL] * 3
        solo = [d.segment_label for d in _run(stream_new(hierarchy, directives, OnlineConfig()), frames)]
        first = stream_new(hierarchy, directives, OnlineConfig())
        second = stream_new(hierarchy, directives, OnlineConfig())
        interleaved = []
        for visual in frames:
            interleaved.append(first.step(visual, _kinematic()).segment_label)
            second.step(IDLE, _kinematic())
        assert interleaved == solo
        assert second.segment_label == "S1"

    def test_wire_payload(self, hierarchy, directives):
        session = stream_new(hierarchy, directives, OnlineConfig(hysteresis=1))
        step(session, T1_VISUAL, _kinematic())
        payload = orjson.loads(session.last_wire)
        assert payload["event"] == "T1"
        assert payload["segment"] == "S2"
        assert payload["directive"]["gripper_command"] == "close"

    def test_wrong_visual_dimension(self, hierarchy, directives):
        session = stream_new(hierarchy, directives, OnlineConfig())
        with pytest.raises(DimensionMismatch):
            session.step(np.zeros(3), _kinematic())


class TestFrames:
    def test_decision_from_record(self, hierarchy, directives):
        session = stream_new(hierarchy, directives, OnlineConfig())
        decision = decision_from_frame(session, {"t": 5, "kinematic": list(_kinematic()), "visual": [0.0, 10.0]})
        assert decision.time_index == 5
        record = decision.to_record()
        assert record["t"] == 5
        assert record["segment"] == "S1"

    def test_record_without_visual(self, hierarchy, directives):
        session = stream_new(hierarchy, directives, OnlineConfig())
        with pytest.raises(ValidationFailed):
            decision_from_frame(session, {"t": 0, "kinematic": list(_kinematic())})


class TestLatency:
    def test_no_samples(self, hierarchy, directives):
        with pytest.raises(NoSamples):
            latency_snapshot(stream_new(hierarchy, directives, OnlineConfig()))

    def test_single_step(self, hierarchy, directives):
        session = stream_new(hierarchy, directives, OnlineConfig())
        session.step(IDLE, _kinematic())
        table = latency_snapshot(session)
        for stage in (*STAGES, TOTAL):
            row = table.row(stage)
            assert row.samples == 1
            assert row.mean_ms == row.min_ms == row.p99_ms
        assert not table.feature_encode_included
        stages = sum(table.row(stage).mean_ms for stage in STAGES if stage != FEATURE_ENCODE)
        assert table.row(TOTAL).mean_ms == pytest.approx(stages)

    def test_prediction_is_fast(self, hierarchy, directives):
        session = stream_new(hierarchy, directives, OnlineConfig())
        _run(session, [IDLE, T1_VISUAL, T2_VISUAL] * 300)
        assert latency_snapshot(session).row(GMM_PREDICTION).mean_ms < 1.0

    def test_history_bounded(self, hierarchy, directives):
        session = stream_new(hierarchy, directives, OnlineConfig(latency_history=50))
        _run(session, [IDLE, T1_VISUAL, T2_VISUAL] * 40)
        assert session.steps == 120
        table = latency_snapshot(session)
        assert all(table.row(stage).samples == 50 for stage in (*STAGES, TOTAL))

    @pytest.mark.slow
    def test_latency_has_no_growth_trend(self, hierarchy, directives):
        steps = 100_000
        session = stream_new(hierarchy, directives, OnlineConfig(latency_history=steps))
        for _ in range(steps):
            session.step(IDLE, _kinematic())
        totals = np.asarray(session.latency_samples()[TOTAL])
        assert totals.size == steps
        # медианы блоков сглаживают редкие паузы планировщика
        medians = np.median(totals.reshape(20, -1), axis=1)
        fit = linregress(np.arange(medians.size), medians)
        assert abs(fit.slope) * medians.size < 0.5 * np.median(totals)
