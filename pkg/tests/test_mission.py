"""
Tests for planning, the event state machine, reliability and scenario runs
"""

import heapq
import json
import math

import numpy as np
import pytest

from fallchain.config import RunConfig
from fallchain.fingerprint import FREE, OCCUPIED, OccupancyRaster
from fallchain.mission import (
    Abort,
    Anchor,
    EventState,
    FallVerdict,
    InspectionVerdict,
    LocalizationFix,
    NavResult,
    PipelineEvent,
    RadioModel,
    ReliabilityModel,
    RssiReport,
    ScenarioArtifacts,
    SimScenario,
    combined_reliability,
    default_anchors,
    is_legal,
    load_scenario,
    plan_path,
    run_batch,
    run_scenario,
    save_scenario,
    simulate_navigation,
    step_event,
    synth_rssi,
    synth_room,
    validate_log,
)
from fallchain.utils.exceptions import (
    BlockedEndpoint,
    IllegalTransition,
    MalformedRow,
    MissingArtifact,
    NoPath,
    OutOfBounds,
    ParameterValidationError,
)


def uniform_cost(raster, start, goal):
    """Plain Dijkstra over the same 8-connected move set."""
    dist = {start: 0.0}
    heap = [(0.0, start)]
    while heap:
        d, cell = heapq.heappop(heap)
        if cell == goal:
            return d
        if d > dist[cell]:
            continue
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if not dr and not dc:
                    continue
                nxt = (cell[0] + dr, cell[1] + dc)
                if not raster.is_free(*nxt):
                    continue
                nd = d + (math.sqrt(2.0) if dr and dc else 1.0)
                if nd < dist.get(nxt, math.inf):
                    dist[nxt] = nd
                    heapq.heappush(heap, (nd, nxt))
    return None


def walk_to_goal():
    """Pipeline event driven to Inspecting."""
    event = step_event(PipelineEvent(0), FallVerdict(True, np.ones((2, 3))), 0.0)
    event = step_event(event, RssiReport({"AA:BB:CC:00:00:01": -50.0}), 0.5)
    event = step_event(event, LocalizationFix(2.0, 3.0), 1.0)
    return step_event(event, NavResult(True, None, ((0, 0), (0, 1)), 1), 2.0)


class TestPlanPath:
    """A* planning on occupancy rasters"""

    def test_straight_and_diagonal_costs(self, empty_grid):
        """Unit moves along an axis, sqrt(2) on the diagonal"""
        assert plan_path(empty_grid, (0, 0), (0, 4)).cost == pytest.approx(4.0)
        diagonal = plan_path(empty_grid, (0, 0), (4, 4))
        assert diagonal.cost == pytest.approx(4 * math.sqrt(2.0))
        assert diagonal.moves == 4

    def test_start_equals_goal(self, empty_grid):
        plan = plan_path(empty_grid, (2, 2), (2, 2))
        assert plan.cells == ((2, 2),)
        assert plan.cost == 0.0
        assert plan.moves == 0

    def test_endpoint_errors(self, empty_grid):
        """Out-of-range and blocked endpoints are rejected"""
        with pytest.raises(OutOfBounds):
            plan_path(empty_grid, (0, 0), (5, 5))
        empty_grid.cells[4, 4] = OCCUPIED
        with pytest.raises(BlockedEndpoint):
            plan_path(empty_grid, (0, 0), (4, 4))

    def test_walled_off_goal_has_no_path(self, empty_grid):
        empty_grid.cells[:, 2] = OCCUPIED
        with pytest.raises(NoPath):
            plan_path(empty_grid, (0, 0), (0, 4))

    def test_matches_uniform_cost_search(self):
        """Same optimal cost as Dijkstra on 200 random grids"""
        rng = np.random.default_rng(7)
        for _ in range(200):
            cells = np.where(rng.random((12, 12)) < 0.25, OCCUPIED, FREE).astype(np.int8)
            raster = OccupancyRaster(cells, 1.0, (0.0, 0.0))
            free = np.argwhere(cells == FREE)
            start, goal = (tuple(int(v) for v in free[k]) for k in rng.choice(len(free), 2, replace=False))
            reference = uniform_cost(raster, start, goal)
            if reference is None:
                with pytest.raises(NoPath):
                    plan_path(raster, start, goal)
                continue
            plan = plan_path(raster, start, goal)
            assert plan.cost == pytest.approx(reference, abs=1e-9)
            assert plan.cells[0] == start and plan.cells[-1] == goal
            steps = 0.0
            for a, b in zip(plan.cells, plan.cells[1:]):
                assert max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1
                assert raster.is_free(*b)
                steps += math.hypot(a[0] - b[0], a[1] - b[1])
            assert steps == pytest.approx(plan.cost)


class TestNavigation:
    """Per-attempt navigation success model"""

    def test_success_rate_matches_probability(self, room):
        plan = plan_path(room, (2, 2), (30, 30))
        rng = np.random.default_rng(3)
        reached = [simulate_navigation(plan, 0.95, rng=rng).reached for _ in range(10000)]
        assert 0.93 <= np.mean(reached) <= 0.97

    def test_failures_carry_a_reason(self, empty_grid):
        plan = plan_path(empty_grid, (0, 0), (0, 3))
        result = simulate_navigation(plan, 0.0, seed=4)
        assert not result.reached
        assert result.reason in ("localization_drift", "obstacle")
        assert result.ticks == 3

    def test_same_seed_same_outcome(self, empty_grid):
        plan = plan_path(empty_grid, (0, 0), (4, 0))
        assert simulate_navigation(plan, 0.5, seed=9) == simulate_navigation(plan, 0.5, seed=9)

    def test_bad_probability(self, empty_grid):
        plan = plan_path(empty_grid, (0, 0), (0, 1))
        with pytest.raises(ParameterValidationError):
            simulate_navigation(plan, 1.5)


class TestRadio:
    """Log-distance RSSI synthesis and rooms"""

    def test_reference_distance(self):
        anchors = [Anchor("aa-bb-cc-00-00-01", 0.0, 0.0)]
        model = RadioModel(sigma=0.0)
        assert synth_rssi(anchors, (1.0, 0.0), model)[0] == pytest.approx(-40.0)
        assert synth_rssi(anchors, (10.0, 0.0), model)[0] == pytest.approx(-60.0)
        assert anchors[0].mac == "AA:BB:CC:00:00:01"

    def test_clamped_to_floor(self):
        anchors = [Anchor("AA:BB:CC:00:00:01", 0.0, 0.0)]
        assert synth_rssi(anchors, (10000.0, 0.0), RadioModel(sigma=0.0))[0] == -100.0

    def test_bad_radio_model(self):
        with pytest.raises(ParameterValidationError):
            RadioModel(rssi0=5.0)

    def test_room_border_and_walls(self):
        raster = synth_room(6.0, 6.0, 1.0, walls=[(1.0, 1.0, 3.0, 3.0)])
        assert raster.cells.shape == (6, 6)
        assert (raster.cells[0] == OCCUPIED).all() and (raster.cells[:, -1] == OCCUPIED).all()
        assert (raster.cells[3:5, 1:3] == OCCUPIED).all()
        assert raster.cells[1, 3] == FREE and raster.cells[2, 2] == FREE

    def test_default_anchors(self):
        anchors = default_anchors()
        assert [a.mac for a in anchors][-1] == "AA:BB:CC:00:00:05"
        assert (anchors[-1].x, anchors[-1].y) == (5.0, 5.0)


class TestEventStateMachine:
    """Legal transitions, alerts and feedback"""

    def test_confirmed_path_emits_alert(self):
        event = step_event(walk_to_goal(), InspectionVerdict(True, 0.9), 3.0)
        assert event.state == EventState.CONFIRMED
        assert [s.dst for s in event.transitions] == [
            EventState.FALL_SUSPECTED, EventState.LOCALIZING, EventState.NAVIGATING,
            EventState.INSPECTING, EventState.CONFIRMED,
        ]
        assert [s.seq for s in event.transitions] == [0, 1, 2, 3, 4]
        assert (event.alert.x, event.alert.y, event.alert.score) == (2.0, 3.0, 0.9)
        assert event.feedback is None

    def test_false_alarm_keeps_window_as_negative(self):
        event = step_event(walk_to_goal(), InspectionVerdict(False), 3.0)
        assert event.state == EventState.FALSE_ALARM
        assert event.alert is None
        assert event.feedback.label == 0
        assert event.feedback.window == ((1.0, 1.0, 1.0), (1.0, 1.0, 1.0))

    def test_single_navigation_retry(self):
        event = step_event(PipelineEvent(1), FallVerdict(), 0.0)
        event = step_event(event, RssiReport({}), 0.5)
        event = step_event(event, LocalizationFix(0.0, 0.0), 1.0)
        failed = NavResult(False, "obstacle", ((0, 0),), 0)
        event = step_event(event, failed, 2.0, max_retries=1)
        assert event.state == EventState.NAVIGATING
        event = step_event(event, failed, 3.0, max_retries=1)
        assert event.state == EventState.ABORTED
        assert event.nav_attempts == 2
        assert event.reason == "obstacle"

    def test_unexpected_stimulus_raises(self):
        with pytest.raises(IllegalTransition):
            step_event(PipelineEvent(0), RssiReport({}), 0.0)
        with pytest.raises(IllegalTransition):
            step_event(PipelineEvent(0), FallVerdict(False), 0.0)

    def test_abort_only_from_live_states(self):
        aborted = step_event(walk_to_goal(), Abort("operator"), 3.0)
        assert aborted.state == EventState.ABORTED
        with pytest.raises(IllegalTransition):
            step_event(aborted, Abort("again"), 4.0)

    def test_legal_table(self):
        assert is_legal(EventState.IDLE, EventState.FALL_SUSPECTED)
        assert is_legal(EventState.LOCALIZING, EventState.ABORTED)
        assert not is_legal(EventState.IDLE, EventState.CONFIRMED)
        assert not is_legal(EventState.CONFIRMED, EventState.IDLE)


class TestValidateLog:
    """Replaying transition logs"""

    def test_replays_a_full_event(self):
        event = step_event(walk_to_goal(), InspectionVerdict(True), 3.0)
        lines = [json.dumps(s.to_dict()) for s in event.transitions]
        assert validate_log(lines) == 1

    def test_rejects_skipped_state(self):
        line = json.dumps({"event_id": 0, "seq": 0, "t": 0.0, "from": "Idle", "to": "Navigating"})
        with pytest.raises(IllegalTransition):
            validate_log([line])

    def test_rejects_out_of_order_seq(self):
        lines = [
            json.dumps({"event_id": 0, "seq": 0, "t": 0.0, "from": "Idle", "to": "FallSuspected"}),
            json.dumps({"event_id": 0, "seq": 2, "t": 1.0, "from": "FallSuspected", "to": "Localizing"}),
        ]
        with pytest.raises(IllegalTransition):
            validate_log(lines)

    def test_unreadable_line(self):
        with pytest.raises(MalformedRow) as info:
            validate_log(["", "{not json"])
        assert info.value.line == 2


class TestReliability:
    """Combined end-to-end reliability"""

    def test_default_rates(self):
        result = combined_reliability()
        assert result.failure == pytest.approx(1.48635e-5, rel=1e-9)
        assert result.accuracy_text == "99.99851"
        assert result.serial_failure == pytest.approx(1 - 0.9919 * 0.95 * 0.9633)

    def test_plain_sequence(self):
        assert combined_reliability([0.5, 0.5]).accuracy_percent == pytest.approx(75.0)

    def test_out_of_range_rates(self):
        with pytest.raises(ParameterValidationError):
            combined_reliability([0.5, 1.5])
        with pytest.raises(ParameterValidationError):
            ReliabilityModel(nav_fail=-0.1)
        with pytest.raises(ParameterValidationError):
            combined_reliability([])


class TestScenarios:
    """Seeded truth-sourced scenario runs"""

    def test_fall_is_confirmed_once(self):
        result = run_scenario(SimScenario(fall_at=10.0))
        assert [e.state for e in result.events] == [EventState.CONFIRMED]
        assert len(result.alerts) == 1
        assert not result.missed
        assert result.counts["detect"]["tp"] == 1

    def test_false_trigger_gives_feedback(self):
        config = RunConfig()
        result = run_scenario(SimScenario(fall_at=None, false_trigger_at=5.0), config=config)
        assert [e.state for e in result.events] == [EventState.FALSE_ALARM]
        assert len(result.feedback) == 1
        assert len(result.feedback[0].window) == config.preproc.window_len
        assert result.alerts == []
        assert not result.real_fall

    def test_runs_are_reproducible(self):
        scenario = SimScenario(fall_at=None, false_trigger_at=5.0, seed=3)
        first, second = run_scenario(scenario, index=2), run_scenario(scenario, index=2)
        assert first.log_lines() == second.log_lines()
        assert first.record_lines() == second.record_lines()
        assert validate_log(first.log_lines()) == 1

    def test_every_stage_failing_misses_the_fall(self):
        rates = {"detect_fail": 1.0, "nav_fail": 1.0, "vision_fail": 1.0}
        result = run_scenario(SimScenario(inject_failures=True, rates=rates))
        assert result.events == []
        assert result.missed
        assert result.counts["detect"]["fn"] == 1

    def test_nav_failure_aborts_then_recovers(self):
        rates = {"detect_fail": 0.0, "nav_fail": 1.0, "vision_fail": 0.0}
        result = run_scenario(SimScenario(inject_failures=True, rates=rates))
        assert [e.state for e in result.events] == [EventState.ABORTED, EventState.CONFIRMED]
        assert result.events[0].nav_attempts == 2
        assert result.counts["nav"] == {"reached": 1, "failed": 2}
        assert not result.missed
        assert validate_log(result.log_lines()) == 2

    def test_vision_failure_flips_the_verdict(self):
        rates = {"detect_fail": 0.0, "nav_fail": 0.0, "vision_fail": 1.0}
        result = run_scenario(SimScenario(inject_failures=True, rates=rates))
        assert [e.state for e in result.events] == [EventState.FALSE_ALARM, EventState.CONFIRMED]
        assert result.counts["vision"]["fn"] == 1
        assert result.counts["vision"]["tp"] == 1
        assert len(result.feedback) == 1 and result.feedback[0].window
        assert not result.missed

    def test_detect_failure_is_picked_up_later(self):
        config = RunConfig()
        rates = {"detect_fail": 1.0, "nav_fail": 0.0, "vision_fail": 0.0}
        result = run_scenario(SimScenario(fall_at=10.0, inject_failures=True, rates=rates), config=config)
        assert [e.state for e in result.events] == [EventState.CONFIRMED]
        assert result.counts["detect"] == {"tp": 0, "fp": 0, "fn": 1}
        assert result.alerts[0].t >= 10.0 + config.mission.cooldown_s
        assert not result.missed

    def test_two_failed_stages_still_recover(self):
        rates = {"detect_fail": 0.0, "nav_fail": 1.0, "vision_fail": 1.0}
        result = run_scenario(SimScenario(inject_failures=True, rates=rates))
        assert [e.state for e in result.events] == [EventState.ABORTED, EventState.CONFIRMED]
        assert result.counts["vision"]["fn"] == 0

    @pytest.mark.slow
    def test_injected_miss_rate_matches_reliability(self):
        """Default stage rates give an expected 0.015 misses per 1000 runs"""
        batch, _ = run_batch(SimScenario(inject_failures=True), 1000, jobs=4)
        assert batch.real_falls == 1000
        assert batch.missed <= 2
        assert batch.confirmed == 1000 - batch.missed

    def test_model_source_needs_artifacts(self):
        with pytest.raises(MissingArtifact):
            run_scenario(SimScenario(stage_source="model"), ScenarioArtifacts())

    def test_world_check(self):
        with pytest.raises(ParameterValidationError):
            run_scenario(SimScenario(robot_start=(0.1, 0.1)))

    def test_validation(self):
        with pytest.raises(ParameterValidationError):
            SimScenario(fall_at=30.0)
        with pytest.raises(ParameterValidationError):
            SimScenario(stage_source="oracle")
        with pytest.raises(ParameterValidationError):
            SimScenario.from_dict({"name": "x", "speed": 1.0})

    def test_user_stops_at_fall(self):
        scenario = SimScenario(waypoints=[(2.0, 2.0), (8.0, 2.0)], walk_speed=1.0, fall_at=3.0)
        assert scenario.user_position(0.0) == (2.0, 2.0)
        assert scenario.user_position(3.0) == pytest.approx((5.0, 2.0))
        assert scenario.user_position(15.0) == pytest.approx((5.0, 2.0))

    def test_scenario_file_round_trip(self, tmp_path):
        scenario = SimScenario(name="hall", fall_at=4.0, radio={"sigma": 0.5}, seed=5)
        path = save_scenario(scenario, tmp_path / "hall.yaml")
        assert load_scenario(path) == scenario

    def test_missing_scenario_file(self, tmp_path):
        with pytest.raises(MissingArtifact):
            load_scenario(tmp_path / "none.yaml")

    def test_batch_is_independent_of_jobs(self):
        scenario = SimScenario(fall_at=10.0)
        batch1, results1 = run_batch(scenario, 3, jobs=1)
        batch2, results2 = run_batch(scenario, 3, jobs=3)
        assert batch1 == batch2
        assert batch1.confirmed == 3 and batch1.missed == 0
        assert [r.log_lines() for r in results1] == [r.log_lines() for r in results2]

    def test_batch_size_must_be_positive(self):
        with pytest.raises(ParameterValidationError):
            run_batch(SimScenario(), 0)
