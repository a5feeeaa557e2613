import random

import pytest

from core_model import Granularity, PixelPoint
from errors import EmptyInputError
from feedback_loop import EvalTrace, TerminalStatus, TurnRecord
from metrics import aggregate, read_metrics, write_metrics
from prompt_kit import ParseOutcome, ParseStatus

GRANULARITIES = [g.value for g in Granularity]


def turn(index, dist=None, hit=False, box=None):
    if dist is None:
        parse = ParseOutcome(ParseStatus.PARSE_FAILURE, None, None, 'no answer')
        return TurnRecord(index, 'digest', parse, None, False, None, None, 0)
    point = PixelPoint(dist, 0.0)
    parse = ParseOutcome(ParseStatus.PARSED, point, (0, 5), f"({dist},0)")
    return TurnRecord(index, 'digest', parse, point, hit, dist if box is None else box, dist, 0)


def trace(sample_id, dists, first_hit=None, granularity='character', status=None, boxes=None):
    """dists holds one center distance per turn, None for a parse failure; boxes defaults to dists"""
    boxes = boxes or [None] * len(dists)
    turns = [turn(i + 1, d, hit=(first_hit == i + 1), box=b) for i, (d, b) in enumerate(zip(dists, boxes))]
    if status is None:
        status = TerminalStatus.HIT if first_hit else TerminalStatus.EXHAUSTED
    return EvalTrace(sample_id, Granularity(granularity), turns, first_hit, status)


def random_trace(rng, sample_id, max_turns):
    if rng.random() < 0.05:
        return trace(sample_id, [], status=TerminalStatus.INFRASTRUCTURE_FAILED)
    first_hit = rng.choice([None] + list(range(1, max_turns + 1)))
    length = first_hit or max_turns
    dists = [None if rng.random() < 0.15 else round(rng.uniform(0, 80), 2) for _ in range(length)]
    if first_hit:
        dists[-1] = 0.0
    boxes = [None if d is None else round(d * rng.uniform(0.2, 1.0), 2) for d in dists]
    return trace(sample_id, dists, first_hit, rng.choice(GRANULARITIES), boxes=boxes)


def _mean(values):
    return sum(values) / len(values) if values else None


def brute_force(traces, max_turns):
    """Straightforward re-derivation used as the oracle"""
    scored = [t for t in traces if t.terminal_status is not TerminalStatus.INFRASTRUCTURE_FAILED]

    def hit_by(s, t):
        return any(record.hit for record in s.turns[:t])

    per_turn = []
    for t in range(1, max_turns + 1):
        box, center = [], []
        for s in scored:
            if not s.turns:
                continue
            record = s.turns[t - 1] if t <= len(s.turns) else s.turns[-1]
            if record.point is not None:
                box.append(record.dist_box)
                center.append(record.dist_center)
        element_wise = {}
        for name in GRANULARITIES:
            group = [s for s in scored if s.granularity.value == name]
            element_wise[name] = sum(hit_by(s, t) for s in group) / len(group) if group else None
        per_turn.append({
            'accuracy': sum(hit_by(s, t) for s in scored) / len(scored),
            'dist_box': _mean(box),
            'dist_center': _mean(center),
            'element_wise': element_wise,
        })

    missed_first = [s for s in scored if not hit_by(s, 1)]
    corrected = [s for s in missed_first if hit_by(s, max_turns)]
    return {
        'per_turn': per_turn,
        'any_turn_hit_rate': sum(hit_by(s, max_turns) for s in scored) / len(scored),
        'correction_rate': len(corrected) / len(missed_first) if missed_first else None,
    }


def assert_close(actual, expected):
    if expected is None:
        assert actual is None
    else:
        assert actual == pytest.approx(expected, abs=1e-9)


def test_cumulative_accuracy_and_correction():
    traces = [trace('a', [0.0], 1), trace('b', [30.0, 0.0], 2), trace('c', [12.0, 0.0], 2),
              trace('d', [40.0, 50.0])]
    summary = aggregate(traces, max_turns=2)
    assert summary.accuracy_at(1) == 0.25
    assert summary.accuracy_at(2) == 0.75
    assert summary.correction_rate == pytest.approx(2 / 3)
    assert summary.hits_by_turn == {'1': 1, '2': 2}
    assert summary.any_turn_hit_rate == 0.75


def test_correction_rate_undefined_when_everything_hits_first():
    summary = aggregate([trace('a', [0.0], 1), trace('b', [0.0], 1)], max_turns=2)
    assert summary.correction_rate is None
    assert summary.accuracy_at(1) == summary.accuracy_at(2) == 1.0


def test_never_hit_distance_propagates():
    summary = aggregate([trace('a', [50.0, 50.0, 50.0])], max_turns=3)
    assert [m.dist_center for m in summary.per_turn] == [50.0, 50.0, 50.0]


def test_hit_distance_carries_forward():
    summary = aggregate([trace('a', [20.0, 0.0], 2)], max_turns=3)
    assert [m.dist_center for m in summary.per_turn] == [20.0, 0.0, 0.0]


def test_parse_failures_are_excluded_from_distance():
    summary = aggregate([trace('a', [None, 10.0]), trace('b', [30.0, 30.0])], max_turns=2)
    first = summary.per_turn[0]
    assert first.dist_center == 30.0
    assert first.n_distance_samples == 1
    assert first.n_parse_failures == 1
    assert summary.per_turn[1].dist_center == 20.0
    assert summary.parse_failure_rate == 0.25


def test_all_parse_failures():
    summary = aggregate([trace('a', [None, None]), trace('b', [None, None])], max_turns=2)
    assert summary.parse_failure_rate == 1.0
    assert summary.per_turn[0].dist_center is None


def test_element_wise_accuracy():
    traces = [trace('a', [0.0], 1, 'word'), trace('b', [9.0, 9.0], None, 'word'), trace('c', [0.0], 1, 'line')]
    turn_one = aggregate(traces, max_turns=2).per_turn[0]
    assert turn_one.element_wise == {'character': None, 'word': 0.5, 'line': 1.0}


def test_infrastructure_failures_are_counted_not_scored():
    traces = [trace('a', [0.0], 1), trace('b', [], status=TerminalStatus.INFRASTRUCTURE_FAILED)]
    summary = aggregate(traces, max_turns=2)
    assert summary.accuracy_at(1) == 1.0
    assert summary.n_total == 2
    assert summary.n_scored == 1
    assert summary.n_infrastructure_failed == 1


def test_empty_input_raises():
    with pytest.raises(EmptyInputError):
        aggregate([], max_turns=2)
    with pytest.raises(EmptyInputError):
        aggregate([trace('a', [], status=TerminalStatus.INFRASTRUCTURE_FAILED)], max_turns=2)


def test_matches_brute_force_on_random_traces():
    rng = random.Random(7)
    max_turns = 4
    traces = [random_trace(rng, f"s{i:04d}", max_turns) for i in range(200)]
    summary = aggregate(traces, max_turns)
    expected = brute_force(traces, max_turns)

    assert_close(summary.any_turn_hit_rate, expected['any_turn_hit_rate'])
    assert_close(summary.correction_rate, expected['correction_rate'])
    for metrics, oracle in zip(summary.per_turn, expected['per_turn']):
        assert_close(metrics.accuracy, oracle['accuracy'])
        assert_close(metrics.dist_box, oracle['dist_box'])
        assert_close(metrics.dist_center, oracle['dist_center'])
        for name in GRANULARITIES:
            assert_close(metrics.element_wise[name], oracle['element_wise'][name])


def test_accuracy_is_monotone_and_counts_are_conserved():
    rng = random.Random(11)
    for run in range(1000):
        max_turns = rng.randint(1, 5)
        traces = [random_trace(rng, f"s{i:04d}", max_turns) for i in range(rng.randint(1, 12))]
        try:
            summary = aggregate(traces, max_turns)
        except EmptyInputError:
            continue
        accuracies = [m.accuracy for m in summary.per_turn]
        assert accuracies == sorted(accuracies), run
        assert summary.n_hit + summary.n_never_hit + summary.n_infrastructure_failed == summary.n_total
        assert sum(summary.hits_by_turn.values()) == summary.n_hit


def test_order_independence_and_stable_bytes(tmp_path):
    rng = random.Random(3)
    traces = [random_trace(rng, f"s{i:04d}", 3) for i in range(60)]
    shuffled = list(traces)
    random.Random(4).shuffle(shuffled)
    first = write_metrics(tmp_path / 'a.json', aggregate(traces, 3))
    second = write_metrics(tmp_path / 'b.json', aggregate(shuffled, 3))
    assert first.read_bytes() == second.read_bytes()
    assert read_metrics(first) == aggregate(traces, 3)
