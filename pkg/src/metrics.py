"""
Metrics
Cumulative accuracy by turn, distance propagation and correction statistics over eval traces
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from core_model import Granularity
from errors import EmptyInputError
from feedback_loop import EvalTrace, TerminalStatus, TurnRecord


@dataclass
class TurnMetrics:
    turn: int
    accuracy: float
    dist_box: Optional[float]
    dist_center: Optional[float]
    element_wise: Dict[str, Optional[float]]
    n_distance_samples: int
    n_parse_failures: int


@dataclass
class MetricsSummary:
    max_turns: int
    per_turn: List[TurnMetrics]
    any_turn_hit_rate: float
    correction_rate: Optional[float]
    parse_failure_rate: float
    hits_by_turn: Dict[str, int]
    n_total: int
    n_scored: int
    n_hit: int
    n_never_hit: int
    n_infrastructure_failed: int
    granularity_counts: Dict[str, int] = field(default_factory=dict)

    def accuracy_at(self, turn: int) -> float:
        return self.per_turn[turn - 1].accuracy

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> 'MetricsSummary':
        values = dict(data)
        values['per_turn'] = [TurnMetrics(**turn) for turn in values['per_turn']]
        return cls(**values)


def _mean(values: List[float]) -> Optional[float]:
    return math.fsum(values) / len(values) if values else None


def _turn_at(trace: EvalTrace, turn: int) -> TurnRecord:
    # Hits stop the trace, so the last turn is the hitting one; misses carry their final turn forward
    return trace.turns[min(turn, len(trace.turns)) - 1]


def aggregate(traces: Sequence[EvalTrace], max_turns: int) -> MetricsSummary:
    """
    Aggregate traces into the metric suite

    Args:
        traces: One trace per sample, any order
        max_turns: T, the number of turns reported

    Returns:
        MetricsSummary; infrastructure failures are counted but not scored

    Raises:
        EmptyInputError: when there is nothing to score
    """
    if not traces:
        raise EmptyInputError("No traces to aggregate")

    ordered = sorted(traces, key=lambda t: t.sample_id)
    failed = [t for t in ordered if t.terminal_status is TerminalStatus.INFRASTRUCTURE_FAILED]
    scored = [t for t in ordered if t.terminal_status is not TerminalStatus.INFRASTRUCTURE_FAILED]
    if not scored:
        raise EmptyInputError(f"All {len(ordered)} traces failed on infrastructure; nothing to score")

    n = len(scored)
    by_granularity = {g.value: [t for t in scored if t.granularity is g] for g in Granularity}

    def hit_within(trace: EvalTrace, turn: int) -> bool:
        return trace.first_hit_turn is not None and trace.first_hit_turn <= turn

    per_turn = []
    for turn in range(1, max_turns + 1):
        box_values, center_values = [], []
        for trace in scored:
            if not trace.turns:
                continue
            record = _turn_at(trace, turn)
            if record.point is None:
                continue
            box_values.append(record.dist_box)
            center_values.append(record.dist_center)

        per_turn.append(TurnMetrics(
            turn=turn,
            accuracy=sum(1 for t in scored if hit_within(t, turn)) / n,
            dist_box=_mean(box_values),
            dist_center=_mean(center_values),
            element_wise={
                name: (sum(1 for t in group if hit_within(t, turn)) / len(group)) if group else None
                for name, group in by_granularity.items()
            },
            n_distance_samples=len(box_values),
            n_parse_failures=sum(1 for t in scored
                                 if len(t.turns) >= turn and t.turns[turn - 1].point is None),
        ))

    missed_first = [t for t in scored if t.first_hit_turn != 1]
    corrected = [t for t in missed_first if t.first_hit_turn is not None and t.first_hit_turn >= 2]
    all_turns = [turn for t in scored for turn in t.turns]
    hits = [t for t in scored if t.first_hit_turn is not None]

    return MetricsSummary(
        max_turns=max_turns,
        per_turn=per_turn,
        any_turn_hit_rate=per_turn[-1].accuracy,
        correction_rate=len(corrected) / len(missed_first) if missed_first else None,
        parse_failure_rate=(sum(1 for turn in all_turns if turn.point is None) / len(all_turns)) if all_turns else 0.0,
        hits_by_turn={str(turn): sum(1 for t in hits if t.first_hit_turn == turn)
                      for turn in range(1, max_turns + 1)},
        n_total=len(ordered),
        n_scored=n,
        n_hit=len(hits),
        n_never_hit=n - len(hits),
        n_infrastructure_failed=len(failed),
        granularity_counts={name: len(group) for name, group in by_granularity.items()},
    )


def write_metrics(path: Union[str, Path], summary: MetricsSummary) -> Path:
    """Metrics JSON with sorted keys so equal summaries give equal bytes"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(summary.to_dict(), f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def read_metrics(path: Union[str, Path]) -> MetricsSummary:
    with open(path, 'r', encoding='utf-8') as f:
        return MetricsSummary.from_dict(json.load(f))
