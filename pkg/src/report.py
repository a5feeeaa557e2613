"""
Report
Run manifests and the Turn x {accuracy, distances, element-wise accuracy} tables
"""

import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
from loguru import logger

from errors import ComparisonError, EmptyInputError, SchemaError
from feedback_loop import EvalTrace, read_traces
from metrics import MetricsSummary, aggregate

TOOL_VERSION = '0.1.0'
MANIFEST_NAME = 'manifest.json'
TRACES_NAME = 'traces.jsonl'
METRICS_NAME = 'metrics.json'
TABLE_NAME = 'table.txt'

LABEL_COLUMNS = ['Prompt', 'Feedback', 'Backend', 'Turn']
VALUE_COLUMNS = ['Accuracy', 'Distance (bbox)', 'Distance (Center)', 'Character', 'Word', 'Line']


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunManifest:
    """Everything needed to re-run a command and check what it consumed"""

    command: str
    config: Dict[str, Any]
    seed: int
    dataset_checksum: Optional[str] = None
    prompt_checksums: Dict[str, Dict[str, str]] = field(default_factory=dict)
    backend: Dict[str, Any] = field(default_factory=dict)
    tool_version: str = TOOL_VERSION
    started_at: str = field(default_factory=utc_now)
    finished_at: Optional[str] = None

    def finish(self):
        self.finished_at = utc_now()

    def save(self, output_dir: Union[str, Path]) -> Path:
        path = Path(output_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write('\n')
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'RunManifest':
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return cls(**json.load(f))
        except (OSError, ValueError, TypeError) as e:
            raise SchemaError(f"Cannot read run manifest {path}: {e}")

    @property
    def system_prompt(self) -> str:
        return self.config.get('prompting', {}).get('system_prompt', '?')

    @property
    def feedback_template(self) -> str:
        return self.config.get('prompting', {}).get('feedback_template', '?')

    @property
    def max_turns(self) -> int:
        return int(self.config.get('harness', {}).get('max_turns', 2))

    @property
    def backend_label(self) -> str:
        return str(self.backend.get('model') or self.backend.get('kind') or '?')


def _percent(value: Optional[float]) -> str:
    return 'NA' if value is None else f"{value * 100:.2f}%"


def _number(value: Optional[float]) -> str:
    return 'NA' if value is None else f"{value:.2f}"


def summary_rows(summary: MetricsSummary, prompt: str, feedback: str, backend: str,
                 final_only: bool = False) -> List[Dict[str, Any]]:
    """Table rows for one run, one per turn (or only the last)"""
    turns = summary.per_turn[-1:] if final_only else summary.per_turn
    rows = []
    for turn in turns:
        rows.append({
            'Prompt': prompt,
            'Feedback': feedback,
            'Backend': backend,
            'Turn': turn.turn,
            'Accuracy': turn.accuracy,
            'Distance (bbox)': turn.dist_box,
            'Distance (Center)': turn.dist_center,
            'Character': turn.element_wise.get('character'),
            'Word': turn.element_wise.get('word'),
            'Line': turn.element_wise.get('line'),
        })
    return rows


def build_table(rows: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """Rows grouped by turn, runs kept in the order given within each turn"""
    df = pd.DataFrame(list(rows), columns=LABEL_COLUMNS + VALUE_COLUMNS)
    return df.sort_values('Turn', kind='stable').reset_index(drop=True)


def format_table(df: pd.DataFrame) -> str:
    """Fixed-width text rendering; undefined values print as NA"""
    formatters = {column: _percent for column in ('Accuracy', 'Character', 'Word', 'Line')}
    formatters.update({column: _number for column in ('Distance (bbox)', 'Distance (Center)')})
    shown = df.astype(object).where(df.notna(), None)
    return shown.to_string(index=False, formatters=formatters)


def run_table(summary: MetricsSummary, manifest: RunManifest, final_only: bool = False) -> pd.DataFrame:
    return build_table(summary_rows(summary, manifest.system_prompt, manifest.feedback_template,
                                    manifest.backend_label, final_only))


def load_run(path: Union[str, Path]) -> Tuple[RunManifest, List[EvalTrace]]:
    """
    Load a run from its directory or its traces file

    Returns:
        (manifest, traces)
    """
    path = Path(path)
    run_dir = path if path.is_dir() else path.parent
    traces_path = path if path.is_file() else run_dir / TRACES_NAME
    if not traces_path.exists():
        raise SchemaError(f"No traces found at {traces_path}")
    return RunManifest.load(run_dir), read_traces(traces_path)


def compare_runs(paths: Sequence[Union[str, Path]], final_only: bool = False) -> pd.DataFrame:
    """
    Merge several runs into one comparison table

    Args:
        paths: Run directories or traces files
        final_only: Only the final turn of each run (model comparison)

    Raises:
        EmptyInputError: no runs given
        ComparisonError: the runs were evaluated on different datasets
    """
    if not paths:
        raise EmptyInputError("No runs to report")

    runs = [load_run(path) for path in paths]
    checksums = {manifest.dataset_checksum for manifest, _ in runs}
    if len(checksums) > 1:
        raise ComparisonError(f"Runs use different datasets (checksums: {', '.join(sorted(map(str, checksums)))})")

    rows = []
    for manifest, traces in runs:
        summary = aggregate(traces, manifest.max_turns)
        rows.extend(summary_rows(summary, manifest.system_prompt, manifest.feedback_template,
                                 manifest.backend_label, final_only))
    logger.info(f"Merged {len(runs)} run(s) into {len(rows)} table rows")
    return build_table(rows)
