"""
Dataset Manager
Reads and writes the JSONL files: eval datasets (one Sample per line) and
collection files (one header line followed by cursor records)
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple, Union

from loguru import logger

from core_model import CursorRecord, DatasetHeader, Sample, TruncationMarker
from errors import GroundingError, SchemaError


@dataclass
class LineError:
    """A line that could not be parsed; processing continued past it"""

    line_number: int
    message: str


@dataclass
class CollectionFile:
    header: DatasetHeader
    records: List[CursorRecord]
    errors: List[LineError] = field(default_factory=list)
    truncation: Optional[TruncationMarker] = None


@dataclass
class EvalDataset:
    samples: List[Sample]
    errors: List[LineError] = field(default_factory=list)


def _dumps(obj: Dict[str, Any]) -> str:
    return json.dumps(obj, ensure_ascii=False)


def file_checksum(path: Union[str, Path]) -> str:
    """sha256 of a file's bytes"""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(65536), b''):
            digest.update(chunk)
    return digest.hexdigest()


def _is_header(obj: Dict[str, Any]) -> bool:
    return 'file_content' in obj and 'char_count' in obj


def _is_collection_line(obj: Dict[str, Any]) -> bool:
    return 'screen_x' in obj or obj.get('truncated') is True


def _lines(path: Union[str, Path]) -> Iterator[Tuple[int, bytes]]:
    # Bytes, so one badly encoded line is reported on its own instead of aborting the read
    with open(path, 'rb') as f:
        for line_number, raw in enumerate(f, start=1):
            yield line_number, raw


def read_dataset(path: Union[str, Path]) -> Union[CollectionFile, EvalDataset]:
    """
    Read a JSONL dataset, telling collection files from eval files by their first line

    Args:
        path: JSONL file

    Returns:
        CollectionFile for collection files, EvalDataset for eval files

    Raises:
        SchemaError: when the first line is a cursor record or truncation marker, not a header
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found: {path}")

    with open(path, 'rb') as f:
        first_line = f.readline()

    try:
        first = json.loads(first_line.decode('utf-8')) if first_line.strip() else {}
    except ValueError:
        first = {}

    if isinstance(first, dict) and _is_header(first):
        return read_collection(path)
    if isinstance(first, dict) and _is_collection_line(first):
        raise SchemaError(f"{path}: collection file without a header line")
    return read_samples(path)


def read_samples(path: Union[str, Path]) -> EvalDataset:
    """Read an eval file, one Sample per line; bad lines are reported, not fatal"""
    samples: List[Sample] = []
    errors: List[LineError] = []

    for line_number, raw in _lines(path):
        if not raw.strip():
            continue
        try:
            samples.append(Sample.from_dict(json.loads(raw.decode('utf-8'))))
        except (GroundingError, ValueError) as e:
            errors.append(LineError(line_number, str(e)))

    if errors:
        logger.warning(f"{path}: {len(errors)} malformed line(s) skipped")
    return EvalDataset(samples=samples, errors=errors)


def read_collection(path: Union[str, Path]) -> CollectionFile:
    """
    Read a collection file

    Raises:
        SchemaError: when the first line is not a header
    """
    records: List[CursorRecord] = []
    errors: List[LineError] = []
    header: Optional[DatasetHeader] = None
    truncation: Optional[TruncationMarker] = None

    for line_number, raw in _lines(path):
        if line_number == 1:
            try:
                header = DatasetHeader.from_dict(json.loads(raw.decode('utf-8')))
            except (ValueError, SchemaError) as e:
                raise SchemaError(f"{path}: missing or malformed header: {e}")
            continue
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw.decode('utf-8'))
            if obj.get('truncated'):
                truncation = TruncationMarker(
                    reason=obj.get('reason', ''),
                    last_line=obj.get('last_line'),
                    last_col=obj.get('last_col'),
                )
                continue
            records.append(CursorRecord.from_dict(obj))
        except (GroundingError, ValueError, AttributeError) as e:
            errors.append(LineError(line_number, str(e)))

    if header is None:
        raise SchemaError(f"{path}: empty collection file")
    if errors:
        logger.warning(f"{path}: {len(errors)} malformed record line(s) skipped")
    return CollectionFile(header=header, records=records, errors=errors, truncation=truncation)


def write_samples(path: Union[str, Path], samples: Iterable[Sample]) -> Path:
    """Write an eval file; samples are written in the order given"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for sample in samples:
            f.write(_dumps(sample.to_dict()) + '\n')
    return path


def write_collection(path: Union[str, Path], header: DatasetHeader, records: Iterable[CursorRecord]) -> Path:
    """Write a complete collection file in one go"""
    with CollectionWriter(path, header) as writer:
        for record in records:
            writer.write_record(record)
    return Path(path)


class CollectionWriter:
    """Appends a collection file line by line so partial runs survive on disk"""

    def __init__(self, path: Union[str, Path], header: DatasetHeader):
        """
        Args:
            path: Output JSONL path (truncated if it exists)
            header: Metadata line written first
        """
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, 'w', encoding='utf-8', newline='\n')
        self._file.write(_dumps(header.to_dict()) + '\n')
        self._file.flush()
        self.records_written = 0

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    def write_record(self, record: CursorRecord):
        self._file.write(_dumps(record.to_dict()) + '\n')
        self._file.flush()
        self.records_written += 1

    def write_truncation(self, marker: TruncationMarker):
        self._file.write(_dumps(marker.to_dict()) + '\n')
        self._file.flush()

    def close(self):
        if not self._file.closed:
            self._file.close()
