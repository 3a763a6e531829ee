"""Per-iteration training log written as JSON lines."""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import IO, Any, Dict, List, Optional, Union

logger = logging.getLogger(__name__)


@dataclass
class IterationRecord:
    """One training iteration."""

    method: str
    task: int
    epoch: int
    iteration: int
    stage: int
    ce: float
    reg: float
    total: float
    negatives: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class TrainingLogWriter:
    """
    Append iteration records to a JSON-lines file.

    Usable as a context manager; records are also kept in memory when no
    path is given (tests, studies).
    """

    def __init__(self, path: Optional[Union[str, Path]] = None, method: str = "coleclip"):
        self.path = Path(path) if path is not None else None
        self.method = method
        self.records: List[IterationRecord] = []
        self._file: Optional[IO[str]] = None

    def open(self) -> "TrainingLogWriter":
        if self.path is not None and self._file is None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._file = self.path.open("a", encoding="utf-8")
            logger.debug(f"Training log: {self.path}")
        return self

    def write(self, **fields: Any) -> IterationRecord:
        record = IterationRecord(method=self.method, **fields)
        self.records.append(record)
        if self._file is not None:
            self._file.write(record.to_json() + "\n")
        return record

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    def __enter__(self) -> "TrainingLogWriter":
        return self.open()

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


def read_training_log(path: Union[str, Path]) -> List[Dict[str, Any]]:
    """Load every record of a training log."""
    with Path(path).open(encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]
