"""Accuracy matrix bookkeeping and the Avg / Last / Transfer / Forgetting metrics."""

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .models import Mode

logger = logging.getLogger(__name__)


class MetricsError(Exception):
    """Base exception for metric errors."""

    pass


class IncompleteMatrixError(MetricsError):
    """Raised when metrics are requested from a matrix with empty cells."""

    def __init__(self, missing: List[tuple]):
        cells = ", ".join(f"(t={t}, i={i})" for t, i in missing[:5])
        more = f" and {len(missing) - 5} more" if len(missing) > 5 else ""
        super().__init__(f"Accuracy matrix has {len(missing)} empty cells: {cells}{more}")
        self.missing = missing


class AccuracyMatrix:
    """
    T x T accuracies: entry (t, i) is the accuracy on dataset t after training step i.

    Indices are 1-based; empty cells are NaN.
    """

    def __init__(self, total_tasks: int, mode: Mode, names: Optional[Sequence[str]] = None):
        if total_tasks < 1:
            raise ValueError(f"total_tasks must be >= 1, got {total_tasks}")
        self.total_tasks = total_tasks
        self.mode = Mode(mode)
        self.names = list(names) if names else [f"dataset-{t}" for t in range(1, total_tasks + 1)]
        if len(self.names) != total_tasks:
            raise ValueError(f"Expected {total_tasks} dataset names, got {len(self.names)}")
        self.values = np.full((total_tasks, total_tasks), np.nan, dtype=np.float64)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]], mode: Mode = Mode.CIL) -> "AccuracyMatrix":
        rows = np.asarray(rows, dtype=np.float64)
        matrix = cls(rows.shape[0], mode)
        for t in range(1, matrix.total_tasks + 1):
            for i in range(1, matrix.total_tasks + 1):
                matrix.record(t, i, float(rows[t - 1, i - 1]))
        return matrix

    def record(self, task: int, step: int, accuracy: float) -> None:
        """
        Set A_t^i, overwriting any earlier value.

        Raises:
            MetricsError: If indices are out of range or accuracy is outside [0, 1]
        """
        if not (1 <= task <= self.total_tasks and 1 <= step <= self.total_tasks):
            raise MetricsError(
                f"Cell (t={task}, i={step}) is outside a {self.total_tasks}x{self.total_tasks} matrix"
            )
        if not 0.0 <= accuracy <= 1.0:
            raise MetricsError(f"Accuracy {accuracy} is outside [0, 1]")
        self.values[task - 1, step - 1] = accuracy

    def get(self, task: int, step: int) -> float:
        return float(self.values[task - 1, step - 1])

    def missing(self) -> List[tuple]:
        return [(int(t) + 1, int(i) + 1) for t, i in zip(*np.nonzero(np.isnan(self.values)))]

    def is_complete(self) -> bool:
        return not np.isnan(self.values).any()

    def to_csv(self, path: Optional[Union[str, Path]] = None) -> str:
        """CSV with a header row of step indices and a leading column of dataset names."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["dataset"] + [f"step_{i}" for i in range(1, self.total_tasks + 1)])
        for name, row in zip(self.names, self.values):
            writer.writerow([name] + ["" if np.isnan(v) else repr(float(v)) for v in row])
        text = buffer.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: Union[str, Path], mode: Mode = Mode.CIL) -> "AccuracyMatrix":
        """Read a matrix file written by ``to_csv``."""
        return cls.parse_csv(Path(path).read_text(), mode)

    @classmethod
    def parse_csv(cls, text: str, mode: Mode = Mode.CIL) -> "AccuracyMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][0] != "dataset":
            raise MetricsError("Accuracy CSV must start with a 'dataset' header")
        body = rows[1:]
        matrix = cls(len(body), mode, [row[0] for row in body])
        for t, row in enumerate(body, start=1):
            if len(row) != matrix.total_tasks + 1:
                raise MetricsError(f"Row {t} has {len(row) - 1} values, expected {matrix.total_tasks}")
            for i, cell in enumerate(row[1:], start=1):
                if cell:
                    matrix.record(t, i, float(cell))
        return matrix

    def __repr__(self) -> str:
        filled = self.values.size - len(self.missing())
        return f"AccuracyMatrix(T={self.total_tasks}, mode={self.mode.value}, filled={filled})"


@dataclass
class MetricReport:
    """Per-dataset and aggregate continual-learning metrics."""

    mode: Mode
    names: List[str]
    avg: List[float]
    last: List[float]
    transfer: List[Optional[float]]
    forgetting: List[float]
    aggregate: Dict[str, Optional[float]] = field(default_factory=dict)

    @property
    def avg_score(self) -> float:
        return self.aggregate["avg"]

    @property
    def last_score(self) -> float:
        return self.aggregate["last"]

    @property
    def transfer_score(self) -> Optional[float]:
        return self.aggregate["transfer"]

    @property
    def forgetting_score(self) -> float:
        return self.aggregate["forgetting"]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode.value,
            "datasets": self.names,
            "per_dataset": {
                "avg": self.avg,
                "last": self.last,
                "transfer": self.transfer,
                "forgetting": self.forgetting,
            },
            "aggregate": dict(self.aggregate),
        }

    def to_markdown(self) -> str:
        """Percentages with two decimals; one row per metric, one column per dataset."""

        def cell(value: Optional[float]) -> str:
            return "-" if value is None else f"{100 * value:.2f}"

        header = "| Metric | " + " | ".join(self.names) + " | Average |"
        rule = "|---" * (len(self.names) + 2) + "|"
        lines = [f"**{self.mode.value}**", "", header, rule]
        for label, key, values in (
            ("Transfer", "transfer", self.transfer),
            ("Avg", "avg", self.avg),
            ("Last", "last", self.last),
            ("Forgetting", "forgetting", self.forgetting),
        ):
            row = " | ".join(cell(v) for v in values)
            lines.append(f"| {label} | {row} | {cell(self.aggregate[key])} |")
        return "\n".join(lines) + "\n"


def compute_report(matrix: AccuracyMatrix) -> MetricReport:
    """
    Metrics of a fully populated matrix.

    Per dataset t: A_t is the mean of row t, Last_t the last column, T_t the
    mean of row t before column t (t >= 2 only), F_t the mean of row t from
    column t on. Aggregates are the means of the per-dataset values.

    Raises:
        IncompleteMatrixError: If any cell is empty
    """
    if not matrix.is_complete():
        raise IncompleteMatrixError(matrix.missing())
    values = matrix.values
    size = matrix.total_tasks

    avg = values.mean(axis=1)
    last = values[:, -1]
    transfer: List[Optional[float]] = [None] + [float(values[t, :t].mean()) for t in range(1, size)]
    forgetting = np.array([values[t, t:].mean() for t in range(size)])

    transfer_values = [v for v in transfer if v is not None]
    aggregate = {
        "avg": float(avg.mean()),
        "last": float(last.mean()),
        "transfer": float(np.mean(transfer_values)) if transfer_values else None,
        "forgetting": float(forgetting.mean()),
    }
    return MetricReport(
        mode=matrix.mode,
        names=list(matrix.names),
        avg=[float(v) for v in avg],
        last=[float(v) for v in last],
        transfer=transfer,
        forgetting=[float(v) for v in forgetting],
        aggregate=aggregate,
    )
