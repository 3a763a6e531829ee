"""Ablation grid over the three mechanisms and hyperparameter sweeps."""

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from ..config import Config, ConfigError
from ..models import Mode
from .runner import run_experiment

logger = logging.getLogger(__name__)

MECHANISMS = ("use_vocabulary_update", "use_task_prompts", "use_negative_selection")
METRICS = ("transfer", "avg", "last", "forgetting")


@dataclass
class StudyRow:
    """Mean metrics of one variant over its seeds."""

    label: str
    settings: Dict[str, Any]
    seeds: List[int]
    scores: Dict[str, List[Optional[float]]] = field(default_factory=dict)

    def mean(self, metric: str) -> Optional[float]:
        values = [v for v in self.scores.get(metric, []) if v is not None]
        return float(np.mean(values)) if values else None

    def as_row(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {"variant": self.label, **self.settings}
        for metric in METRICS:
            value = self.mean(metric)
            row[metric] = "" if value is None else round(100 * value, 2)
        return row


def _run_point(
    config: Config, settings: Dict[str, Any], seed: int, output_dir: Path, mode: Mode
) -> Dict[str, Optional[float]]:
    point = config.copy()
    for key, value in settings.items():
        point.set(key, value)
    point.apply_seed(seed)
    point.set("experiment.methods", ["coleclip"])
    point.set("experiment.plots", False)
    record = run_experiment(point, output_dir)
    return dict(record.report("coleclip", mode).aggregate)


def _write_table(rows: Sequence[StudyRow], path: Path) -> Path:
    table = [row.as_row() for row in rows]
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(table[0]))
        writer.writeheader()
        writer.writerows(table)
    return path


def _write_markdown(rows: Sequence[StudyRow], path: Path, title: str) -> Path:
    table = [row.as_row() for row in rows]
    columns = list(table[0])
    lines = [f"# {title}", "", "| " + " | ".join(columns) + " |", "|---" * len(columns) + "|"]
    for row in table:
        lines.append("| " + " | ".join(str(row[c]) for c in columns) + " |")
    path.write_text("\n".join(lines) + "\n")
    return path


def run_ablation(
    config: Config,
    seeds: Sequence[int],
    output_dir: Union[str, Path],
    mode: Mode = Mode.CIL,
) -> List[StudyRow]:
    """
    Run all eight on/off combinations of the three mechanisms over ``seeds``.

    Returns:
        One row per variant with per-seed aggregate metrics

    Raises:
        ConfigError: If no seed is given
    """
    if not seeds:
        raise ConfigError("The ablation needs at least one seed")
    output_dir = Path(output_dir)
    rows = []
    for flags in itertools.product((False, True), repeat=len(MECHANISMS)):
        settings = {f"train.{name}": flag for name, flag in zip(MECHANISMS, flags)}
        tag = "+".join(
            short for short, flag in zip(("vocab", "prompt", "neg"), flags) if flag
        ) or "none"
        row = StudyRow(label=tag, settings=settings, seeds=list(seeds))
        for seed in seeds:
            logger.info(f"Ablation variant {tag}, seed {seed}")
            scores = _run_point(config, settings, seed, output_dir / tag / f"seed-{seed}", mode)
            for metric in METRICS:
                row.scores.setdefault(metric, []).append(scores[metric])
        rows.append(row)

    _write_table(rows, output_dir / "ablation.csv")
    _write_markdown(rows, output_dir / "ablation.md", f"Ablation ({Mode(mode).value}, seeds {list(seeds)})")
    logger.info(f"Ablation table written to {output_dir}")
    return rows


def run_sweep(
    config: Config,
    output_dir: Union[str, Path],
    mode: Mode = Mode.CIL,
) -> List[StudyRow]:
    """
    Grid over the lists in the ``sweep`` config section, e.g. train.alpha and train.gamma.

    Raises:
        ConfigError: If the sweep section is empty
    """
    grid = config.get_sweep_config()
    if not grid:
        raise ConfigError("The 'sweep' section lists no values to sweep")
    output_dir = Path(output_dir)
    seed = int(config.get("experiment.seed", 0))
    keys = sorted(grid)
    rows = []
    for values in itertools.product(*(grid[k] for k in keys)):
        settings = dict(zip(keys, values))
        label = ",".join(f"{k.split('.')[-1]}={v}" for k, v in settings.items())
        logger.info(f"Sweep point {label}")
        scores = _run_point(config, settings, seed, output_dir / label.replace(",", "_"), mode)
        row = StudyRow(label=label, settings=settings, seeds=[seed])
        row.scores = {metric: [scores[metric]] for metric in METRICS}
        rows.append(row)

    _write_table(rows, output_dir / "sweep.csv")
    _write_markdown(rows, output_dir / "sweep.md", f"Sweep ({Mode(mode).value}, seed {seed})")
    return rows
