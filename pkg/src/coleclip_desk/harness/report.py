"""Report emission: CSV matrices, markdown metric tables and accuracy curves."""

import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, List, Union

from ..metrics import AccuracyMatrix

if TYPE_CHECKING:
    from .runner import RunRecord

logger = logging.getLogger(__name__)


def _summary_table(record: "RunRecord") -> str:
    lines = [
        f"# Run {record.config_hash}",
        "",
        f"Seed {record.seed}, task order {record.task_order}.",
        "",
        "| Method | Mode | Transfer | Avg | Last | Forgetting | Learnable params (last task) |",
        "|---|---|---|---|---|---|---|",
    ]
    for method, result in record.results.items():
        counts = result.parameter_counts
        params = counts[max(counts)] if counts else 0
        for mode, report in result.reports().items():
            values = [report.aggregate[k] for k in ("transfer", "avg", "last", "forgetting")]
            cells = " | ".join("-" if v is None else f"{100 * v:.2f}" for v in values)
            lines.append(f"| {method} | {mode} | {cells} | {params} |")
    return "\n".join(lines) + "\n"


def plot_matrix(matrix: AccuracyMatrix, title: str, path: Path) -> Path:
    """Line plot of A_t^i against step i, one line per dataset."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = list(range(1, matrix.total_tasks + 1))
    fig, ax = plt.subplots(figsize=(7, 4))
    for row, name in enumerate(matrix.names):
        ax.plot(steps, 100 * matrix.values[row], marker="o", label=name)
    ax.set_xlabel("Training step")
    ax.set_ylabel("Accuracy (%)")
    ax.set_xticks(steps)
    ax.set_ylim(0, 100)
    ax.set_title(title)
    ax.legend(loc="best", fontsize="small")
    fig.savefig(path, dpi=140, bbox_inches="tight")
    plt.close(fig)
    return path


def emit_report(
    record: "RunRecord", output_dir: Union[str, Path], plots: bool = False
) -> List[Path]:
    """
    Write the files describing a run.

    Matrices and reports come from the accuracies recorded in ``record``. The
    per-prediction logs under ``logs/`` are an audit trail only and are not
    read here.

    Args:
        record: Completed run
        output_dir: Destination directory
        plots: Also draw accuracy curves (needs matplotlib)

    Returns:
        Paths written
    """
    output_dir = Path(output_dir)
    matrices_dir = output_dir / "matrices"
    reports_dir = output_dir / "reports"
    matrices_dir.mkdir(parents=True, exist_ok=True)
    reports_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []

    for method, result in record.results.items():
        for mode, matrix in result.matrices.items():
            stem = f"{method}-{mode.lower()}"
            csv_path = matrices_dir / f"{stem}.csv"
            matrix.to_csv(csv_path)
            written.append(csv_path)

            report = result.reports()[mode]
            md_path = reports_dir / f"{stem}.md"
            md_path.write_text(f"## {method}\n\n" + report.to_markdown())
            json_path = reports_dir / f"{stem}.json"
            json_path.write_text(json.dumps(report.to_dict(), indent=2))
            written.extend([md_path, json_path])

            if plots:
                plots_dir = output_dir / "plots"
                plots_dir.mkdir(parents=True, exist_ok=True)
                try:
                    written.append(
                        plot_matrix(matrix, f"{method} ({mode})", plots_dir / f"{stem}.png")
                    )
                except ImportError:
                    logger.warning("matplotlib is not installed; skipping plots")
                    plots = False

    summary = output_dir / "summary.md"
    summary.write_text(_summary_table(record))
    written.append(summary)
    logger.info(f"Report written to {output_dir} ({len(written)} files)")
    return written
