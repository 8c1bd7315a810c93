"""
Merge the metrics.csv/eval.csv pairs of one or more runs into a per-epoch table, and
render it as CSV or as an SVG line chart.

Each row is one evaluation epoch e. For every run the table carries the mean of that
run's metrics rows belonging to epoch e (blank for the pre-training baseline at e = 0)
and the run's eval columns, all prefixed with the run name.
"""
import csv
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from mixbt.core.exceptions import CurveInputError
from mixbt.core.logging_config import get_logger
from mixbt.services.trainloop import EVAL_COLUMNS, METRICS_COLUMNS, format_float
from mixbt.utils.svg_chart import Panel, render_chart

logger = get_logger(__name__)

LOSS_COLUMNS = METRICS_COLUMNS[3:]  # invariance, redundancy, l_bt, l_reg, total
EVAL_VALUE_COLUMNS = EVAL_COLUMNS[1:]


@dataclass
class RunCurves:
    name: str
    loss_by_epoch: Dict[int, Dict[str, float]]
    eval_by_epoch: Dict[int, Dict[str, Optional[float]]]


@dataclass
class CurveTable:
    columns: List[str]
    rows: List[List[Optional[float]]] = field(default_factory=list)

    def column(self, name: str) -> List[Optional[float]]:
        index = self.columns.index(name)
        return [row[index] for row in self.rows]


def _read_csv(path: str, required: Sequence[str]) -> List[Dict[str, str]]:
    if not os.path.isfile(path):
        raise CurveInputError(f"Missing {os.path.basename(path)} in '{os.path.dirname(path)}'", details={"path": path})
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise CurveInputError(f"'{path}' lacks columns {missing}", details={"path": path})
        return list(reader)


def _float_or_none(text: str) -> Optional[float]:
    return float(text) if text not in ("", None) else None


def load_run(run_dir: str, name: Optional[str] = None) -> RunCurves:
    metrics = _read_csv(os.path.join(run_dir, "metrics.csv"), METRICS_COLUMNS)
    evals = _read_csv(os.path.join(run_dir, "eval.csv"), EVAL_COLUMNS)

    grouped: Dict[int, List[List[float]]] = defaultdict(list)
    for row in metrics:
        grouped[int(row["epoch"])].append([float(row[c]) for c in LOSS_COLUMNS])
    loss_by_epoch = {
        epoch: dict(zip(LOSS_COLUMNS, np.mean(np.asarray(values), axis=0).tolist()))
        for epoch, values in grouped.items()
    }
    eval_by_epoch = {int(row["epoch"]): {c: _float_or_none(row[c]) for c in EVAL_VALUE_COLUMNS} for row in evals}
    return RunCurves(name=name or os.path.basename(os.path.normpath(run_dir)),
                     loss_by_epoch=loss_by_epoch, eval_by_epoch=eval_by_epoch)


def _unique_names(run_dirs: Sequence[str]) -> List[str]:
    names, seen = [], defaultdict(int)
    for run_dir in run_dirs:
        base = os.path.basename(os.path.normpath(run_dir)) or "run"
        seen[base] += 1
        names.append(base if seen[base] == 1 else f"{base}_{seen[base]}")
    return names


def merge_runs(run_dirs: Sequence[str]) -> CurveTable:
    """One row per evaluation epoch (union over runs), one column group per run."""
    if not run_dirs:
        raise CurveInputError("export-curves needs at least one run directory")
    runs = [load_run(path, name) for path, name in zip(run_dirs, _unique_names(run_dirs))]
    columns = ["epoch"]
    for run in runs:
        columns += [f"{run.name}_{c}" for c in LOSS_COLUMNS + EVAL_VALUE_COLUMNS]
    table = CurveTable(columns=columns)
    for epoch in sorted({e for run in runs for e in run.eval_by_epoch}):
        row: List[Optional[float]] = [float(epoch)]
        for run in runs:
            losses = run.loss_by_epoch.get(epoch, {})
            evals = run.eval_by_epoch.get(epoch, {})
            row += [losses.get(c) for c in LOSS_COLUMNS] + [evals.get(c) for c in EVAL_VALUE_COLUMNS]
        table.rows.append(row)
    logger.info(f"Merged {len(runs)} run(s) into {len(table.rows)} evaluation rows")
    return table


def write_csv(table: CurveTable, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(table.columns)
        for row in table.rows:
            cells = [str(int(row[0]))] + ["" if v is None else format_float(v) for v in row[1:]]
            writer.writerow(cells)


def _series(table: CurveTable, suffix: str) -> Dict[str, tuple]:
    epochs = table.column("epoch")
    series = {}
    for name in table.columns[1:]:
        if not name.endswith(f"_{suffix}"):
            continue
        pairs = [(x, y) for x, y in zip(epochs, table.column(name)) if y is not None]
        if pairs:
            series[name] = ([p[0] for p in pairs], [p[1] for p in pairs])
    return series


def write_svg(table: CurveTable, path: str) -> None:
    """Three panels: L_BT terms, the regularizer and total, and k-NN accuracy."""
    loss_series = {**_series(table, "invariance"), **_series(table, "redundancy"), **_series(table, "l_bt")}
    reg_series = {**_series(table, "l_reg"), **_series(table, "total")}
    panels = [
        Panel(title="Barlow Twins terms", x_label="epoch", y_label="loss", series=loss_series),
        Panel(title="Regularizer and total", x_label="epoch", y_label="loss", series=reg_series),
        Panel(title="k-NN top-1", x_label="epoch", y_label="accuracy", series=_series(table, "knn_top1")),
    ]
    with open(path, "w", encoding="utf-8") as f:
        f.write(render_chart(panels))


def export_curves(run_dirs: Sequence[str], out_path: str) -> CurveTable:
    """Write the merged table to `out_path`; a `.svg` suffix selects the chart."""
    table = merge_runs(run_dirs)
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    if out_path.lower().endswith(".svg"):
        write_svg(table, out_path)
    else:
        write_csv(table, out_path)
    return table
