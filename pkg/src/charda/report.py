"""Plain-text and comma-separated result tables."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Sequence

from .harness import ExperimentResult

COLUMNS = ("experiment", "split", "mu", "sigma", "n_runs")


def fmt4(x: float) -> str:
    """Four decimals without the leading zero, as in ``.7608``."""
    if math.isnan(x):
        return "nan"
    s = f"{x:.4f}"
    if s.startswith("0."):
        return s[1:]
    if s.startswith("-0."):
        return "-" + s[2:]
    return s


def report_rows(results: Sequence[ExperimentResult]) -> list[tuple[str, str, str, str, str]]:
    return [
        (r.name, split, fmt4(st.mean), fmt4(st.std), str(st.n_runs))
        for r in results
        for split, st in r.statistics.items()
    ]


def render(results: Sequence[ExperimentResult], fmt: str = "text") -> str:
    rows = report_rows(results)
    if not rows:
        raise ValueError("nothing to report")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    table = [COLUMNS, *rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(COLUMNS))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in table]
    for r in results:
        for run in r.runs:
            if run.excluded:
                lines.append(f"# excluded: {r.name} seed {run.seed}: {run.excluded}")
    return "\n".join(lines) + "\n"


def emit_report(results: Sequence[ExperimentResult], path: str | Path, fmt: str = "text") -> str:
    text = render(results, fmt)
    Path(path).write_text(text, encoding="utf-8")
    return text


def parse_csv(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))
