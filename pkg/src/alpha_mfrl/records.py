"""CSV schemas for run artifacts and atomic read/write helpers."""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Mapping

from .nn import atomic_write_bytes

USAGE_COLUMNS = ("episode", "step", "x1", "x2", "s_cos_1", "s_cos_2", "theta",
                 "p_lf1", "p_lf2", "p_hf", "model", "aligned")
TRAINING_COLUMNS = ("episode", "model", "policy_loss", "value_loss", "entropy", "batch_size")
EVAL_COLUMNS = ("seed_index", "iteration", "x1", "x2", "q_hf")
LEDGER_COLUMNS = ("model", "count", "mean_cost_s", "total_s")
MORAN_COLUMNS = ("i_value", "p_value", "n_permutations", "n_cells_used")

_INT_FIELDS = {"episode", "step", "seed_index", "iteration", "count", "batch_size",
               "n_permutations", "n_cells_used", "aligned"}
_STR_FIELDS = {"model", "agent"}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_csv(columns: Iterable[str], rows: Iterable[Mapping]) -> bytes:
    columns = list(columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue().encode("utf-8")


def write_csv(path, columns: Iterable[str], rows: Iterable[Mapping]) -> None:
    """Write the whole table to a temp file and rename it into place."""
    atomic_write_bytes(path, format_csv(columns, rows))


def _parse(name: str, text: str):
    if text == "":
        return None
    if name in _STR_FIELDS:
        return text
    if name in _INT_FIELDS:
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def read_csv(path) -> list[dict]:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        return [{k: _parse(k, v) for k, v in row.items()} for row in csv.DictReader(fh)]
