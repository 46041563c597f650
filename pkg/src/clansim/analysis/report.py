from __future__ import annotations

import csv
from collections.abc import Iterable
from pathlib import Path

from .bounds import BoundReport

BOUND_HEADER = ["label", "term", "value"]


def bound_rows(label: str, report: BoundReport) -> list[list]:
    return [[label, name, repr(float(value))] for name, value in report.rows()]


def write_bound_csv(path, reports: Iterable[tuple[str, BoundReport]]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BOUND_HEADER)
        for label, rep in reports:
            w.writerows(bound_rows(label, rep))
    return path
