"""Result tables and their on-disk forms.

A finished experiment is a grid of cells keyed by (r*, estimator, SNR),
each holding the mean of its replication values.  Four files are written
per run: ``table.csv`` (one row per cell), ``table.md`` (r*-blocked grid
with one row per estimator and one column per SNR), ``raw.csv`` (every
replication value, for audit), and ``config.resolved`` (the exact
configuration, including the master seed).
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from dataclasses import dataclass, field
from typing import Optional

__all__ = ["ResultTable", "emit_outputs", "read_table_csv"]

CellKey = tuple[int, str, float]


@dataclass
class ResultTable:
    mode: str = field(compare=False)
    ranks: tuple
    estimators: tuple
    snrs: tuple
    cells: dict  # CellKey -> mean value (nan when the cell is invalid)
    counts: dict  # CellKey -> number of valid replication values
    config_hash: str
    raw: dict = field(default_factory=dict, compare=False)  # CellKey -> tuple of rep values
    failures: dict = field(default_factory=dict, compare=False)  # CellKey -> failed rep count
    metadata: dict = field(default_factory=dict, compare=False)
    config_text: str = field(default="", compare=False)

    def validate(self) -> None:
        for rank in self.ranks:
            for est in self.estimators:
                for snr in self.snrs:
                    key = (rank, est, snr)
                    if key not in self.cells:
                        raise ValueError(f"missing cell {key}")
                    value = self.cells[key]
                    if math.isnan(value):
                        continue
                    if self.mode == "inference" and not 0.0 <= value <= 1.0:
                        raise ValueError(f"rejection rate out of [0, 1] at {key}: {value}")
                    if self.mode == "estimation" and value < 0.0:
                        raise ValueError(f"negative risk at {key}: {value}")

    def value(self, rank: int, estimator: str, snr: float) -> float:
        return self.cells[(rank, estimator, snr)]


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _fmt(x: float) -> str:
    return repr(float(x))


def _table_csv_text(table: ResultTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["r_star", "estimator", "snr", "value", "reps", "config_hash"])
    for rank in table.ranks:
        for est in table.estimators:
            for snr in table.snrs:
                key = (rank, est, snr)
                writer.writerow(
                    [rank, est, _fmt(snr), _fmt(table.cells[key]),
                     table.counts[key], table.config_hash]
                )
    return buf.getvalue()


def _raw_csv_text(table: ResultTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["r_star", "estimator", "snr", "rep", "value"])
    for rank in table.ranks:
        for est in table.estimators:
            for snr in table.snrs:
                for rep, value in enumerate(table.raw.get((rank, est, snr), ())):
                    writer.writerow([rank, est, _fmt(snr), rep, _fmt(value)])
    return buf.getvalue()


def _markdown_text(table: ResultTable) -> str:
    lines = []
    header = "| r* | estimator | " + " | ".join(f"{snr:g}" for snr in table.snrs) + " |"
    rule = "|" + "---|" * (2 + len(table.snrs))
    for rank in table.ranks:
        lines.append(header)
        lines.append(rule)
        for est in table.estimators:
            vals = []
            for snr in table.snrs:
                v = table.cells[(rank, est, snr)]
                vals.append("--" if math.isnan(v) else f"{v:.2f}")
            lines.append(f"| {rank} | {est} | " + " | ".join(vals) + " |")
        lines.append("")
    return "\n".join(lines)


def emit_outputs(table: ResultTable, out_dir) -> dict:
    """Write table.csv, table.md, raw.csv, and config.resolved; returns paths."""
    table.validate()
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "table": os.path.join(out_dir, "table.csv"),
        "markdown": os.path.join(out_dir, "table.md"),
        "raw": os.path.join(out_dir, "raw.csv"),
        "config": os.path.join(out_dir, "config.resolved"),
    }
    texts = {
        "table": _table_csv_text(table),
        "markdown": _markdown_text(table),
        "raw": _raw_csv_text(table),
        "config": table.config_text,
    }
    for name, path in paths.items():
        try:
            with open(path, "w", newline="") as fh:
                fh.write(texts[name])
        except OSError as exc:
            raise OSError(f"failed writing {path}: {exc}") from exc
    return paths


def read_table_csv(path) -> ResultTable:
    """Reconstruct the summary table from table.csv."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["r_star", "estimator", "snr", "value", "reps", "config_hash"]:
        raise ValueError(f"{path} is not a tracelab table.csv")
    ranks: list[int] = []
    estimators: list[str] = []
    snrs: list[float] = []
    cells: dict = {}
    counts: dict = {}
    hash_: Optional[str] = None
    for rank_s, est, snr_s, value_s, reps_s, h in rows[1:]:
        rank, snr = int(rank_s), float(snr_s)
        if rank not in ranks:
            ranks.append(rank)
        if est not in estimators:
            estimators.append(est)
        if snr not in snrs:
            snrs.append(snr)
        cells[(rank, est, snr)] = float(value_s)
        counts[(rank, est, snr)] = int(reps_s)
        hash_ = h
    return ResultTable(
        mode="summary",
        ranks=tuple(ranks),
        estimators=tuple(estimators),
        snrs=tuple(snrs),
        cells=cells,
        counts=counts,
        config_hash=hash_ or "",
    )
