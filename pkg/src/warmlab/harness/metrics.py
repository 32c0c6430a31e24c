from __future__ import annotations

import csv
import math
from typing import IO, Iterable, NamedTuple

__all__ = ["MetricsRow", "METRICS_HEADER", "perplexity", "MetricsWriter", "read_metrics_csv", "MetricsFormatError"]

METRICS_HEADER = ["step", "lr", "loss", "ppl", "gnorm_preclip", "gnorm_postclip", "wallclock_ms"]


class MetricsFormatError(ValueError):
    pass


class MetricsRow(NamedTuple):
    step: int
    lr: float
    loss: float
    perplexity: float
    grad_norm_preclip: float
    grad_norm_postclip: float
    wallclock_ms: int = 0

    def deterministic(self) -> tuple:
        """The row without its wallclock column."""
        return tuple(self[:-1])


def perplexity(mean_loss: float) -> float:
    if math.isnan(mean_loss):
        return math.nan
    try:
        return math.exp(mean_loss)
    except OverflowError:
        return math.inf


def _fmt(x: float) -> str:
    return f"{x:.17g}"


class MetricsWriter:
    """Append-only CSV writer that flushes after every row."""

    def __init__(self, fp: IO[str]):
        self.fp = fp
        self.writer = csv.writer(fp, lineterminator="\n")
        self.writer.writerow(METRICS_HEADER)

    def write(self, row: MetricsRow) -> None:
        self.writer.writerow(
            [row.step, _fmt(row.lr), _fmt(row.loss), _fmt(row.perplexity),
             _fmt(row.grad_norm_preclip), _fmt(row.grad_norm_postclip), row.wallclock_ms]
        )
        self.fp.flush()

    def write_all(self, rows: Iterable[MetricsRow]) -> None:
        for r in rows:
            self.write(r)


def read_metrics_csv(path) -> list[MetricsRow]:
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None:
            raise MetricsFormatError(f"{path}: empty file")
        if header != METRICS_HEADER:
            raise MetricsFormatError(f"{path}: expected header {','.join(METRICS_HEADER)}, got {','.join(header)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(METRICS_HEADER):
                raise MetricsFormatError(f"{path}:{lineno}: expected {len(METRICS_HEADER)} columns, got {len(rec)}")
            try:
                rows.append(
                    MetricsRow(int(rec[0]), float(rec[1]), float(rec[2]), float(rec[3]),
                               float(rec[4]), float(rec[5]), int(float(rec[6])))
                )
            except ValueError as exc:
                raise MetricsFormatError(f"{path}:{lineno}: {exc}") from None
    return rows
