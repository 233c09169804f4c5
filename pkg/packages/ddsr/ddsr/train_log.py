"""Parquet and text serialization for training logs."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Any

import pyarrow as pa
import pyarrow.parquet as pq

from .loss import LossBreakdown
from .trainer import EpochRecord, TrainLog

TRAIN_LOG_SCHEMA = pa.schema([
    ("epoch", pa.int32()),
    ("train", pa.float64()),
    ("rec", pa.float64()),
    ("spatial", pa.float64()),
    ("low", pa.float64()),
    ("high", pa.float64()),
    ("val", pa.float64()),
    ("best", pa.bool_()),
])


def train_log_rows(log: TrainLog) -> list[dict[str, Any]]:
    return [
        {
            "epoch": record.epoch,
            "train": record.train.total,
            "rec": record.train.rec,
            "spatial": record.train.spatial,
            "low": record.train.low,
            "high": record.train.high,
            "val": record.val,
            "best": record.best,
        }
        for record in log.epochs
    ]


def write_train_log_parquet(log: TrainLog, dest: Path | io.BytesIO) -> None:
    table = pa.Table.from_pylist(train_log_rows(log), schema=TRAIN_LOG_SCHEMA)
    pq.write_table(table, dest)


def read_train_log_parquet(source: Path | io.BytesIO) -> TrainLog:
    rows = pq.read_table(source, schema=TRAIN_LOG_SCHEMA).to_pylist()
    epochs = [
        EpochRecord(
            epoch=row["epoch"],
            train=LossBreakdown(
                total=row["train"],
                rec=row["rec"],
                spatial=row["spatial"],
                low=row["low"],
                high=row["high"],
            ),
            val=row["val"],
            best=row["best"],
        )
        for row in rows
    ]
    best = [record for record in epochs if record.best]
    log = TrainLog(epochs=epochs)
    if best:
        log.best_epoch = best[-1].epoch
        log.best_val = best[-1].val
    return log


def write_train_log(log: TrainLog, out_dir: Path) -> None:
    """train_log.txt (EPOCH lines) and train_log.parquet side by side."""
    out_dir.mkdir(parents=True, exist_ok=True)
    _ = (out_dir / "train_log.txt").write_text(log.to_text())
    write_train_log_parquet(log, out_dir / "train_log.parquet")
