from __future__ import annotations

import io
from pathlib import Path

from ddsr.loss import LossBreakdown
from ddsr.train_log import read_train_log_parquet, write_train_log, write_train_log_parquet
from ddsr.trainer import EpochRecord, TrainLog


def make_log() -> TrainLog:
    epochs = [
        EpochRecord(
            epoch=epoch,
            train=LossBreakdown(total=1.0 / epoch, rec=0.5, spatial=0.25, low=0.125, high=0.0),
            val=val,
            best=best,
        )
        for epoch, val, best in [(1, 0.9, True), (2, 0.7, True), (3, 0.8, False)]
    ]
    return TrainLog(epochs=epochs, best_epoch=2, best_val=0.7, wall_seconds=12.5)


def test_train_log_parquet_roundtrip() -> None:
    log = make_log()
    buf = io.BytesIO()
    write_train_log_parquet(log, buf)
    buf.seek(0)
    parsed = read_train_log_parquet(buf)

    assert parsed.epochs == log.epochs
    assert parsed.best_epoch == 2
    assert parsed.best_val == 0.7


def test_write_train_log_leaves_out_wall_time(tmp_path: Path) -> None:
    log = make_log()
    write_train_log(log, tmp_path / "run")
    text = (tmp_path / "run" / "train_log.txt").read_text()
    assert text.splitlines()[1] == (
        "EPOCH 2 train=0.5 rec=0.5 spatial=0.25 low=0.125 high=0 val=0.7 best=true"
    )
    assert "12.5" not in text

    faster = log.model_copy(update={"wall_seconds": 1.0})
    write_train_log(faster, tmp_path / "again")
    for name in ("train_log.txt", "train_log.parquet"):
        first = (tmp_path / "run" / name).read_bytes()
        assert first == (tmp_path / "again" / name).read_bytes()
