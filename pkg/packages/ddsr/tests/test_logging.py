from __future__ import annotations

import io
import json
from collections.abc import Iterator
from pathlib import Path

import numpy as np
import pytest
from ddsr.logging import (
    LogRecord,
    bind_log_context,
    clean_value,
    console_callback,
    get_log_context,
    log_event,
    make_component_logger,
    reset_log_callback,
    reset_log_context,
    set_log_callback,
    timed,
)


@pytest.fixture
def captured(monkeypatch: pytest.MonkeyPatch) -> Iterator[list[LogRecord]]:
    monkeypatch.delenv("DDSR_LOG_PATH", raising=False)
    monkeypatch.delenv("DDSR_LOG_LEVEL", raising=False)
    records: list[LogRecord] = []
    token = set_log_callback(records.append)
    yield records
    reset_log_callback(token)


def test_component_logger_merges_bound_context(captured: list[LogRecord]) -> None:
    emit = make_component_logger("trainer")
    token = bind_log_context(dataset="paviac", run="r1")
    try:
        emit("epoch.complete", epoch=3, train_loss=0.123456789012, skipped=None)
    finally:
        reset_log_context(token)

    [record] = captured
    assert record["component"] == "trainer"
    assert record["event"] == "epoch.complete"
    assert record["dataset"] == "paviac"
    assert record["train_loss"] == 0.12345679
    assert "skipped" not in record
    assert get_log_context() == {}


def test_binding_none_removes_context_key() -> None:
    outer = bind_log_context(epoch=1, run="r2")
    inner = bind_log_context(epoch=None)
    assert get_log_context() == {"run": "r2"}
    reset_log_context(inner)
    assert get_log_context() == {"epoch": 1, "run": "r2"}
    reset_log_context(outer)


def test_clean_value_handles_numpy_and_non_finite() -> None:
    assert clean_value(np.float32(0.5)) == 0.5
    assert clean_value(np.int64(7)) == 7
    assert clean_value(float("nan")) == "nan"
    assert clean_value(True) is True


def test_log_level_filter(monkeypatch: pytest.MonkeyPatch, captured: list[LogRecord]) -> None:
    monkeypatch.setenv("DDSR_LOG_LEVEL", "warning")
    assert log_event(event="quiet") is None
    assert log_event(event="loud", level="error") is not None
    assert [record["event"] for record in captured] == ["loud"]


def test_log_path_receives_json_lines(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    target = tmp_path / "logs" / "run.jsonl"
    monkeypatch.setenv("DDSR_LOG_PATH", str(target))
    emit = make_component_logger("data")
    emit("split.audit", train=20, val=2)
    emit("dataset.write", path="out")

    lines = [json.loads(line) for line in target.read_text().splitlines()]
    assert [line["event"] for line in lines] == ["split.audit", "dataset.write"]
    assert lines[0]["train"] == 20


def test_failing_callback_does_not_break_logging(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("DDSR_LOG_PATH", raising=False)

    def explode(record: LogRecord) -> None:
        raise RuntimeError("sink down")

    token = set_log_callback(explode)
    try:
        assert log_event(event="still.logged") is not None
    finally:
        reset_log_callback(token)


def test_timed_emits_start_and_outcome(captured: list[LogRecord]) -> None:
    emit = make_component_logger("cli")
    with timed(emit, "train", run="r3"):
        pass
    with pytest.raises(ValueError):
        with timed(emit, "eval"):
            raise ValueError("bad checkpoint")

    events = [record["event"] for record in captured]
    assert events == ["train.start", "train.complete", "eval.start", "eval.failed"]
    assert captured[1]["run"] == "r3"
    assert captured[3]["message"] == "bad checkpoint"
    assert isinstance(captured[1]["duration_ms"], int)


def test_console_callback_renders_one_line() -> None:
    stream = io.StringIO()
    render = console_callback(stream)
    render({
        "ts": "2026-01-01T12:34:56+00:00",
        "component": "trainer",
        "event": "epoch.complete",
        "level": "info",
        "message": "",
        "epoch": 2,
    })
    assert stream.getvalue() == "[12:34:56] trainer.epoch.complete epoch=2\n"
