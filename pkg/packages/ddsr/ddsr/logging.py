"""Structured JSON-line logging shared by the library and the CLI.

Every record is a flat dict: ts, component, event, level, message, plus the
bound context (dataset, run, epoch ...) and call-site fields. Records go to an
optional in-process callback and, when DDSR_LOG_PATH is set, to a JSON-lines
file. Numeric fields are rounded so log files diff cleanly between runs.
"""

from __future__ import annotations

import json
import math
import os
import sys
import threading
import time
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from contextvars import ContextVar, Token
from datetime import UTC, datetime
from pathlib import Path
from typing import TextIO

type LogRecord = dict[str, object]
type LogCallback = Callable[[LogRecord], object]
type ComponentLogger = Callable[..., None]

LEVELS = {"debug": 10, "info": 20, "warning": 30, "error": 40}
FLOAT_DIGITS = 8
DEFAULT_COMPONENT = "ddsr"

_LOG_CONTEXT: ContextVar[LogRecord | None] = ContextVar(
    "ddsr_log_context",
    default=None,
)
_LOG_CALLBACK: ContextVar[LogCallback | None] = ContextVar(
    "ddsr_log_callback",
    default=None,
)
_FILE_LOCK = threading.Lock()


def iso_now() -> str:
    return datetime.now(UTC).isoformat()


def json_default(value: object) -> str:
    return str(value)


def min_level() -> int:
    raw = (os.environ.get("DDSR_LOG_LEVEL") or "").strip().lower()
    return LEVELS.get(raw, LEVELS["debug"])


def clean_value(value: object) -> object:
    """Round floats and map non-finite values to strings for JSON output."""
    if isinstance(value, bool):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            return str(value)
        return round(value, FLOAT_DIGITS)
    if hasattr(value, "item") and callable(getattr(value, "item")):
        try:
            return clean_value(getattr(value, "item")())
        except (TypeError, ValueError):
            return str(value)
    return value


def set_log_callback(callback: LogCallback | None) -> Token[LogCallback | None]:
    return _LOG_CALLBACK.set(callback)


def reset_log_callback(token: Token[LogCallback | None]) -> None:
    _LOG_CALLBACK.reset(token)


def bind_log_context(**fields: object) -> Token[LogRecord | None]:
    current = dict(_LOG_CONTEXT.get() or {})
    for key, value in fields.items():
        if value is None:
            _ = current.pop(key, None)
        else:
            current[key] = clean_value(value)
    return _LOG_CONTEXT.set(current)


def reset_log_context(token: Token[LogRecord | None]) -> None:
    _LOG_CONTEXT.reset(token)


def get_log_context() -> LogRecord:
    return dict(_LOG_CONTEXT.get() or {})


def write_log_file(record: LogRecord) -> None:
    log_path = (os.environ.get("DDSR_LOG_PATH") or "").strip()
    if not log_path:
        return
    target = Path(log_path)
    target.parent.mkdir(parents=True, exist_ok=True)
    line = json.dumps(record, ensure_ascii=False, default=json_default)
    with _FILE_LOCK:
        with target.open("a", encoding="utf-8") as handle:
            _ = handle.write(line + "\n")


def log_event(
    *,
    component: str | None = None,
    event: str = "log",
    message: str = "",
    level: str = "info",
    **fields: object,
) -> LogRecord | None:
    if LEVELS.get(level, LEVELS["info"]) < min_level():
        return None
    resolved_component = (
        component.strip()
        if isinstance(component, str) and component.strip()
        else DEFAULT_COMPONENT
    )
    record: LogRecord = {
        "ts": iso_now(),
        "component": resolved_component,
        "event": event,
        "level": level,
        "message": message,
    }
    record.update(get_log_context())
    for key, value in fields.items():
        if value is None:
            continue
        record[key] = clean_value(value)

    callback = _LOG_CALLBACK.get()
    if callback is not None:
        try:
            _ = callback(record)
        except Exception:
            pass

    write_log_file(record)
    return record


def make_component_logger(component: str) -> ComponentLogger:
    def emit(
        event: str,
        *,
        message: str = "",
        level: str = "info",
        **fields: object,
    ) -> None:
        _ = log_event(
            component=component,
            event=event,
            message=message,
            level=level,
            **fields,
        )

    return emit


def console_callback(stream: TextIO | None = None) -> LogCallback:
    """Render records as one short line each, for `ddsr --verbose`."""

    def render(record: LogRecord) -> None:
        target = stream if stream is not None else sys.stderr
        skip = {"ts", "component", "event", "level", "message"}
        extras = " ".join(
            f"{key}={value}" for key, value in record.items() if key not in skip
        )
        stamp = str(record.get("ts", ""))[11:19]
        head = f"[{stamp}] {record.get('component')}.{record.get('event')}"
        message = record.get("message") or ""
        parts = [head, str(message), extras]
        print(" ".join(part for part in parts if part), file=target, flush=True)

    return render


@contextmanager
def timed(emit: ComponentLogger, event: str, **fields: object) -> Iterator[None]:
    started = time.monotonic()
    emit(f"{event}.start", **fields)
    try:
        yield
    except Exception as error:
        emit(
            f"{event}.failed",
            level="error",
            message=str(error),
            duration_ms=int((time.monotonic() - started) * 1000),
            **fields,
        )
        raise
    emit(
        f"{event}.complete",
        duration_ms=int((time.monotonic() - started) * 1000),
        **fields,
    )
