"""Tests for progress handles."""

from __future__ import annotations

import logging

from app.utils.progress import LoggingProgressHandle, SubProgressHandle


class RecordingHandle:
    def __init__(self) -> None:
        self.values: list[float] = []
        self.texts: list[str] = []

    def send_progress_text(self, text: str) -> None:
        self.texts.append(text)

    def send_progress_value(self, value: float) -> None:
        self.values.append(value)

    def send_progress(self, text: str, value: float) -> None:
        self.texts.append(text)
        self.values.append(value)


def test_sub_handle_scales_into_parent_range():
    parent = RecordingHandle()
    sub = SubProgressHandle(parent, 0.5, 0.75)

    sub.send_progress_value(0.0)
    sub.send_progress("halfway", 0.5)
    sub.send_progress_value(1.0)

    assert parent.values == [0.5, 0.625, 0.75]
    assert parent.texts == ["halfway"]


def test_nested_sub_handles_compose():
    parent = RecordingHandle()
    inner = SubProgressHandle(SubProgressHandle(parent, 0.0, 0.5), 0.5, 1.0)
    inner.send_progress_value(0.5)
    assert parent.values == [0.375]


def test_logging_handle_throttles_small_steps(caplog):
    handle = LoggingProgressHandle("train", step=0.1)
    with caplog.at_level(logging.INFO, logger="app.utils.progress"):
        for i in range(101):
            handle.send_progress_value(i / 100)

    lines = [r.getMessage() for r in caplog.records]
    assert lines[0] == "train: 0%"
    assert lines[-1] == "train: 100%"
    assert len(lines) <= 12
