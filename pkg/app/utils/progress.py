"""Progress reporting for long-running commands (training, weight selection)."""

import logging
from typing import Protocol

logger = logging.getLogger(__name__)


class ProgressHandle(Protocol):
    """Interface for sending progress updates."""

    def send_progress_text(self, text: str) -> None:
        """Send a text progress update."""
        ...

    def send_progress_value(self, value: float) -> None:
        """Send a progress value update (0.0 to 1.0)."""
        ...

    def send_progress(self, text: str, value: float) -> None:
        """Send both text and progress value update."""
        ...


class SubProgressHandle(ProgressHandle):
    """Progress handle that represents a sub-task of a parent task."""

    def __init__(self, parent: ProgressHandle, start: float, end: float) -> None:
        self.parent = parent
        self.start = start
        self.end = end

    def send_progress_text(self, text: str) -> None:
        self.parent.send_progress_text(text)

    def send_progress_value(self, value: float) -> None:
        self.parent.send_progress_value(self._scale_progress_value(value))

    def send_progress(self, text: str, value: float) -> None:
        self.parent.send_progress(text, self._scale_progress_value(value))

    def _scale_progress_value(self, value: float) -> float:
        return self.start + (self.end - self.start) * value


class LoggingProgressHandle(ProgressHandle):
    """Writes progress to the log, at most once per whole percent step."""

    def __init__(self, name: str, step: float = 0.01) -> None:
        self.name = name
        self.step = step
        self._last_reported = -1.0

    def send_progress_text(self, text: str) -> None:
        logger.info("%s: %s", self.name, text)

    def send_progress_value(self, value: float) -> None:
        if value >= 1.0 or value - self._last_reported >= self.step:
            self._last_reported = value
            logger.info("%s: %.0f%%", self.name, value * 100.0)

    def send_progress(self, text: str, value: float) -> None:
        self._last_reported = value
        logger.info("%s: %s (%.0f%%)", self.name, text, value * 100.0)


class NullProgressHandle(ProgressHandle):
    """Discards all progress updates."""

    def send_progress_text(self, text: str) -> None:
        pass

    def send_progress_value(self, value: float) -> None:
        pass

    def send_progress(self, text: str, value: float) -> None:
        pass
