"""
Progress tracking utilities for training and experiment pipelines.

This module provides the pipeline phases and a Rich-based progress manager
used for epochs, dataset generation chunks and ablation rounds.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

from rich.console import Console
from rich.progress import Progress, TaskID


class ProgressPhase(Enum):
    """Phase of an experiment pipeline."""

    def __str__(self) -> str:
        return self.value.replace("_", " ")

    INITIALIZING = "initializing"
    GENERATING_DATA = "generating_data"
    TRAINING = "training"
    CALIBRATING = "calibrating"
    EVALUATING = "evaluating"
    ABLATING = "ablating"
    COMPLETED = "completed"


@dataclass
class ProgressInfo:
    """Progress information for the current pipeline phase."""

    current_phase: ProgressPhase
    total_items: int = 0
    processed_items: int = 0
    phase_description: str = ""
    elapsed_time_seconds: float = 0.0
    errors_encountered: List[str] = field(default_factory=list)

    @property
    def progress_percentage(self) -> float:
        """Calculate progress percentage."""
        if self.total_items == 0:
            return 0.0
        return (self.processed_items / self.total_items) * 100.0

    def enter(self, phase: ProgressPhase, description: str, total_items: int = 0) -> None:
        """Switch to a new phase and reset the counters."""
        self.current_phase = phase
        self.phase_description = description
        self.total_items = total_items
        self.processed_items = 0


class ProgressManager:
    """Rich-based progress manager for displaying progress."""

    def __init__(self, disable_live_display: bool = False, console: Optional[Console] = None):
        """
        Initialize progress manager.

        Args:
            disable_live_display: If True, disables live progress display (tests, --quiet)
            console: Console to render on; stderr by default so stdout stays clean
        """
        self.console = console or Console(stderr=True)
        self.disable_live_display = disable_live_display
        self.progress = Progress(console=self.console, disable=disable_live_display, transient=True)
        self.current_task: Optional[TaskID] = None

    def __enter__(self) -> "ProgressManager":
        self.progress.start()
        return self

    def __exit__(self, *exc: object) -> None:
        self.progress.stop()

    def start(self, total_items: int, description: str = "Processing...") -> TaskID:
        """Start progress tracking for a new task."""
        self.current_task = self.progress.add_task(description, total=total_items)
        return self.current_task

    def update(self, advance: int = 1, description: Optional[str] = None, total: Optional[int] = None) -> None:
        """Update progress by advancing items."""
        if self.current_task is not None:
            if total is not None:
                self.progress.update(self.current_task, total=total)
            self.progress.advance(self.current_task, advance)
            if description:
                self.progress.update(self.current_task, description=description)

    def finish(self) -> None:
        """Mark the current task as complete."""
        if self.current_task is not None:
            task = self.progress.tasks[self.current_task]
            self.progress.update(self.current_task, completed=task.total)
