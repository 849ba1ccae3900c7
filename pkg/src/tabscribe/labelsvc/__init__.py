"""Labeling and verification service: event-sourced queue plus HTTP interface."""

from .queue import JournalEntry, LabelQueue, LabelTask, QueueError, StaleLease, ValidationFailed

__all__ = [
    "JournalEntry",
    "LabelQueue",
    "LabelTask",
    "QueueError",
    "StaleLease",
    "ValidationFailed",
]
