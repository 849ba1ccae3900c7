"""Event-sourced labeling queue.

Every state change is an appended event; the in-memory state is only ever
mutated by applying events, so replaying the journal reconstructs the queue
exactly (crash recovery and full provenance for every label).
"""

from __future__ import annotations

import json
import threading
import time
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Sequence

from ..domain import (
    ColumnSchema,
    DatasetManifest,
    DomainError,
    Label,
    ManifestEntry,
    CellId,
    resolve_labels,
    validate_label,
)

TASK_KINDS = ("label", "verify", "batch_reject")


class QueueError(DomainError):
    pass


class ValidationFailed(QueueError):
    """Submitted value rejected by the schema (HTTP 400 class)."""


class StaleLease(QueueError):
    """Lease missing, expired, or held by someone else (HTTP 409 class)."""


@dataclass(frozen=True)
class LabelTask:
    task_id: str
    kind: str
    cell_ids: tuple[str, ...]
    predicted: Optional[str] = None
    confidences: tuple[float, ...] = ()
    r: int = 1
    escalation: bool = False

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise QueueError(f"unknown task kind {self.kind!r}")
        if self.kind in ("label", "verify") and len(self.cell_ids) != 1:
            raise QueueError(f"{self.kind} tasks carry exactly one cell")
        if self.kind in ("verify", "batch_reject") and self.predicted is None:
            raise QueueError(f"{self.kind} tasks carry a prediction")

    def to_record(self) -> dict:
        return {
            "task_id": self.task_id,
            "kind": self.kind,
            "cell_ids": list(self.cell_ids),
            "predicted": self.predicted,
            "confidences": list(self.confidences),
            "r": self.r,
            "escalation": self.escalation,
        }


@dataclass(frozen=True)
class JournalEntry:
    """One submitted label: the immutable unit of human work."""

    seq: int
    task_id: str
    cell_id: str
    labeler_id: str
    value: str
    timestamp: str


def _iso(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).isoformat().replace("+00:00", "Z")


class LabelQueue:
    """Task queue with leases, replication, majority resolution, escalation.

    All mutations flow through events; ``journal_path`` (optional) persists
    them as JSON lines. ``clock`` is injectable for deterministic tests.
    """

    def __init__(
        self,
        schema: ColumnSchema,
        journal_path: Optional[str | Path] = None,
        clock: Callable[[], float] = time.time,
        lease_seconds: float = 600.0,
        batch_size: int = 50,
    ):
        self.schema = schema
        self.clock = clock
        self.lease_seconds = lease_seconds
        self.batch_size = batch_size
        self.journal_path = Path(journal_path) if journal_path else None
        self._lock = threading.Lock()
        self.events: list[dict] = []
        self._reset_state()
        if self.journal_path and self.journal_path.exists():
            with open(self.journal_path, encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if line:
                        event = json.loads(line)
                        self.events.append(event)
                        self._apply(event)

    # -- state ------------------------------------------------------------

    def _reset_state(self):
        self.tasks: dict[str, LabelTask] = {}
        self.status: dict[str, str] = {}  # pending | in_progress | completed
        self.pending_order: list[str] = []
        self.leases: dict[str, tuple[str, float]] = {}  # task -> (labeler, expires)
        self.task_submitters: dict[str, list[str]] = {}
        self.entries: list[JournalEntry] = []
        self.cell_entries: dict[str, list[int]] = {}  # cell -> entry indices
        self.completed_cells: dict[str, str] = {}
        self.images: dict[str, str] = {}  # cell -> image path
        self.escalation_count: dict[str, int] = {}
        self.next_seq = 1

    def state_snapshot(self) -> dict:
        """Canonical view of the whole state, for replay-identity checks."""
        return {
            "tasks": {k: t.to_record() for k, t in sorted(self.tasks.items())},
            "status": dict(sorted(self.status.items())),
            "pending_order": list(self.pending_order),
            "leases": {k: list(v) for k, v in sorted(self.leases.items())},
            "task_submitters": {k: list(v) for k, v in sorted(self.task_submitters.items())},
            "entries": [e.__dict__ for e in self.entries],
            "completed_cells": dict(sorted(self.completed_cells.items())),
            "images": dict(sorted(self.images.items())),
            "escalation_count": dict(sorted(self.escalation_count.items())),
            "next_seq": self.next_seq,
        }

    @classmethod
    def replay(
        cls,
        events: Sequence[dict],
        schema: ColumnSchema,
        lease_seconds: float = 600.0,
        batch_size: int = 50,
    ) -> "LabelQueue":
        q = cls(schema, lease_seconds=lease_seconds, batch_size=batch_size)
        for event in events:
            q.events.append(event)
            q._apply(event)
        return q

    # -- event plumbing ----------------------------------------------------

    def _append(self, event_type: str, **payload) -> dict:
        event = {"seq": self.next_seq, "ts": self.clock(), "type": event_type, **payload}
        self.events.append(event)
        if self.journal_path:
            with open(self.journal_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(event, sort_keys=True) + "\n")
        self._apply(event)
        return event

    def _apply(self, event: dict) -> None:
        kind = event["type"]
        if kind == "enqueued":
            task = LabelTask(
                task_id=event["task"]["task_id"],
                kind=event["task"]["kind"],
                cell_ids=tuple(event["task"]["cell_ids"]),
                predicted=event["task"]["predicted"],
                confidences=tuple(event["task"]["confidences"]),
                r=event["task"]["r"],
                escalation=event["task"]["escalation"],
            )
            self.tasks[task.task_id] = task
            self.status[task.task_id] = "pending"
            self.pending_order.append(task.task_id)
            self.task_submitters.setdefault(task.task_id, [])
            for cid, img in event.get("images", {}).items():
                self.images[cid] = img
        elif kind == "leased":
            tid = event["task_id"]
            self.status[tid] = "in_progress"
            self.pending_order.remove(tid)
            self.leases[tid] = (event["labeler"], event["expires"])
        elif kind == "expired":
            tid = event["task_id"]
            self.leases.pop(tid, None)
            self.status[tid] = "pending"
            self.pending_order.append(tid)
        elif kind == "submitted":
            self._apply_submit(event)
        else:
            raise QueueError(f"unknown event type {kind!r}")
        self.next_seq = event["seq"] + 1

    def _apply_submit(self, event: dict) -> None:
        tid = event["task_id"]
        task = self.tasks[tid]
        labeler = event["labeler"]
        self.leases.pop(tid, None)
        self.task_submitters[tid].append(labeler)

        ts = _iso(event["ts"])
        new_entries: list[tuple[str, str]] = []  # (cell, value)
        if task.kind == "batch_reject":
            rejected = set(event.get("rejections", []))
            for cid in task.cell_ids:
                if cid in rejected:
                    # rejected cells need fresh labels from scratch
                    self._spawn_task(event, kind="label", cell_ids=(cid,), r=task.r)
                else:
                    new_entries.append((cid, task.predicted))
        else:
            new_entries.append((task.cell_ids[0], event["value"]))

        for cid, value in new_entries:
            entry = JournalEntry(
                seq=event["seq"],
                task_id=tid,
                cell_id=cid,
                labeler_id=labeler,
                value=value,
                timestamp=ts,
            )
            self.cell_entries.setdefault(cid, []).append(len(self.entries))
            self.entries.append(entry)

        # task completion: r distinct labelers have weighed in
        if len(set(self.task_submitters[tid])) >= task.r:
            self.status[tid] = "completed"
        else:
            self.status[tid] = "pending"
            self.pending_order.append(tid)

        for cid, _ in new_entries:
            self._resolve_cell(cid, event, task.r)

    def _resolve_cell(self, cell_id: str, event: dict, r: int) -> None:
        idxs = self.cell_entries.get(cell_id, [])
        if len({self.entries[i].labeler_id for i in idxs}) < r:
            return
        values = [
            Label(self.entries[i].value, self.entries[i].labeler_id, self.entries[i].timestamp)
            for i in idxs
        ]
        winner = resolve_labels(values)
        if winner is not None:
            self.completed_cells[cell_id] = winner
        elif cell_id not in self.completed_cells:
            # tie: escalate once per tie level with one extra labeler
            n = self.escalation_count.get(cell_id, 0)
            self.escalation_count[cell_id] = n + 1
            self._spawn_task(event, kind="label", cell_ids=(cell_id,), r=1, escalation=True)

    def _spawn_task(self, parent_event: dict, kind: str, cell_ids: tuple, r: int, escalation=False):
        suffix = "esc" if escalation else "rej"
        base = f"t{parent_event['seq']:06d}-{suffix}"
        tid = base
        n = 0
        while tid in self.tasks:
            n += 1
            tid = f"{base}{n}"
        task = LabelTask(
            task_id=tid, kind=kind, cell_ids=cell_ids, r=r, escalation=escalation
        )
        self.tasks[tid] = task
        self.status[tid] = "pending"
        self.pending_order.append(tid)
        self.task_submitters.setdefault(tid, [])

    # -- commands -----------------------------------------------------------

    def enqueue_cells(
        self,
        cells: Sequence[tuple[str, Optional[str]]],
        kind: str,
        r: int = 1,
        predictions: Optional[dict] = None,
    ) -> int:
        """Enqueue (cell_id, image_path) pairs. ``predictions`` maps cell id to
        (value, confidences) and is required for verify/batch_reject kinds.
        Cells already completed are skipped with a warning."""
        if kind not in TASK_KINDS:
            raise QueueError(f"unknown task kind {kind!r}")
        if r < 1:
            raise QueueError("replication factor must be >= 1")
        with self._lock:
            fresh = []
            for cid, img in cells:
                if cid in self.completed_cells:
                    warnings.warn(f"cell {cid} already completed; enqueue skipped", stacklevel=2)
                    continue
                fresh.append((cid, img))
            created = 0
            if kind == "batch_reject":
                if not predictions:
                    raise QueueError("batch_reject needs predictions")
                groups: dict[str, list[tuple[str, Optional[str]]]] = {}
                for cid, img in fresh:
                    value = predictions[cid][0]
                    groups.setdefault(value, []).append((cid, img))
                for value in sorted(groups):
                    members = groups[value]
                    for i in range(0, len(members), self.batch_size):
                        chunk = members[i : i + self.batch_size]
                        created += 1
                        self._enqueue_one(
                            kind,
                            tuple(c for c, _ in chunk),
                            predicted=value,
                            confidences=(),
                            r=r,
                            images={c: img for c, img in chunk if img},
                        )
            else:
                for cid, img in fresh:
                    pred_value, confs = (None, ())
                    if kind == "verify":
                        if not predictions or cid not in predictions:
                            raise QueueError(f"verify task for {cid} needs a prediction")
                        pred_value, confs = predictions[cid]
                    created += 1
                    self._enqueue_one(
                        kind,
                        (cid,),
                        predicted=pred_value,
                        confidences=tuple(confs),
                        r=r,
                        images={cid: img} if img else {},
                    )
            return created

    def _enqueue_one(self, kind, cell_ids, predicted, confidences, r, images):
        tid = f"t{self.next_seq:06d}"
        task = LabelTask(
            task_id=tid,
            kind=kind,
            cell_ids=cell_ids,
            predicted=predicted,
            confidences=confidences,
            r=r,
        )
        self._append("enqueued", task=task.to_record(), images=images)

    def enqueue_manifest(self, manifest: DatasetManifest, kind: str = "label", r: int = 1) -> int:
        return self.enqueue_cells(
            [(str(e.cell_id), e.image) for e in manifest.entries], kind=kind, r=r
        )

    def enqueue_predictions(
        self, preds: Sequence, images: dict[str, str], kind: str = "verify", r: int = 1
    ) -> int:
        """Enqueue decide's manual export: SequencePrediction/ManualRoute values."""
        from ..models import ManualRoute

        cells = []
        predictions = {}
        for p in preds:
            cid = str(p.cell_id)
            cells.append((cid, images.get(cid)))
            if isinstance(p, ManualRoute):
                predictions[cid] = ("", ())
                if kind in ("verify", "batch_reject"):
                    # no usable prediction: fall back to a plain label task
                    continue
            else:
                predictions[cid] = (p.raw if p.value is None else p.value, tuple(p.confidences))
        n = 0
        with_pred = [(c, i) for c, i in cells if predictions.get(c, ("",))[0]]
        without = [(c, i) for c, i in cells if not predictions.get(c, ("",))[0]]
        if kind == "label":
            return self.enqueue_cells(cells, kind="label", r=r)
        if with_pred:
            n += self.enqueue_cells(with_pred, kind=kind, r=r, predictions=predictions)
        if without:
            n += self.enqueue_cells(without, kind="label", r=r)
        return n

    def next_task(self, labeler_id: str, now: Optional[float] = None) -> Optional[LabelTask]:
        """Oldest pending task this labeler has not already submitted."""
        with self._lock:
            now = self.clock() if now is None else now
            self._expire_locked(now)
            for tid in self.pending_order:
                if labeler_id in self.task_submitters.get(tid, []):
                    continue
                expires = now + self.lease_seconds
                self._append("leased", task_id=tid, labeler=labeler_id, expires=expires)
                return self.tasks[tid]
            return None

    def submit(
        self,
        task_id: str,
        labeler_id: str,
        value: Optional[str] = None,
        rejections: Optional[Sequence[str]] = None,
        now: Optional[float] = None,
    ) -> None:
        with self._lock:
            now = self.clock() if now is None else now
            task = self.tasks.get(task_id)
            if task is None:
                raise QueueError(f"no such task {task_id}")
            lease = self.leases.get(task_id)
            if lease is None or lease[0] != labeler_id:
                raise StaleLease(f"task {task_id} is not leased to {labeler_id}")
            if lease[1] < now:
                self._append("expired", task_id=task_id)
                raise StaleLease(f"lease on {task_id} expired")
            if task.kind == "batch_reject":
                rejections = list(rejections or [])
                unknown = set(rejections) - set(task.cell_ids)
                if unknown:
                    raise ValidationFailed(f"rejections outside task: {sorted(unknown)}")
                self._append(
                    "submitted", task_id=task_id, labeler=labeler_id, rejections=sorted(rejections)
                )
            else:
                if value is None:
                    raise ValidationFailed("a label value is required")
                if not validate_label(value, self.schema):
                    raise ValidationFailed(
                        f"value {value!r} is not valid for schema {self.schema.name!r}"
                    )
                self._append("submitted", task_id=task_id, labeler=labeler_id, value=value)

    def expire_leases(self, now: Optional[float] = None) -> int:
        with self._lock:
            return self._expire_locked(self.clock() if now is None else now)

    def _expire_locked(self, now: float) -> int:
        overdue = [tid for tid, (_, exp) in self.leases.items() if exp < now]
        for tid in sorted(overdue):
            self._append("expired", task_id=tid)
        return len(overdue)

    # -- views ----------------------------------------------------------------

    def stats(self) -> dict:
        counts = {"pending": 0, "in_progress": 0, "completed": 0}
        for s in self.status.values():
            counts[s] += 1
        counts["escalated"] = sum(self.escalation_count.values())
        return counts

    def journal_entries(self) -> list[JournalEntry]:
        return list(self.entries)

    def export_manifest(self, provenance: str = "verification") -> DatasetManifest:
        """Completed cells as a manifest (all labels kept, majority resolvable)."""
        entries = []
        for cid in sorted(self.completed_cells):
            labels = tuple(
                Label(self.entries[i].value, self.entries[i].labeler_id, self.entries[i].timestamp)
                for i in self.cell_entries.get(cid, [])
            )
            entries.append(
                ManifestEntry(
                    cell_id=CellId.parse(cid),
                    image=self.images.get(cid, ""),
                    labels=labels,
                )
            )
        return DatasetManifest(schema=self.schema, entries=tuple(entries), provenance=provenance)
