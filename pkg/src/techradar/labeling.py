"""Human labeling workflow: rounds of randomly sampled keyword-in-context
tasks, distributed round-robin over annotators, persisted in an
append-only NDJSON event log.

State is reconstructed by replaying the log, so a crash between an
acknowledged write and shutdown can never lose labels: nothing is
acknowledged before the event is fsync'd.
"""

from __future__ import annotations

import datetime as dt
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .classifier import INITIAL_LABELS, map_initial_to_final
from .extractor import DataPoint, sample_for_labeling
from .jsonio import append_ndjson_durable, read_ndjson

EVENT_LOG_NAME = "label_events.ndjson"


class LabelingError(Exception):
    pass


class UnknownAnnotator(LabelingError):
    pass


class UnknownTask(LabelingError):
    pass


class TaskAlreadyDone(LabelingError):
    pass


class InvalidLabel(LabelingError):
    def __init__(self, label: str):
        super().__init__(
            f"invalid label {label!r}; valid initial labels: {', '.join(INITIAL_LABELS)}"
        )
        self.label = label


@dataclass
class LabelTask:
    point_id: str
    keyword: str
    paragraph: str
    page_url: str
    assigned_annotator: str
    round: int
    char_offset: int = -1
    status: str = "Pending"  # Pending | Labeled | Skipped
    label: Optional[str] = None
    flag_keyword: bool = False

    def to_json(self) -> dict:
        return {
            "point_id": self.point_id,
            "keyword": self.keyword,
            "paragraph": self.paragraph,
            "page_url": self.page_url,
            "assigned_annotator": self.assigned_annotator,
            "round": self.round,
            "char_offset": self.char_offset,
            "status": self.status,
            "label": self.label,
            "flag_keyword": self.flag_keyword,
        }


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()


class LabelStore:
    """Append-only, replayed-on-open store for labeling rounds.

    All mutations are serialized through one lock and persisted before
    they are visible, which is what the HTTP service relies on for its
    ack-means-durable contract.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.log_path = self.directory / EVENT_LOG_NAME
        self._lock = threading.Lock()
        self.tasks: dict[str, LabelTask] = {}       # point_id -> task (latest round)
        self.task_order: list[str] = []             # creation order
        self.annotators: set[str] = set()
        self.rounds: dict[int, dict] = {}           # round -> {"n", "seed", "annotators"}
        if self.log_path.exists():
            for event in read_ndjson(self.log_path):
                self._apply(event)

    # -- replay ---------------------------------------------------------

    def _apply(self, event: dict) -> None:
        kind = event.get("event")
        if kind == "round_created":
            rnd = int(event["round"])
            self.rounds[rnd] = {
                "n": event.get("n", len(event["tasks"])),
                "seed": event.get("seed"),
                "annotators": list(event.get("annotators", [])),
                "created_at": event.get("ts"),
            }
            self.annotators.update(event.get("annotators", []))
            for t in event["tasks"]:
                task = LabelTask(
                    point_id=t["point_id"],
                    keyword=t["keyword"],
                    paragraph=t["paragraph"],
                    page_url=t["page_url"],
                    assigned_annotator=t["annotator"],
                    round=rnd,
                    char_offset=t.get("char_offset", -1),
                )
                self.tasks[task.point_id] = task
                self.task_order.append(task.point_id)
        elif kind == "label_submitted":
            task = self.tasks.get(event["point_id"])
            if task is not None:
                task.status = "Labeled"
                task.label = event["label"]
                task.flag_keyword = bool(event.get("flag_keyword", False))
        elif kind == "task_skipped":
            task = self.tasks.get(event["point_id"])
            if task is not None:
                task.status = "Skipped"
        # unknown events are ignored so newer logs stay readable

    # -- mutations ------------------------------------------------------

    def create_round(
        self,
        points: Sequence[DataPoint],
        n: int,
        annotators: Sequence[str],
        seed: int,
    ) -> list[LabelTask]:
        """Sample a fresh round (disjoint from all prior rounds) and
        distribute tasks round-robin so annotator loads differ by <= 1."""
        if not annotators:
            raise LabelingError("at least one annotator required")
        if n < len(annotators):
            raise LabelingError(
                f"round size {n} is smaller than the annotator count {len(annotators)}"
            )
        with self._lock:
            exclude = set(self.tasks.keys())
            sample = sample_for_labeling(points, n, seed, exclude)
            rnd = max(self.rounds.keys(), default=0) + 1
            tasks_json = []
            for i, point in enumerate(sample):
                tasks_json.append(
                    {
                        "point_id": point.point_id,
                        "keyword": point.keyword,
                        "paragraph": point.paragraph,
                        "page_url": point.page_url,
                        "char_offset": point.char_offset,
                        "annotator": annotators[i % len(annotators)],
                    }
                )
            event = {
                "event": "round_created",
                "round": rnd,
                "n": n,
                "seed": seed,
                "annotators": list(annotators),
                "tasks": tasks_json,
                "ts": _now(),
            }
            append_ndjson_durable(self.log_path, event)
            self._apply(event)
            return [self.tasks[t["point_id"]] for t in tasks_json]

    def submit_label(self, point_id: str, annotator: str, label: str, flag_keyword: bool = False) -> LabelTask:
        if label not in INITIAL_LABELS:
            raise InvalidLabel(label)
        with self._lock:
            task = self.tasks.get(point_id)
            if task is None:
                raise UnknownTask(point_id)
            if task.status != "Pending":
                raise TaskAlreadyDone(f"task {point_id} already {task.status}")
            event = {
                "event": "label_submitted",
                "point_id": point_id,
                "annotator": annotator,
                "label": label,
                "flag_keyword": flag_keyword,
                "ts": _now(),
            }
            append_ndjson_durable(self.log_path, event)
            self._apply(event)
            return task

    def skip_task(self, point_id: str, annotator: str) -> LabelTask:
        with self._lock:
            task = self.tasks.get(point_id)
            if task is None:
                raise UnknownTask(point_id)
            if task.status != "Pending":
                raise TaskAlreadyDone(f"task {point_id} already {task.status}")
            event = {
                "event": "task_skipped",
                "point_id": point_id,
                "annotator": annotator,
                "ts": _now(),
            }
            append_ndjson_durable(self.log_path, event)
            self._apply(event)
            return task

    # -- queries --------------------------------------------------------

    def next_task(self, annotator: str) -> Optional[LabelTask]:
        if annotator not in self.annotators:
            raise UnknownAnnotator(annotator)
        for point_id in self.task_order:
            task = self.tasks[point_id]
            if task.assigned_annotator == annotator and task.status == "Pending":
                return task
        return None

    def annotator_queue_size(self, annotator: str) -> tuple[int, int]:
        """(position-of-next, total) for an annotator's task list."""
        total = 0
        done = 0
        for point_id in self.task_order:
            task = self.tasks[point_id]
            if task.assigned_annotator == annotator:
                total += 1
                if task.status != "Pending":
                    done += 1
        return done + 1, total

    def progress(self) -> dict:
        totals = {"Pending": 0, "Labeled": 0, "Skipped": 0}
        per_annotator: dict[str, dict[str, int]] = {
            a: {"Pending": 0, "Labeled": 0, "Skipped": 0} for a in sorted(self.annotators)
        }
        label_tally: dict[str, int] = {}
        for task in self.tasks.values():
            totals[task.status] += 1
            per_annotator[task.assigned_annotator][task.status] += 1
            if task.status == "Labeled" and task.label:
                label_tally[task.label] = label_tally.get(task.label, 0) + 1
        return {
            "total": totals,
            "per_annotator": per_annotator,
            "labels": dict(sorted(label_tally.items())),
            "rounds": {
                str(r): dict(info) for r, info in sorted(self.rounds.items())
            },
        }

    def keyword_flags(self) -> dict[str, int]:
        """How often annotators flagged each keyword as imprecise."""
        tallies: dict[str, int] = {}
        for task in self.tasks.values():
            if task.flag_keyword:
                tallies[task.keyword] = tallies.get(task.keyword, 0) + 1
        return dict(sorted(tallies.items()))

    def export_training_set(self, rounds: Optional[Iterable[int]] = None) -> list[dict]:
        """Labeled tasks mapped onto final labels; Others drops out.

        Each row: point_id, initial_label, final_label, annotator_id, round.
        """
        wanted = set(rounds) if rounds is not None else None
        out: list[dict] = []
        for point_id in self.task_order:
            task = self.tasks[point_id]
            if task.status != "Labeled" or task.label is None:
                continue
            if wanted is not None and task.round not in wanted:
                continue
            final = map_initial_to_final(task.label)
            if final is None:
                continue
            out.append(
                {
                    "point_id": task.point_id,
                    "initial_label": task.label,
                    "final_label": final,
                    "annotator_id": task.assigned_annotator,
                    "round": task.round,
                }
            )
        return out
