"""Single-consumer job queue with per-transition persistence.

One worker thread drains a queue.Queue; every state change rewrites the
job's JSON file, so finished results survive a process restart. Jobs found
on disk in a non-terminal state at startup were interrupted and are marked
failed rather than silently re-run.
"""

import json
import queue
import threading
import traceback
import uuid
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Callable, Optional

from ..errors import RoadRedesignError
from .workspace import UnknownJob, Workspace

JOB_KINDS = ("train", "cam", "inpaint", "saliency", "report")
JOB_STATES = ("queued", "running", "done", "failed")

_TRANSITIONS = {
    "queued": {"running", "failed"},
    "running": {"done", "failed"},
    "done": set(),
    "failed": set(),
}


class IllegalJobTransition(RoadRedesignError):
    pass


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class Job:
    job_id: str
    kind: str
    state: str = "queued"
    payload: dict = field(default_factory=dict)
    result: Optional[dict] = None
    error: Optional[dict] = None
    created_at: str = field(default_factory=_utcnow)
    started_at: Optional[str] = None
    finished_at: Optional[str] = None

    def transition(self, new_state: str) -> None:
        if new_state not in _TRANSITIONS.get(self.state, set()):
            raise IllegalJobTransition(
                f"job {self.job_id}: {self.state} -> {new_state} is not allowed"
            )
        self.state = new_state
        if new_state == "running":
            self.started_at = _utcnow()
        elif new_state in ("done", "failed"):
            self.finished_at = _utcnow()

    def to_dict(self) -> dict:
        return asdict(self)


class JobQueue:
    """Producers enqueue from any thread; one worker runs the handlers."""

    def __init__(self, workspace: Workspace, handlers: dict):
        self.workspace = workspace
        self.handlers = dict(handlers)
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()
        self._queue: queue.Queue = queue.Queue()
        self._worker: Optional[threading.Thread] = None
        self._recover()

    def _recover(self) -> None:
        for path in sorted(self.workspace.jobs_dir.glob("*.json")):
            data = json.loads(path.read_text(encoding="utf-8"))
            job = Job(**data)
            if job.state in ("queued", "running"):
                job.state = "failed"
                job.error = {"code": "INTERRUPTED", "message": "process restarted mid-job"}
                job.finished_at = _utcnow()
                self._persist(job)
            self._jobs[job.job_id] = job

    def start(self) -> None:
        if self._worker is None or not self._worker.is_alive():
            self._worker = threading.Thread(target=self._run, daemon=True)
            self._worker.start()

    def _persist(self, job: Job) -> None:
        path = self.workspace.jobs_dir / f"{job.job_id}.json"
        path.write_text(json.dumps(job.to_dict(), indent=2), encoding="utf-8")

    def submit(self, kind: str, payload: dict) -> Job:
        if kind not in self.handlers:
            raise ValueError(f"no handler registered for job kind {kind!r}")
        job = Job(job_id=f"j-{uuid.uuid4().hex[:12]}", kind=kind, payload=payload)
        with self._lock:
            self._jobs[job.job_id] = job
            self._persist(job)
        self._queue.put(job.job_id)
        self.start()
        return job

    def get(self, job_id: str) -> Job:
        with self._lock:
            if job_id not in self._jobs:
                raise UnknownJob(f"unknown job_id {job_id!r}")
            return self._jobs[job_id]

    def wait(self, job_id: str, timeout_s: float = 60.0, poll_s: float = 0.05) -> Job:
        """Block until the job reaches a terminal state (test/CLI helper)."""
        import time

        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            job = self.get(job_id)
            if job.state in ("done", "failed"):
                return job
            time.sleep(poll_s)
        raise TimeoutError(f"job {job_id} still {self.get(job_id).state} after {timeout_s}s")

    def _run(self) -> None:
        while True:
            job_id = self._queue.get()
            if job_id is None:
                return
            with self._lock:
                job = self._jobs[job_id]
                job.transition("running")
                self._persist(job)
            try:
                result = self.handlers[job.kind](job)
                with self._lock:
                    job.result = result
                    job.transition("done")
                    self._persist(job)
            except Exception as exc:  # worker must survive any handler failure
                code = getattr(exc, "code", "INTERNAL")
                with self._lock:
                    job.error = {
                        "code": code,
                        "message": str(exc),
                        "trace": traceback.format_exc(limit=4),
                    }
                    job.transition("failed")
                    self._persist(job)
