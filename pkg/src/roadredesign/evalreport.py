"""Before/after scoring of redesign sessions and aggregate reporting.

A session records one operator pass over one image: the heatmap settings,
the operator mask, the inpaint request, and the chosen candidate. Scoring
attaches p(hotspot) for the original and the candidate. Two aggregate
percentage drops are computed and stored side by side, because they answer
different questions and genuinely disagree on real data:

  mean_relative_drop_percent  = mean over sessions of 100*(pb - pa)/pb
  drop_of_means_percent       = 100*(mean pb - mean pa)/mean pb

Sessions are append-only; re-scoring writes a new revision.
"""

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .classifier import predict_proba
from .errors import MissingCandidate, NoScoredSessions


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RedesignSession:
    session_id: str
    image_id: str
    cam: dict  # method / threshold / min_area used for the AP heatmap
    mask_id: str
    inpaint: dict  # prompt, cfg_scale, denoise_strength, seed, sampler, backend
    chosen_candidate_id: Optional[str] = None
    p_before: Optional[float] = None
    p_after: Optional[float] = None
    operator_notes: str = ""
    operator_seconds: Optional[float] = None
    revision: int = 0
    created_at: str = field(default_factory=_utcnow)

    def __post_init__(self):
        for name in ("p_before", "p_after"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")

    @property
    def scored(self) -> bool:
        return self.p_before is not None and self.p_after is not None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RedesignSession":
        return cls(**data)


def _as_image(source: Union[np.ndarray, str, Path], what: str) -> np.ndarray:
    if isinstance(source, np.ndarray):
        return source
    from .classifier import load_image_rgb
    from .errors import UndecodableImage

    path = Path(source)
    if not path.exists():
        raise MissingCandidate(f"{what} file missing: {path}")
    try:
        return load_image_rgb(path)
    except UndecodableImage as exc:
        raise MissingCandidate(f"{what} unreadable: {exc}") from exc


def score_session(
    model,
    session: RedesignSession,
    original: Union[np.ndarray, str, Path],
    candidate: Union[np.ndarray, str, Path],
) -> RedesignSession:
    """New revision of the session with p_before/p_after filled in."""
    if candidate is None:
        raise MissingCandidate(f"session {session.session_id} has no chosen candidate")
    before = _as_image(original, "original")
    after = _as_image(candidate, "candidate")
    p_before = float(predict_proba(model, before))
    p_after = float(predict_proba(model, after))
    return dataclasses.replace(
        session,
        p_before=p_before,
        p_after=p_after,
        revision=session.revision + 1,
        created_at=_utcnow(),
    )


@dataclass
class EvalReport:
    model_identity: str
    sessions: list  # scored RedesignSession records
    mean_p_before: float
    mean_p_after: float
    mean_relative_drop_percent: float
    drop_of_means_percent: float
    n_excluded_zero_before: int = 0

    def to_dict(self) -> dict:
        return {
            "model_identity": self.model_identity,
            "sessions": [s.to_dict() for s in self.sessions],
            "mean_p_before": self.mean_p_before,
            "mean_p_after": self.mean_p_after,
            "mean_relative_drop_percent": self.mean_relative_drop_percent,
            "drop_of_means_percent": self.drop_of_means_percent,
            "n_excluded_zero_before": self.n_excluded_zero_before,
        }


def aggregate(sessions: Sequence[RedesignSession], model_identity: str = "") -> EvalReport:
    """Both aggregate definitions over the scored sessions.

    Sessions with p_before = 0 cannot contribute a relative drop; they are
    excluded from that mean and counted in n_excluded_zero_before.
    """
    scored = [s for s in sessions if s.scored]
    if not scored:
        raise NoScoredSessions("no scored sessions to aggregate")
    befores = np.array([s.p_before for s in scored], dtype=np.float64)
    afters = np.array([s.p_after for s in scored], dtype=np.float64)

    nonzero = befores > 0.0
    n_excluded = int((~nonzero).sum())
    if nonzero.any():
        rel = 100.0 * (befores[nonzero] - afters[nonzero]) / befores[nonzero]
        mean_relative = float(rel.mean())
    else:
        mean_relative = 0.0

    mean_before = float(befores.mean())
    mean_after = float(afters.mean())
    drop_of_means = (
        100.0 * (mean_before - mean_after) / mean_before if mean_before > 0 else 0.0
    )
    return EvalReport(
        model_identity=model_identity,
        sessions=list(scored),
        mean_p_before=mean_before,
        mean_p_after=mean_after,
        mean_relative_drop_percent=mean_relative,
        drop_of_means_percent=float(drop_of_means),
        n_excluded_zero_before=n_excluded,
    )


# ---------------------------------------------------------------------------
# Persistence

def append_session(session: RedesignSession, path: Union[str, Path]) -> None:
    """Append one revision to the JSONL session store."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(session.to_dict(), sort_keys=True) + "\n")


def load_sessions(path: Union[str, Path], latest_only: bool = True) -> list:
    """All revisions, or just the highest revision per session_id."""
    path = Path(path)
    if not path.exists():
        return []
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(RedesignSession.from_dict(json.loads(line)))
    if not latest_only:
        return rows
    latest: dict[str, RedesignSession] = {}
    for session in rows:
        current = latest.get(session.session_id)
        if current is None or session.revision >= current.revision:
            latest[session.session_id] = session
    return [latest[k] for k in sorted(latest)]


def write_report_json(report: EvalReport, path: Union[str, Path]) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )


def write_report_csv(report: EvalReport, path: Union[str, Path]) -> None:
    """Per-session rows plus a summary row carrying both aggregates."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["session_id", "image_id", "p_before", "p_after", "relative_drop_percent"]
        )
        for s in report.sessions:
            drop = (
                f"{100.0 * (s.p_before - s.p_after) / s.p_before:.6f}"
                if s.p_before else ""
            )
            writer.writerow(
                [s.session_id, s.image_id, f"{s.p_before:.6f}", f"{s.p_after:.6f}", drop]
            )
        writer.writerow([])
        writer.writerow(["mean_p_before", f"{report.mean_p_before:.6f}"])
        writer.writerow(["mean_p_after", f"{report.mean_p_after:.6f}"])
        writer.writerow(
            ["mean_relative_drop_percent", f"{report.mean_relative_drop_percent:.6f}"]
        )
        writer.writerow(["drop_of_means_percent", f"{report.drop_of_means_percent:.6f}"])
