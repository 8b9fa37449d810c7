"""Session snapshots: one JSON document per session on disk.

The document embeds the canonical JSON tree encoding as its "status"
member and adds what a server needs to resume where it left off: the
alignment info, the collaboration model state (including dynamic parts
such as the current turn holder), and the conflict settings.
"""

from __future__ import annotations

import json
import os
import tempfile

from sara.collab import CompositeModel
from sara.conflicts import DEFAULT_WINDOW_MS, ResolutionStrategy
from sara.errors import ConfigError, MalformedSnapshot, PayloadShapeMismatch
from sara.events import obj_to_status, status_to_obj
from sara.scene import AlignmentInfo, Session


def snapshot_session(session: Session,
                     conflict_window_ms: int = DEFAULT_WINDOW_MS,
                     conflict_strategy: ResolutionStrategy = ResolutionStrategy.LAST_WRITER_WINS,
                     ) -> dict:
    composite = session.model_config or CompositeModel([])
    return {
        "session_id": session.session_id,
        "alignment": {
            "kind": session.alignment.kind,
            "marker_id": session.alignment.marker_id,
            "physical_width_m": session.alignment.physical_width_m,
            "slam_blob": session.alignment.slam_blob,
        },
        "conflict": {
            "window_ms": conflict_window_ms,
            "strategy": conflict_strategy.value,
        },
        "models": composite.to_doc()["models"],
        "status": status_to_obj(session.status),
    }


def restore_session(doc) -> tuple[Session, int, ResolutionStrategy]:
    if not isinstance(doc, dict):
        raise MalformedSnapshot("snapshot must be a JSON object")
    try:
        session_id = doc["session_id"]
        if not isinstance(session_id, str) or not session_id:
            raise MalformedSnapshot("snapshot session_id must be a non-empty string")
        alignment_doc = doc.get("alignment", {})
        if not isinstance(alignment_doc, dict):
            raise MalformedSnapshot("snapshot alignment must be an object")
        alignment = AlignmentInfo(
            kind=alignment_doc.get("kind", "none"),
            marker_id=alignment_doc.get("marker_id", ""),
            physical_width_m=float(alignment_doc.get("physical_width_m", 0.0)),
            slam_blob=alignment_doc.get("slam_blob", ""),
        )
        problems = alignment.violations()
        if problems:
            raise MalformedSnapshot("snapshot alignment invalid: " + "; ".join(problems))
        conflict_doc = doc.get("conflict", {})
        window_ms = conflict_doc.get("window_ms", DEFAULT_WINDOW_MS)
        if not isinstance(window_ms, int) or window_ms < 0:
            raise MalformedSnapshot("snapshot conflict window must be a non-negative integer")
        strategy = ResolutionStrategy.parse(
            conflict_doc.get("strategy", ResolutionStrategy.LAST_WRITER_WINS.value))
        composite = CompositeModel.from_doc({"models": doc.get("models", [])})
        status = obj_to_status(doc["status"], "snapshot.status")
    except MalformedSnapshot:
        raise
    except (KeyError, TypeError, ValueError, ConfigError,
            PayloadShapeMismatch) as exc:
        raise MalformedSnapshot(f"snapshot document malformed: {exc}") from None
    problems = status.verify_tree()
    if problems:
        raise MalformedSnapshot("snapshot tree inconsistent: " + "; ".join(problems))
    session = Session(session_id=session_id, status=status, alignment=alignment,
                      model_config=composite)
    return session, window_ms, strategy


def snapshot_path(directory: str, session_id: str) -> str:
    return os.path.join(directory, f"{session_id}.json")


def save_snapshot(session: Session, directory: str,
                  conflict_window_ms: int = DEFAULT_WINDOW_MS,
                  conflict_strategy: ResolutionStrategy = ResolutionStrategy.LAST_WRITER_WINS,
                  ) -> str:
    os.makedirs(directory, exist_ok=True)
    doc = snapshot_session(session, conflict_window_ms, conflict_strategy)
    path = snapshot_path(directory, session.session_id)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_snapshot(path: str) -> tuple[Session, int, ResolutionStrategy]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedSnapshot(f"snapshot unreadable: {exc}") from None
    return restore_session(doc)


def load_all_snapshots(directory: str) -> list[tuple[Session, int, ResolutionStrategy]]:
    if not os.path.isdir(directory):
        return []
    out = []
    for name in sorted(os.listdir(directory)):
        if name.endswith(".json"):
            out.append(load_snapshot(os.path.join(directory, name)))
    return out
