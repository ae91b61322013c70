"""HTTP annotation service and its durable on-disk store.

Layout under the data directory:

    images/   uploaded PNG blobs, one per task image
    tasks/    one JSON config per task
    logs/     one append-only JSON-lines event log per session
    maps/     cached map exports (CSV + PNG)

Every answer is fsynced to its session log before the HTTP response is sent;
in-memory sessions are pure replays of those logs, so a killed and restarted
service converges to the same state. Mutations are serialized per session
with a lock; concurrent posts for the same question leave one winner and
409s for the rest (the losers' `punch_seq` no longer matches).
"""

from __future__ import annotations

import io
import json
import os
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.responses import FileResponse, JSONResponse
from PIL import Image, UnidentifiedImageError

from .aggregate import agreement, merge_sessions
from .grid import ImageRef, rasterize_patches, save_raster_png, write_score_csv
from .session import (
    Answer,
    Policy,
    Response,
    Session,
    SessionStatus,
    Stimulus,
    answer_from_record,
    answer_record,
    create_session,
    header_record,
    policy_from_json,
    policy_to_json,
    replay,
)


class NotFound(Exception):
    """Unknown task, session or image id."""


class Conflict(Exception):
    """Request valid but inapplicable in the current state (HTTP 409)."""


@dataclass(frozen=True)
class TaskRecord:
    task_id: str
    image: ImageRef
    question: str
    base_patch_side: int
    max_level: int
    policy: Policy
    multi_pass: bool
    status: str
    created_at: str


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class Store:
    """Task/session persistence plus the per-session locking contract."""

    def __init__(self, data_dir):
        self.root = Path(data_dir)
        for sub in ("images", "tasks", "logs", "maps"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self._sessions: Dict[str, Session] = {}
        self._session_task: Dict[str, str] = {}
        self._session_worker: Dict[str, str] = {}
        self._locks: Dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    # -- tasks ---------------------------------------------------------------

    def create_task(self, image_bytes: bytes, question: str, config: dict) -> TaskRecord:
        try:
            with Image.open(io.BytesIO(image_bytes)) as img:
                if img.format != "PNG":
                    raise ValueError(f"expected a PNG upload, got {img.format}")
                width, height = img.size
        except UnidentifiedImageError:
            raise ValueError("upload is not a decodable image")
        policy = policy_from_json(config.get("policy", {"kind": "sequential"}))
        base_patch_side = int(config["base_patch_side"])
        max_level = int(config.get("max_level", 0))
        if max_level < 0:
            raise ValueError(f"max_level must be >= 0, got {max_level}")
        image_id = uuid.uuid4().hex
        image = ImageRef(
            id=image_id, width=width, height=height, source=f"images/{image_id}.png"
        )
        # fail fast on an impossible grid before anything is persisted
        create_session(image, question, base_patch_side, max_level, policy)
        task_id = uuid.uuid4().hex
        record = TaskRecord(
            task_id=task_id,
            image=image,
            question=question,
            base_patch_side=base_patch_side,
            max_level=max_level,
            policy=policy,
            multi_pass=bool(config.get("multi_pass", False)),
            status="open",
            created_at=datetime.now(timezone.utc).isoformat(),
        )
        _atomic_write(self.root / image.source, image_bytes)
        _atomic_write(
            self.root / "tasks" / f"{task_id}.json",
            json.dumps(self._task_json(record)).encode(),
        )
        return record

    @staticmethod
    def _task_json(record: TaskRecord) -> dict:
        return {
            "task_id": record.task_id,
            "image": {
                "id": record.image.id,
                "width": record.image.width,
                "height": record.image.height,
                "source": record.image.source,
            },
            "question": record.question,
            "base_patch_side": record.base_patch_side,
            "max_level": record.max_level,
            "policy": policy_to_json(record.policy),
            "multi_pass": record.multi_pass,
            "status": record.status,
            "created_at": record.created_at,
        }

    def task(self, task_id: str) -> TaskRecord:
        path = self.root / "tasks" / f"{task_id}.json"
        if not path.exists():
            raise NotFound(f"no task {task_id}")
        data = json.loads(path.read_text())
        img = data["image"]
        return TaskRecord(
            task_id=data["task_id"],
            image=ImageRef(
                id=img["id"], width=img["width"], height=img["height"], source=img["source"]
            ),
            question=data["question"],
            base_patch_side=data["base_patch_side"],
            max_level=data["max_level"],
            policy=policy_from_json(data["policy"]),
            multi_pass=data.get("multi_pass", False),
            status=data["status"],
            created_at=data["created_at"],
        )

    def image_path(self, image_id: str) -> Path:
        path = self.root / "images" / f"{image_id}.png"
        if not path.exists():
            raise NotFound(f"no image {image_id}")
        return path

    # -- sessions --------------------------------------------------------------

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(session_id, threading.Lock())

    def _log_path(self, session_id: str) -> Path:
        return self.root / "logs" / f"{session_id}.jsonl"

    def open_session(self, task_id: str, worker_id: str) -> dict:
        task = self.task(task_id)
        session = create_session(
            task.image,
            task.question,
            task.base_patch_side,
            task.max_level,
            task.policy,
            multi_pass=task.multi_pass,
        )
        header = json.dumps(
            header_record(session, task_id=task_id, worker_id=worker_id)
        )
        with open(self._log_path(session.id), "w") as fh:
            fh.write(header + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        with self._registry_lock:
            self._sessions[session.id] = session
            self._session_task[session.id] = task_id
            self._session_worker[session.id] = worker_id
            self._locks.setdefault(session.id, threading.Lock())
        with self._lock_for(session.id):
            payload = self._advance_to_stimulus(session)
        payload["session_id"] = session.id
        return payload

    def _load_session(self, session_id: str) -> Session:
        with self._registry_lock:
            if session_id in self._sessions:
                return self._sessions[session_id]
        path = self._log_path(session_id)
        if not path.exists():
            raise NotFound(f"no session {session_id}")
        header, answers = self._read_log_tolerant(path)
        img = header["image"]
        session = replay(
            ImageRef(
                id=img["id"], width=img["width"], height=img["height"],
                source=img.get("source", ""),
            ),
            header["question"],
            header["base_patch_side"],
            header["max_level"],
            policy_from_json(header["policy"]),
            answers,
            multi_pass=header.get("multi_pass", False),
            session_id=header["session_id"],
        )
        with self._registry_lock:
            cached = self._sessions.setdefault(session_id, session)
            self._session_task.setdefault(session_id, header.get("task_id", ""))
            self._session_worker.setdefault(session_id, header.get("worker_id", "worker"))
        return cached

    @staticmethod
    def _read_log_tolerant(path: Path):
        """Parse a session log, dropping a torn trailing line from a crash."""
        with open(path) as fh:
            lines = [line for line in fh if line.strip()]
        header = json.loads(lines[0])
        answers = []
        for i, line in enumerate(lines[1:]):
            try:
                answers.append(answer_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError):
                if i == len(lines) - 2:
                    break  # incomplete final append
                raise
        return header, answers

    def _advance_to_stimulus(self, session: Session) -> dict:
        """Drive the session to its next askable state (caller holds the lock)."""
        while session.status is SessionStatus.LEVEL_COMPLETE:
            session.advance_level()
        if session.status is SessionStatus.DONE:
            return {"status": "done", "questions": session.question_count}
        stimulus = session.next_stimulus()
        assert stimulus is not None
        return {"status": "active", "stimulus": self._stimulus_json(session, stimulus)}

    def _stimulus_json(self, session: Session, stimulus: Stimulus) -> dict:
        return {
            "image_url": f"/v1/images/{session.image.id}",
            "question": stimulus.question,
            "hidden": [
                {"x": r.x, "y": r.y, "w": r.w, "h": r.h} for r in stimulus.hidden
            ],
            "progress": {
                "answered": stimulus.answered,
                "total": stimulus.projected_total,
            },
            "punch_seq": stimulus.punch_seq,
        }

    def stimulus(self, session_id: str) -> dict:
        session = self._load_session(session_id)
        with self._lock_for(session_id):
            return self._advance_to_stimulus(session)

    def answer(self, session_id: str, response_token: str, latency_s: float, punch_seq: int) -> dict:
        try:
            response = Response(response_token)
        except ValueError:
            raise ValueError(f'response must be "can" or "cannot", got {response_token!r}')
        if latency_s < 0:
            raise ValueError(f"latency_s must be >= 0, got {latency_s}")
        session = self._load_session(session_id)
        with self._lock_for(session_id):
            if session.status is not SessionStatus.DONE and session.pending is None:
                # pending was lost to a restart; the scheduler re-derives it
                self._advance_to_stimulus(session)
            if session.status is SessionStatus.DONE:
                raise Conflict("session is already done")
            if punch_seq != session.question_count or session.pending is None:
                raise Conflict(
                    f"punch_seq {punch_seq} does not match the pending question "
                    f"{session.question_count}"
                )
            answer = Answer(
                worker_id=self._session_worker.get(session_id, "worker"),
                punched=frozenset(session.pending),
                response=response,
                latency_s=latency_s,
                at=datetime.now(timezone.utc),
            )
            # write-ahead: the crowd's answer hits disk before we acknowledge
            with open(self._log_path(session_id), "a") as fh:
                fh.write(json.dumps(answer_record(answer)) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            session.submit_answer(answer)
            level_completed = session.status is SessionStatus.LEVEL_COMPLETE
            payload = self._advance_to_stimulus(session)
            if level_completed and payload["status"] == "active":
                payload["status"] = "level_complete"
            return payload

    def sessions_for_task(self, task_id: str) -> List[Session]:
        ids = sorted(p.stem for p in (self.root / "logs").glob("*.jsonl"))
        out = []
        for sid in ids:
            session = self._load_session(sid)
            if self._session_task.get(sid) == task_id:
                out.append(session)
        return out

    # -- maps --------------------------------------------------------------------

    def get_map(self, task_id: str, tau: float) -> dict:
        task = self.task(task_id)
        done = [
            s for s in self.sessions_for_task(task_id) if s.status is SessionStatus.DONE
        ]
        if not done:
            raise Conflict(f"task {task_id} has no completed sessions")
        imap = merge_sessions(done)
        report = agreement(imap, tau)
        write_score_csv(imap.score, self.root / "maps" / f"{task_id}.csv")
        save_raster_png(
            rasterize_patches(imap.score, imap.grid),
            self.root / "maps" / f"{task_id}.png",
        )
        grid = imap.grid
        side = grid.patch_side
        scores = [
            {
                "level": pid.level,
                "row": pid.row,
                "col": pid.col,
                "score": imap.score[pid],
                "rect": {
                    "x": pid.col * side,
                    "y": pid.row * side,
                    "w": min(side, grid.width - pid.col * side),
                    "h": min(side, grid.height - pid.row * side),
                },
            }
            for pid in sorted(imap.score)
        ]
        return {
            "task_id": task_id,
            "question": task.question,
            "image_url": f"/v1/images/{task.image.id}",
            "n_workers": imap.n_workers,
            "tau": tau,
            "grid": {
                "level": grid.level,
                "patch_side": grid.patch_side,
                "rows": grid.rows,
                "cols": grid.cols,
                "width": grid.width,
                "height": grid.height,
            },
            "scores": scores,
            "agreement": {
                "consensus_important": sorted([p.row, p.col] for p in report.consensus_important),
                "consensus_unimportant": sorted([p.row, p.col] for p in report.consensus_unimportant),
                "controversial": sorted([p.row, p.col] for p in report.controversial),
            },
        }


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------


def create_app(data_dir, ui_dir: Optional[str] = None) -> FastAPI:
    store = Store(data_dir)
    app = FastAPI(title="punchhole", version="0.1.0")
    app.state.store = store

    @app.exception_handler(ValueError)
    def _bad_request(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(NotFound)
    def _not_found(request: Request, exc: NotFound):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(Conflict)
    def _conflict(request: Request, exc: Conflict):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.post("/v1/tasks", status_code=201)
    def create_task(
        image: UploadFile = File(...),
        question: str = Form(...),
        patch_size: int = Form(...),
        max_level: int = Form(0),
        policy: str = Form("sequential"),
        seed: int = Form(0),
        max_group: int = Form(8),
        multi_pass: bool = Form(False),
    ):
        kind = {"seq": "sequential", "shuf": "shuffled"}.get(policy, policy)
        config = {
            "base_patch_side": patch_size,
            "max_level": max_level,
            "policy": {"kind": kind, "seed": seed, "max_group": max_group},
            "multi_pass": multi_pass,
        }
        record = store.create_task(image.file.read(), question, config)
        return {"task_id": record.task_id}

    @app.get("/v1/tasks/{task_id}")
    def get_task(task_id: str):
        record = store.task(task_id)
        return {
            "task_id": record.task_id,
            "question": record.question,
            "image_url": f"/v1/images/{record.image.id}",
            "width": record.image.width,
            "height": record.image.height,
            "base_patch_side": record.base_patch_side,
            "max_level": record.max_level,
            "policy": policy_to_json(record.policy),
            "status": record.status,
            "created_at": record.created_at,
        }

    @app.post("/v1/tasks/{task_id}/sessions")
    def open_session(task_id: str, body: Optional[dict] = None):
        worker_id = str((body or {}).get("worker_id", "")) or "anonymous"
        return store.open_session(task_id, worker_id)

    @app.get("/v1/sessions/{session_id}/stimulus")
    def get_stimulus(session_id: str):
        return store.stimulus(session_id)

    @app.post("/v1/sessions/{session_id}/answer")
    def post_answer(session_id: str, body: dict):
        if "response" not in body or "punch_seq" not in body:
            raise ValueError("answer body needs response, punch_seq and latency_s")
        return store.answer(
            session_id,
            str(body["response"]),
            float(body.get("latency_s", 0.0)),
            int(body["punch_seq"]),
        )

    @app.get("/v1/tasks/{task_id}/map")
    def get_map(task_id: str, tau: float = 0.8):
        return store.get_map(task_id, tau)

    @app.get("/v1/images/{image_id}")
    def get_image(image_id: str):
        return FileResponse(store.image_path(image_id), media_type="image/png")

    if ui_dir and os.path.isdir(ui_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
