"""Long-running curation service around one live active-learning run.

Serves query batches as leased label tasks, accepts submissions through a
write-ahead log, triggers retraining, and snapshots the pool per iteration.
Replaying the WAL against the same initial pool, config, and seed rebuilds
the exact pool state (the snapshots byte-compare equal).
"""
from __future__ import annotations

import json
import math
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Query, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .al import ALConfig, ALEngine, BatchSelection
from .audio_io import decode
from .errors import ServiceError, ValidationError
from .pool import SampleRecord, dump_pool, snapshot_path
from .render import STYLES, render_spectrogram_png

LEASE_SECONDS_DEFAULT = 30 * 60


def _json_safe(value):
    """Undefined metrics travel as null over HTTP, never as NaN."""
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value

# Annotation vocabularies (config-overridable); seeded with the marine-mammal
# classes and SRKW pulsed-call codes the curation targets.
DEFAULT_VOCAB = {
    "species": ["humpback", "orca", "pacific_white_sided_dolphin", "sea_lion",
                "minke", "fin", "sperm", "gray"],
    "ecotypes": ["SRKW", "Biggs", "NRKW", "offshore"],
    "call_codes": ["S01", "S03", "S13", "S16", "S18", "S19", "S33", "S36",
                   "S42", "S44"],
}


@dataclass
class LabelTask:
    task_id: str
    sample_id: str
    spectrogram_uri: str
    audio_uri: str
    model_score: float
    strategy: str
    issued_at: float
    status: str = "pending"          # pending | submitted | expired
    leased_to: str | None = None
    lease_expiry: float = 0.0

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "sample_id": self.sample_id,
            "spectrogram_uri": self.spectrogram_uri,
            "audio_uri": self.audio_uri,
            "model_score": self.model_score,
            "strategy": self.strategy,
            "issued_at": self.issued_at,
            "status": self.status,
        }


class CurationService:
    """Owns one ALEngine; all pool mutations are serialized through one lock
    (the command queue) and logged to the WAL before they apply."""

    def __init__(self, records: list[SampleRecord], features: dict,
                 cfg: ALConfig, seed: int = 0, oracle: dict | None = None,
                 audio_dir: str | Path | None = None,
                 state_dir: str | Path | None = None,
                 lease_seconds: float = LEASE_SECONDS_DEFAULT,
                 vocab: dict | None = None, run_id: str | None = None,
                 clock=time.time):
        self.engine = ALEngine(records, features, cfg, seed=seed, oracle=oracle)
        self.cfg = cfg
        self.run_id = run_id or uuid.uuid4().hex[:12]
        self.audio_dir = Path(audio_dir) if audio_dir else None
        self.state_dir = Path(state_dir) if state_dir else None
        self.lease_seconds = lease_seconds
        self.vocab = vocab or DEFAULT_VOCAB
        self.clock = clock
        self.lock = threading.Lock()
        self.tasks: dict[str, LabelTask] = {}
        self.task_by_sample: dict[str, str] = {}
        self.queue: deque[str] = deque()
        self.substrategy: dict[str, str] = {}
        self.acks: dict[str, dict] = {}
        self.wal_seq = 0
        self.retraining = False
        self._task_counter = 0
        if self.state_dir:
            self.state_dir.mkdir(parents=True, exist_ok=True)
            self.wal_path = self.state_dir / "wal.jsonl"
        else:
            self.wal_path = None
        # The engine needs one trained model before it can rank anything.
        self.engine.retrain()
        self._snapshot_pool()

    # -- internals ------------------------------------------------------------

    def _wal_append(self, event: dict) -> int:
        self.wal_seq += 1
        event = {"seq": self.wal_seq, **event}
        if self.wal_path is not None:
            with open(self.wal_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
                fh.flush()
        return self.wal_seq

    def _snapshot_pool(self) -> None:
        if self.state_dir is None:
            return
        base = self.state_dir / "pool.jsonl"
        records = list(self.engine.records.values())
        dump_pool(records, base)
        dump_pool(records, snapshot_path(base, self.engine.iteration))

    def _refill_queue(self) -> None:
        if any(self.tasks[tid].status == "pending" for tid in self.queue):
            return
        unlabeled = self.engine.ids_in(split="train", label_state="unlabeled")
        if not unlabeled:
            return
        selection = self.engine.select_batch()
        self._wal_append({"event": "select"})
        self.substrategy.update(selection.substrategy)
        scores = self.engine.scores_for(selection.ids)
        for sid, score in zip(selection.ids, scores):
            if sid in self.task_by_sample:
                continue  # one pending task per sample, max
            self._task_counter += 1
            task = LabelTask(
                task_id=f"t{self._task_counter:06d}",
                sample_id=sid,
                spectrogram_uri=f"/spectrogram/{sid}.png",
                audio_uri=f"/audio/{sid}.wav",
                model_score=float(min(max(score, 0.0), 1.0)),
                strategy=selection.substrategy[sid],
                issued_at=self.clock(),
            )
            self.tasks[task.task_id] = task
            self.task_by_sample[sid] = task.task_id
            self.queue.append(task.task_id)

    def _expire_leases(self) -> None:
        now = self.clock()
        for task in self.tasks.values():
            if task.status == "pending" and task.leased_to and task.lease_expiry < now:
                task.leased_to = None
                task.lease_expiry = 0.0

    # -- operations -------------------------------------------------------------

    def get_next_tasks(self, session: str, n: int) -> list[LabelTask]:
        if n < 0:
            raise ValidationError("n must be >= 0")
        with self.lock:
            if self.engine.model is None:
                raise ServiceError("no active run", code="no_active_run")
            self._expire_leases()
            self._refill_queue()
            now = self.clock()
            granted: list[LabelTask] = []
            for tid in list(self.queue):
                if len(granted) >= n:
                    break
                task = self.tasks[tid]
                if task.status != "pending":
                    self.queue.remove(tid)
                    continue
                if task.leased_to and task.lease_expiry >= now:
                    continue
                task.leased_to = session
                task.lease_expiry = now + self.lease_seconds
                granted.append(task)
            return granted

    def submit_label(self, task_id: str, label: str,
                     species: str | None = None,
                     ecotype: str | None = None) -> dict:
        with self.lock:
            task = self.tasks.get(task_id)
            if task is None:
                raise ServiceError(f"unknown task {task_id}", code="unknown_task")
            if task_id in self.acks:
                return self.acks[task_id]  # idempotent duplicate submission
            if task.status == "expired":
                raise ServiceError(f"task {task_id} expired", code="task_expired")
            if label not in ("positive", "negative", "skip"):
                raise ServiceError(f"bad label {label!r}", code="bad_label")

            if label == "skip":
                self._wal_append({"event": "skip", "task_id": task_id,
                                  "sample_id": task.sample_id})
                task.leased_to = None
                task.lease_expiry = 0.0
                if task_id in self.queue:
                    self.queue.remove(task_id)
                self.queue.append(task_id)  # back to the pending tail
                return {"task_id": task_id, "status": "skipped"}

            seq = self._wal_append({
                "event": "label", "task_id": task_id,
                "sample_id": task.sample_id, "label": label,
                "species": species, "ecotype": ecotype,
            })
            selection = BatchSelection(
                ids=[task.sample_id],
                substrategy={task.sample_id: self.substrategy.get(
                    task.sample_id, self.cfg.strategy)})
            self.engine.apply_labels(
                selection,
                {task.sample_id: {"label": label, "species": species,
                                  "ecotype": ecotype}},
                source="human")
            task.status = "submitted"
            if task_id in self.queue:
                self.queue.remove(task_id)
            self.task_by_sample.pop(task.sample_id, None)
            ack = {"task_id": task_id, "status": "accepted", "seq": seq}
            self.acks[task_id] = ack
            return ack

    def trigger_retrain(self) -> dict:
        with self.lock:
            if self.retraining:
                raise ServiceError("retrain already running", code="retrain_busy")
            self.retraining = True
        try:
            with self.lock:
                self._wal_append({"event": "retrain"})
                self.engine.retrain()
                self._snapshot_pool()
                # Ranking changed: pending unleased tasks from the old batch
                # stay valid, but the queue refills lazily on demand.
                return {"status": "completed", "iteration": self.engine.iteration}
        finally:
            self.retraining = False

    def get_run_stats(self) -> dict:
        with self.lock:
            history = [_json_safe(row.__dict__) for row in self.engine.history]
            return {
                "run_id": self.run_id,
                "iteration": self.engine.iteration,
                "is_simulation": self.engine.oracle is not None,
                "dataset_positivity": _json_safe(
                    self.engine.dataset_positivity_constant()),
                "pool_counts": self.engine.pool_counts(),
                "history": history,
            }

    def load_segment(self, sample_id: str):
        if self.audio_dir is None:
            raise ServiceError("no audio directory configured", code="no_audio")
        for ext in (".wav", ".flac"):
            path = self.audio_dir / f"{sample_id}{ext}"
            if path.exists():
                segments = decode(path, sample_id_prefix=sample_id)
                if segments:
                    return segments[0]
        raise ServiceError(f"no audio for {sample_id}", code="not_found")


def replay_wal(records: list[SampleRecord], features: dict, cfg: ALConfig,
               seed: int, wal_path: str | Path) -> ALEngine:
    """Rebuild the exact engine state by re-running the logged command stream."""
    engine = ALEngine(records, features, cfg, seed=seed)
    engine.retrain()
    substrategy: dict[str, str] = {}
    with open(wal_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            event = json.loads(line)
            kind = event["event"]
            if kind == "select":
                selection = engine.select_batch()
                substrategy.update(selection.substrategy)
            elif kind == "label":
                sid = event["sample_id"]
                selection = BatchSelection(
                    ids=[sid],
                    substrategy={sid: substrategy.get(sid, cfg.strategy)})
                engine.apply_labels(
                    selection,
                    {sid: {"label": event["label"],
                           "species": event.get("species"),
                           "ecotype": event.get("ecotype")}},
                    source="human")
            elif kind == "retrain":
                engine.retrain()
            elif kind == "skip":
                continue
            else:
                raise ValidationError(f"unknown WAL event {kind!r}")
    return engine


def create_app(service: CurationService) -> FastAPI:
    app = FastAPI(title="pam-curator", version="0.1.0")
    # The labeling console may be served from another origin (static host).
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    def envelope(payload: dict) -> dict:
        return {"run_id": service.run_id,
                "iteration": service.engine.iteration, **payload}

    def error_response(exc: ServiceError) -> JSONResponse:
        status = {"unknown_task": 404, "not_found": 404, "task_expired": 409,
                  "retrain_busy": 409, "no_active_run": 503}.get(exc.code, 400)
        return JSONResponse(status_code=status,
                            content=envelope({"error": exc.code,
                                              "detail": str(exc)}))

    @app.get("/healthz")
    def healthz():
        return envelope({"status": "ok"})

    @app.get("/vocab")
    def vocab():
        return envelope({"vocab": service.vocab})

    @app.get("/tasks")
    def tasks(n: int = Query(default=1, ge=0, le=500),
              session: str = Query(default="anonymous")):
        try:
            granted = service.get_next_tasks(session, n)
        except ServiceError as exc:
            return error_response(exc)
        return envelope({"tasks": [t.to_dict() for t in granted]})

    @app.post("/labels")
    def labels(body: dict):
        try:
            ack = service.submit_label(
                body.get("task_id", ""), body.get("label", ""),
                species=body.get("species"), ecotype=body.get("ecotype"))
        except ServiceError as exc:
            return error_response(exc)
        return envelope({"ack": ack})

    @app.post("/retrain")
    def retrain():
        try:
            result = service.trigger_retrain()
        except ServiceError as exc:
            return error_response(exc)
        return envelope(result)

    @app.get("/stats")
    def stats():
        return service.get_run_stats()

    @app.get("/spectrogram/{sample_id}.png")
    def spectrogram(sample_id: str, style: str = Query(default="default")):
        try:
            seg = service.load_segment(sample_id)
            png = render_spectrogram_png(seg, style=style)
        except ServiceError as exc:
            return error_response(exc)
        except ValidationError as exc:
            return JSONResponse(status_code=400,
                                content=envelope({"error": "bad_style",
                                                  "detail": str(exc)}))
        return Response(content=png, media_type="image/png")

    @app.get("/audio/{sample_id}.wav")
    def audio(sample_id: str):
        if service.audio_dir is None:
            return error_response(ServiceError("no audio dir", code="no_audio"))
        path = service.audio_dir / f"{sample_id}.wav"
        if not path.exists():
            return error_response(ServiceError("not found", code="not_found"))
        return Response(content=path.read_bytes(), media_type="audio/wav")

    app.state.service = service
    return app
