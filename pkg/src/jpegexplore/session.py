"""Editing sessions: persistent state, history, and background tool jobs.

A session directory holds the compressed code, every latent snapshot the
history references (raw little-endian float64, so reloads are bit-exact),
uploaded masks and target images, and a JSON manifest tying it together.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import image_io, jfif
from .codec import CompressedImage, encode_pipeline
from .consistency import (ConsistentImage, LatentField, reconstruct,
                          verify_consistency)
from .errors import InvalidParameterError, JpegExploreError
from .optimizer import diverse_alternatives, explore_classes, optimize
from .toolspec import JobRequest, build_objectives

PREVIEW_MAX_PIXELS = 1_000_000


class SessionBusyError(JpegExploreError):
    """A job is already running on this session."""


class NotFoundError(JpegExploreError):
    """Unknown session, mask, target, or job id."""


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


def latent_to_bytes(latent: LatentField) -> bytes:
    return b"".join(arr.astype("<f8").tobytes() for arr in latent.arrays())


def latent_from_bytes(data: bytes, code: CompressedImage) -> LatentField:
    shapes = [code.luma.grid + (64,)]
    if code.is_color:
        shapes += [code.cb.grid + (64,), code.cr.grid + (64,)]
    arrays = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<f8", count=count,
                                    offset=offset).reshape(shape).copy())
        offset += count * 8
    return LatentField(*arrays) if code.is_color else LatentField(arrays[0])


@dataclass
class HistoryEntry:
    snapshot: str  # latent file name
    label: str


class Session:
    def __init__(self, session_id: str, root: Path, code: CompressedImage):
        self.id = session_id
        self.root = root
        self.code = code
        self.latent = LatentField.neutral(code)
        self.history: list[HistoryEntry] = []
        self.cursor = -1
        self.masks: dict[str, np.ndarray] = {}
        self.targets: dict[str, np.ndarray] = {}
        self.created = _now()
        self.modified = self.created
        self.lock = threading.Lock()
        self.active_job: Optional[str] = None
        self._snapshot_counter = 0

    # --- persistence -----------------------------------------------------
    def _next_snapshot_name(self) -> str:
        name = f"latent_{self._snapshot_counter:04d}.bin"
        self._snapshot_counter += 1
        return name

    def save_snapshot(self, latent: LatentField, label: str) -> HistoryEntry:
        name = self._next_snapshot_name()
        (self.root / "latents").mkdir(exist_ok=True)
        (self.root / "latents" / name).write_bytes(latent_to_bytes(latent))
        return HistoryEntry(name, label)

    def load_snapshot(self, entry: HistoryEntry) -> LatentField:
        data = (self.root / "latents" / entry.snapshot).read_bytes()
        return latent_from_bytes(data, self.code)

    def write_manifest(self) -> None:
        self.modified = _now()
        manifest = {
            "id": self.id,
            "created": self.created,
            "modified": self.modified,
            "code": "code.jfif",
            "snapshot_counter": self._snapshot_counter,
            "cursor": self.cursor,
            "history": [{"snapshot": e.snapshot, "label": e.label}
                        for e in self.history],
            "masks": sorted(self.masks),
            "targets": sorted(self.targets),
        }
        tmp = self.root / "manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=1))
        tmp.replace(self.root / "manifest.json")

    # --- state transitions -------------------------------------------------
    def push(self, latent: LatentField, label: str) -> None:
        """Commit a new current latent, truncating any redo tail."""
        entry = self.save_snapshot(latent, label)
        del self.history[self.cursor + 1:]
        self.history.append(entry)
        self.cursor = len(self.history) - 1
        self.latent = latent
        self.write_manifest()

    def undo(self) -> bool:
        if self.cursor <= 0:
            return False
        self.cursor -= 1
        self.latent = self.load_snapshot(self.history[self.cursor])
        self.write_manifest()
        return True

    def redo(self) -> bool:
        if self.cursor >= len(self.history) - 1:
            return False
        self.cursor += 1
        self.latent = self.load_snapshot(self.history[self.cursor])
        self.write_manifest()
        return True

    def add_mask(self, name: str, mask: np.ndarray) -> None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != (self.code.height, self.code.width):
            raise InvalidParameterError(
                f"mask {mask.shape} does not match image "
                f"{(self.code.height, self.code.width)}")
        if not np.any(mask > 0):
            raise InvalidParameterError("mask has no positive weights")
        # masks are 8-bit by contract; quantize now so reloads are identical
        mask = np.clip(np.floor(mask * 255.0 + 0.5), 0, 255) / 255.0
        self.masks[name] = mask
        (self.root / "masks").mkdir(exist_ok=True)
        image_io.write_png((mask * 255.0), self.root / "masks" / f"{name}.png")
        self.write_manifest()

    def add_target(self, name: str, image: np.ndarray) -> None:
        self.targets[name] = np.asarray(image, dtype=np.float64)
        (self.root / "targets").mkdir(exist_ok=True)
        image_io.write_png(image, self.root / "targets" / f"{name}.png")
        self.write_manifest()

    def resolve_mask(self, name: Optional[str]) -> np.ndarray:
        if name is None:
            return np.ones((self.code.height, self.code.width))
        if name not in self.masks:
            raise NotFoundError(f"unknown mask {name!r}")
        return self.masks[name]

    def resolve_target(self, name: str) -> np.ndarray:
        if name not in self.targets:
            raise NotFoundError(f"unknown target image {name!r}")
        return self.targets[name]

    # --- views ----------------------------------------------------------
    def current_output(self) -> ConsistentImage:
        return reconstruct(self.code, self.latent)

    def info(self) -> dict:
        return {
            "id": self.id,
            "width": self.code.width,
            "height": self.code.height,
            "color": self.code.is_color,
            "sampling": self.code.sampling,
            "created": self.created,
            "modified": self.modified,
            "history_length": len(self.history),
            "cursor": self.cursor,
            "history": [e.label for e in self.history],
            "masks": sorted(self.masks),
            "targets": sorted(self.targets),
            "busy": self.active_job is not None,
        }


def preview_png(image: ConsistentImage) -> bytes:
    """Current pixels as PNG, downscaled when above the preview budget."""
    pixels = image.to_uint8()
    h, w = pixels.shape[:2]
    if h * w > PREVIEW_MAX_PIXELS:
        step = int(np.ceil(np.sqrt(h * w / PREVIEW_MAX_PIXELS)))
        pixels = pixels[::step, ::step]
    return image_io.write_png(pixels)


@dataclass
class Job:
    id: str
    session_id: str
    kind: str
    status: str = "queued"  # queued | running | done | cancelled | error
    error: Optional[str] = None
    trace: list = field(default_factory=list)
    preview: Optional[bytes] = None
    results: list = field(default_factory=list)  # gallery latents/scores
    cancel_requested: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)

    def public_state(self) -> dict:
        with self.lock:
            return {
                "id": self.id,
                "session": self.session_id,
                "kind": self.kind,
                "status": self.status,
                "error": self.error,
                "trace": list(self.trace),
                "has_preview": self.preview is not None,
                "results": [{"index": i, "score": r.get("score")}
                            for i, r in enumerate(self.results)],
            }


class SessionStore:
    """Directory-backed store; sessions reload bit-exactly across restarts."""

    def __init__(self, root, max_workers: int = 2):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, Session] = {}
        self.jobs: dict[str, Job] = {}
        self.lock = threading.Lock()
        self.executor = ThreadPoolExecutor(max_workers=max_workers)

    # --- creation / loading ----------------------------------------------
    def create_from_bytes(self, data: bytes, qf: Optional[int] = None,
                          sampling: str = "4:2:0") -> Session:
        if data[:2] == b"\xff\xd8":
            code = jfif.parse_jfif(data)
        else:
            if qf is None:
                raise InvalidParameterError(
                    "uncompressed upload needs a quality factor")
            img = image_io.load_image_bytes(data)
            code = encode_pipeline(img, qf, sampling)
        session_id = uuid.uuid4().hex[:12]
        root = self.root / session_id
        root.mkdir()
        (root / "code.jfif").write_bytes(jfif.serialize_jfif(code))
        session = Session(session_id, root, code)
        session.push(LatentField.neutral(code), "initial decode")
        with self.lock:
            self.sessions[session_id] = session
        return session

    def _load(self, session_id: str) -> Session:
        root = self.root / session_id
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise NotFoundError(f"unknown session {session_id!r}")
        manifest = json.loads(manifest_path.read_text())
        code = jfif.parse_jfif((root / manifest["code"]).read_bytes())
        session = Session(session_id, root, code)
        session.created = manifest["created"]
        session.modified = manifest["modified"]
        session._snapshot_counter = manifest["snapshot_counter"]
        session.history = [HistoryEntry(e["snapshot"], e["label"])
                           for e in manifest["history"]]
        session.cursor = manifest["cursor"]
        if session.history:
            session.latent = session.load_snapshot(session.history[session.cursor])
        for name in manifest["masks"]:
            mask = image_io.load_image(root / "masks" / f"{name}.png")
            session.masks[name] = mask.astype(np.float64) / 255.0
        for name in manifest["targets"]:
            session.targets[name] = image_io.load_image(
                root / "targets" / f"{name}.png").astype(np.float64)
        return session

    def get(self, session_id: str) -> Session:
        with self.lock:
            if session_id not in self.sessions:
                self.sessions[session_id] = self._load(session_id)
            return self.sessions[session_id]

    def get_job(self, job_id: str) -> Job:
        with self.lock:
            if job_id not in self.jobs:
                raise NotFoundError(f"unknown job {job_id!r}")
            return self.jobs[job_id]

    # --- job running -------------------------------------------------------
    def start_job(self, session_id: str, request: JobRequest) -> Job:
        session = self.get(session_id)
        with session.lock:
            if session.active_job is not None:
                raise SessionBusyError(f"session {session_id} has a running job")
            job = Job(uuid.uuid4().hex[:12], session_id,
                      kind=request.objectives[0].type)
            session.active_job = job.id
        with self.lock:
            self.jobs[job.id] = job
        self.executor.submit(self._run_job, session, job, request)
        return job

    def _run_job(self, session: Session, job: Job, request: JobRequest) -> None:
        try:
            with job.lock:
                job.status = "running"
            self._execute(session, job, request)
        except Exception as exc:  # surfaced through the job state
            with job.lock:
                job.status = "error"
                job.error = f"{type(exc).__name__}: {exc}"
        finally:
            with session.lock:
                session.active_job = None

    def _execute(self, session: Session, job: Job, request: JobRequest) -> None:
        code = session.code
        latent = session.latent
        mask = session.resolve_mask(request.mask)
        config = request.config.to_config()
        tool = request.objectives[0]
        preview_every = max(1, config.steps // 10)

        def callback(step, value, image):
            with job.lock:
                job.trace.append(value)
                if step % preview_every == 0:
                    job.preview = preview_png(image)
                cancelled = job.cancel_requested
            return not cancelled

        if tool.type == "diversity":
            outputs = diverse_alternatives(code, latent, mask, tool.count,
                                           tool.proximity_weight, config)
            with job.lock:
                job.results = [{"latent": o.latent, "preview": preview_png(o),
                                "score": None} for o in outputs]
                job.status = "done"
        elif tool.type == "explore_classes":
            results = explore_classes(code, latent, mask, tool.hook,
                                      tool.classes, config)
            with job.lock:
                job.results = [{"latent": out.latent, "preview": preview_png(out),
                                "score": score, "class_index": d}
                               for d, out, score in results]
                job.status = "done"
        else:
            x0 = reconstruct(code, latent).pixels(clamp=False)
            objectives = build_objectives(
                request.objectives, code, x0, mask,
                resolve_image=session.resolve_target,
                resolve_mask=session.resolve_mask)
            new_latent, trace = optimize(code, latent, objectives, mask,
                                         config, callback)
            with job.lock:
                cancelled = job.cancel_requested
            if cancelled:
                with job.lock:
                    job.status = "cancelled"
                return
            with session.lock:
                session.push(new_latent, f"{tool.type} tool")
            with job.lock:
                job.preview = preview_png(session.current_output())
                job.status = "done"

    def cancel_job(self, job_id: str) -> None:
        job = self.get_job(job_id)
        with job.lock:
            job.cancel_requested = True
            if job.status == "queued":
                job.status = "cancelled"

    def adopt_result(self, session_id: str, job_id: str, index: int) -> None:
        session = self.get(session_id)
        job = self.get_job(job_id)
        with job.lock:
            if job.status != "done" or not job.results:
                raise InvalidParameterError("job has no adoptable results")
            if not 0 <= index < len(job.results):
                raise InvalidParameterError(f"result index {index} out of range")
            latent = job.results[index]["latent"]
        with session.lock:
            if session.active_job is not None:
                raise SessionBusyError("session busy")
            session.push(latent.copy(), f"adopted {job.kind} result {index}")

    # --- export ------------------------------------------------------------
    def export(self, session_id: str, fmt: str):
        session = self.get(session_id)
        output = session.current_output()
        report = verify_consistency(output, session.code, mode="dct-exact")
        if fmt == "jfif":
            payload = jfif.serialize_jfif(session.code)
            media = "image/jpeg"
        elif fmt == "png":
            payload = image_io.write_png(output.to_uint8())
            media = "image/png"
        elif fmt == "ppm":
            payload = image_io.write_pnm(output.to_uint8())
            media = "image/x-portable-anymap"
        else:
            raise InvalidParameterError(f"unknown export format {fmt!r}")
        return payload, media, report
