"""HTTP service exposing saliency inference and brand-box scoring.

The service holds one loaded model and an in-memory store of computed
saliency maps. Scoring always runs against the stored float map, so a
score computed at upload time, a rescore with new boxes, and a CLI run on
the same image agree to float precision. A coarse mass grid rides along in
every score response so browser clients can preview box edits without a
round trip.

Run with:  uvicorn 'brandvis.service:create_app' --factory
"""
from __future__ import annotations

import hashlib
import json
import os
import shlex
import tempfile
import threading
import time
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Form, Response, UploadFile
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__
from .datamodel import BoundingBoxSet, SaliencyMap, save_saliency_map
from .errors import DataError, DetectorError, ModelError
from .model.network import SaliencyModel, load_checkpoint
from .pipeline import GRID_MAX_SIDE, analyze_image, grid_shape, saliency_grid
from .scoring import (
    LogoDetector,
    ScoreConfig,
    SubprocessLogoDetector,
    brand_attention_score,
)
from .textmap import SubprocessTextDetector, TextDetector

DEFAULT_UPLOAD_LIMIT = 16 * 1024 * 1024
RETRY_AFTER_SECONDS = 5


@dataclass(frozen=True)
class ServiceSettings:
    checkpoint_path: Optional[Path] = None
    text_detector_cmd: Optional[tuple[str, ...]] = None
    logo_detector_cmd: Optional[tuple[str, ...]] = None
    workers: int = 2
    upload_limit_bytes: int = DEFAULT_UPLOAD_LIMIT
    grid_max_side: int = GRID_MAX_SIDE


def settings_from_env(environ: Optional[dict[str, str]] = None) -> ServiceSettings:
    """Build settings from BRANDVIS_* environment variables."""
    env = os.environ if environ is None else environ
    checkpoint = env.get("BRANDVIS_CHECKPOINT")
    text_cmd = env.get("BRANDVIS_TEXT_DETECTOR")
    logo_cmd = env.get("BRANDVIS_LOGO_DETECTOR")
    return ServiceSettings(
        checkpoint_path=Path(checkpoint) if checkpoint else None,
        text_detector_cmd=tuple(shlex.split(text_cmd)) if text_cmd else None,
        logo_detector_cmd=tuple(shlex.split(logo_cmd)) if logo_cmd else None,
        workers=int(env.get("BRANDVIS_WORKERS", "2")),
        upload_limit_bytes=int(env.get("BRANDVIS_UPLOAD_LIMIT", str(DEFAULT_UPLOAD_LIMIT))),
    )


_STATUS_ORDER = {"queued": 0, "running": 1, "done": 2, "error": 2}


@dataclass
class JobRecord:
    """Lifecycle bookkeeping for one request: queued -> running -> done|error."""

    id: str
    input_checksum: str
    status: str = "queued"
    created_at: float = field(default_factory=time.time)
    started_at: Optional[float] = None
    finished_at: Optional[float] = None

    def advance(self, status: str) -> None:
        if status not in _STATUS_ORDER:
            raise ValueError(f"unknown job status {status!r}")
        if _STATUS_ORDER[status] <= _STATUS_ORDER[self.status]:
            raise ValueError(f"job status cannot move {self.status} -> {status}")
        self.status = status
        now = time.time()
        if status == "running":
            self.started_at = now
        else:
            self.finished_at = now


@dataclass
class StoredMap:
    saliency: SaliencyMap
    png: bytes
    grid: list[list[float]]


class MapStore:
    """Content-addressed in-memory store of computed saliency maps."""

    def __init__(self, grid_max_side: int) -> None:
        self._maps: dict[str, StoredMap] = {}
        self._lock = threading.Lock()
        self._grid_max_side = grid_max_side

    def put(self, sal: SaliencyMap) -> str:
        with tempfile.NamedTemporaryFile(suffix=".png", delete=False) as f:
            tmp = Path(f.name)
        try:
            save_saliency_map(sal, tmp)
            png = tmp.read_bytes()
        finally:
            tmp.unlink(missing_ok=True)
        ref = "sal_" + hashlib.sha256(png).hexdigest()[:16]
        grid = saliency_grid(sal, self._grid_max_side)
        # keep the advertised invariant airtight against float round-up
        grid = grid / max(1.0, float(grid.sum()))
        with self._lock:
            self._maps[ref] = StoredMap(saliency=sal, png=png, grid=grid.tolist())
        return ref

    def get(self, ref: str) -> Optional[StoredMap]:
        with self._lock:
            return self._maps.get(ref)


class RescoreRequest(BaseModel):
    saliency_png_ref: str
    boxes: dict
    threshold: float = 0.0
    mode: str = "union"
    scale: str = "percent"


def _error(status: int, message: str, headers: Optional[dict[str, str]] = None) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=status, headers=headers)


def _parse_boxes(payload: object, image_size: tuple[int, int]) -> BoundingBoxSet:
    if not isinstance(payload, dict):
        raise DataError('boxes must be a JSON object {"boxes": [...]}')
    boxes = BoundingBoxSet.from_dict(payload)
    h, w = image_size
    for box in boxes:
        box.validate_against(h, w)
    return boxes


def create_app(
    settings: Optional[ServiceSettings] = None,
    model: Optional[SaliencyModel] = None,
    checkpoint_id: Optional[str] = None,
    text_detector: Optional[TextDetector] = None,
    logo_detector: Optional[LogoDetector] = None,
) -> FastAPI:
    """Application factory. Explicit arguments beat settings-derived ones,
    which keeps tests free of temp checkpoints and subprocesses."""
    if settings is None:
        settings = settings_from_env()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        state = app.state
        if state.model is None and settings.checkpoint_path is not None:
            try:
                state.model = load_checkpoint(settings.checkpoint_path)
                state.checkpoint_id = settings.checkpoint_path.stem
            except ModelError as exc:
                state.load_error = str(exc)
        yield

    app = FastAPI(title="brandvis", version=__version__, lifespan=lifespan)
    state = app.state
    state.settings = settings
    state.model = model
    state.checkpoint_id = checkpoint_id or ("inline" if model is not None else None)
    state.load_error = None
    if text_detector is None and settings.text_detector_cmd:
        text_detector = SubprocessTextDetector(settings.text_detector_cmd)
    if logo_detector is None and settings.logo_detector_cmd:
        logo_detector = SubprocessLogoDetector(settings.logo_detector_cmd)
    state.text_detector = text_detector
    state.logo_detector = logo_detector
    state.store = MapStore(settings.grid_max_side)
    state.jobs = {}
    state.jobs_lock = threading.Lock()
    state.inference_slots = threading.BoundedSemaphore(max(1, settings.workers))
    state.active_inferences = 0
    state.peak_inferences = 0
    state.inference_count = 0
    state.counter_lock = threading.Lock()

    def _new_job(checksum: str) -> JobRecord:
        job = JobRecord(id=uuid.uuid4().hex, input_checksum=checksum)
        with state.jobs_lock:
            state.jobs[job.id] = job
        return job

    def _infer(image_path: Path):
        """Bounded-concurrency inference; returns the AnalysisResult."""
        with state.inference_slots:
            with state.counter_lock:
                state.active_inferences += 1
                state.inference_count += 1
                state.peak_inferences = max(state.peak_inferences, state.active_inferences)
            try:
                return analyze_image(state.model, image_path, state.text_detector)
            finally:
                with state.counter_lock:
                    state.active_inferences -= 1

    def _read_upload(file: UploadFile) -> bytes | JSONResponse:
        raw = file.file.read(settings.upload_limit_bytes + 1)
        if len(raw) > settings.upload_limit_bytes:
            return _error(413, f"upload exceeds {settings.upload_limit_bytes} bytes")
        if not raw:
            return _error(400, "empty upload")
        return raw

    def _analyze_upload(raw: bytes, job: JobRecord):
        """Decode, infer, store. Returns (result, ref) or an error response."""
        suffix = ".png"
        with tempfile.NamedTemporaryFile(suffix=suffix, delete=False) as f:
            f.write(raw)
            tmp = Path(f.name)
        try:
            job.advance("running")
            try:
                result = _infer(tmp)
            except DataError as exc:
                job.advance("error")
                return _error(400, f"malformed image: {exc}")
            except DetectorError as exc:
                job.advance("error")
                return _error(502, f"text detector failed: {exc}")
            ref = state.store.put(result.saliency)
            return result, ref
        finally:
            tmp.unlink(missing_ok=True)

    def _model_missing() -> Optional[JSONResponse]:
        if state.model is None:
            detail = state.load_error or "model not loaded"
            return _error(503, detail, headers={"Retry-After": str(RETRY_AFTER_SECONDS)})
        return None

    @app.post("/api/saliency")
    def post_saliency(file: UploadFile):
        missing = _model_missing()
        if missing is not None:
            return missing
        raw = _read_upload(file)
        if isinstance(raw, JSONResponse):
            return raw
        job = _new_job(hashlib.sha256(raw).hexdigest())
        outcome = _analyze_upload(raw, job)
        if isinstance(outcome, JSONResponse):
            return outcome
        result, ref = outcome
        job.advance("done")
        h, w = result.image.original_size
        return {
            "saliency_png_ref": ref,
            "width": w,
            "height": h,
            "checkpoint_id": state.checkpoint_id,
        }

    def _score_payload(stored: StoredMap, boxes: BoundingBoxSet, config: ScoreConfig, ref: str) -> dict:
        score = brand_attention_score(stored.saliency, boxes, config)
        return {
            "score": score,
            "boxes": boxes.to_dict(),
            "saliency_grid": stored.grid,
            "saliency_png_ref": ref,
        }

    @app.post("/api/score")
    def post_score(
        file: UploadFile,
        boxes: Optional[str] = Form(None),
        threshold: float = Form(0.0),
        mode: str = Form("union"),
        scale: str = Form("percent"),
    ):
        missing = _model_missing()
        if missing is not None:
            return missing
        raw = _read_upload(file)
        if isinstance(raw, JSONResponse):
            return raw
        try:
            config = ScoreConfig(threshold=threshold, mode=mode, scale=scale)
        except DataError as exc:
            return _error(422, str(exc))

        job = _new_job(hashlib.sha256(raw).hexdigest())
        outcome = _analyze_upload(raw, job)
        if isinstance(outcome, JSONResponse):
            return outcome
        result, ref = outcome
        image_size = result.image.original_size

        if boxes is not None:
            try:
                box_payload = json.loads(boxes)
            except json.JSONDecodeError as exc:
                job.advance("error")
                return _error(422, f"boxes field is not JSON: {exc}")
            try:
                box_set = _parse_boxes(box_payload, image_size)
            except DataError as exc:
                job.advance("error")
                return _error(422, str(exc))
        else:
            if state.logo_detector is None:
                job.advance("error")
                return _error(502, "no boxes given and no logo detector configured")
            with tempfile.NamedTemporaryFile(suffix=".png", delete=False) as f:
                f.write(raw)
                tmp = Path(f.name)
            try:
                box_set = state.logo_detector.detect(tmp)
            except DetectorError as exc:
                job.advance("error")
                return _error(502, f"logo detector failed: {exc}")
            finally:
                tmp.unlink(missing_ok=True)
            try:
                for box in box_set:
                    box.validate_against(*image_size)
            except DataError as exc:
                job.advance("error")
                return _error(502, f"logo detector returned out-of-frame boxes: {exc}")

        stored = state.store.get(ref)
        try:
            payload = _score_payload(stored, box_set, config, ref)
        except DataError as exc:
            job.advance("error")
            return _error(422, str(exc))
        job.advance("done")
        return payload

    @app.post("/api/rescore")
    def post_rescore(req: RescoreRequest):
        stored = state.store.get(req.saliency_png_ref)
        if stored is None:
            return _error(404, f"unknown saliency reference {req.saliency_png_ref}")
        try:
            config = ScoreConfig(threshold=req.threshold, mode=req.mode, scale=req.scale)
            box_set = _parse_boxes(req.boxes, stored.saliency.data.shape)
            return _score_payload(stored, box_set, config, req.saliency_png_ref)
        except DataError as exc:
            return _error(422, str(exc))

    @app.get("/api/saliency/{ref}")
    def get_saliency(ref: str):
        stored = state.store.get(ref)
        if stored is None:
            return _error(404, f"unknown saliency reference {ref}")
        return Response(content=stored.png, media_type="image/png")

    @app.get("/api/health")
    def health():
        return {
            "status": "ok" if state.model is not None else "model_not_loaded",
            "checkpoint_id": state.checkpoint_id,
            "text_detector": state.text_detector is not None,
            "logo_detector": state.logo_detector is not None,
            "version": __version__,
        }

    return app
