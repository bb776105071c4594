"""HTTP surface of the pipeline, versioned under /api/v1.

Error contract: {"error": {"code", "message"}} with 400 for payloads that
break a named invariant, 404 for unknown ids, 409 for requests that need a
different workspace/job state, 503 when an external backend is down. Every
mutating endpoint honors an Idempotency-Key header: the first response is
recorded and replayed verbatim for retries with the same key.
"""

import base64
import io
import mimetypes
import os
import uuid
import warnings as _warnings
from typing import Optional

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse
from PIL import Image
from pydantic import BaseModel, Field

from .. import errors as E
from ..apcam import CAM_METHODS, CamConfig, ap_mask_for, compute_cam, threshold_to_mask
from ..classifier import predict_proba
from ..evalreport import (
    RedesignSession,
    aggregate,
    append_session,
    load_sessions,
    score_session,
    write_report_csv,
    write_report_json,
)
from ..inpaint import (
    InpaintRequest,
    MockBackend,
    HttpBackend,
    image_to_png_bytes,
    inpaint,
    prompt_catalog,
    prompt_for,
)
from ..maskkit import (
    BinaryMask,
    ScribbleSet,
    mask_to_png_bytes,
    rasterize_scribbles,
)
from ..saliency import SaliencyConfig, ap_saliency_ratio, salient_region
from .jobs import IllegalJobTransition, JobQueue
from .workspace import (
    DatasetMissing,
    ModelNotTrained,
    UnknownImage,
    UnknownJob,
    UnknownMask,
    UnknownSession,
    Workspace,
)

API_PREFIX = "/api/v1"

_STATUS_BY_ERROR = {
    # 400: the payload itself violates a named invariant
    E.GeometryMismatch: 400,
    E.InvalidMaskImage: 400,
    E.DimensionMismatch: 400,
    E.MalformedCsv: 400,
    E.SchemaMismatch: 400,
    # 404: id does not resolve
    UnknownImage: 404,
    UnknownMask: 404,
    UnknownJob: 404,
    UnknownSession: 404,
    E.MissingCandidate: 404,
    E.NoScoredSessions: 404,
    E.FixtureMissing: 404,
    E.NoImageryAtLocation: 404,
    # 409: valid request, wrong state
    IllegalJobTransition: 409,
    ModelNotTrained: 409,
    DatasetMissing: 409,
    E.EmptyApMask: 409,
    E.EmptyDataset: 409,
    E.SingleClassDataset: 409,
    # 503: an external dependency is down
    E.BackendUnavailable: 503,
    E.BackendTimeout: 503,
    E.AdapterUnavailable: 503,
    E.ProviderQuotaExceeded: 503,
    E.NetworkFailure: 503,
}


def _status_for(exc: E.RoadRedesignError) -> int:
    for klass, status in _STATUS_BY_ERROR.items():
        if isinstance(exc, klass):
            return status
    return 500


class ScribbleStrokeModel(BaseModel):
    points: list = Field(min_length=1)
    radius: float = Field(gt=0)
    mode: str = "paint"


class ScribblePayload(BaseModel):
    strokes: list[ScribbleStrokeModel] = Field(min_length=1)


class InpaintPayload(BaseModel):
    image_id: str
    mask_id: str
    design_name: Optional[str] = None
    prompt: Optional[str] = None
    cfg_scale: Optional[float] = None
    denoise_strength: Optional[float] = None
    seed: int = 0
    sampler_name: Optional[str] = None
    n_candidates: Optional[int] = None


class SelectPayload(BaseModel):
    candidate_id: str


def _b64png(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _heatmap_png(heatmap: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray((np.clip(heatmap, 0, 1) * 255).astype(np.uint8), mode="L").save(
        buf, format="PNG"
    )
    return buf.getvalue()


def default_inpaint_backend():
    url = os.environ.get("INPAINT_BACKEND_URL", "").strip()
    if url:
        return HttpBackend(url)
    return MockBackend()


def default_saliency_config(workspace: Workspace) -> SaliencyConfig:
    cfg = workspace.config.get("saliency", {})
    url = os.environ.get("SALIENCY_BACKEND_URL", "").strip()
    if url:
        return SaliencyConfig(mode="external", endpoint=url, k=cfg.get("k", 1.0))
    return SaliencyConfig(mode=cfg.get("mode", "builtin"), k=cfg.get("k", 1.0))


def create_app(
    workspace: Workspace,
    inpaint_backend=None,
    console_dir: Optional[str] = None,
) -> FastAPI:
    app = FastAPI(title="road redesign gateway", docs_url=None, redoc_url=None)
    backend = inpaint_backend or default_inpaint_backend()

    def run_inpaint_job(job):
        payload = job.payload
        image = workspace.image_array(payload["image_id"])
        mask = workspace.load_mask(payload["mask_id"])
        request = InpaintRequest(
            image_id=payload["image_id"],
            mask=mask,
            prompt=payload["prompt_text"],
            cfg_scale=payload["cfg_scale"],
            denoise_strength=payload["denoise_strength"],
            seed=payload["seed"],
            sampler_name=payload["sampler_name"],
            n_candidates=payload["n_candidates"],
        )
        with _warnings.catch_warnings():
            _warnings.simplefilter("ignore")  # band notes already returned at submit
            result = inpaint(image, request, backend)
        out_dir = workspace.candidates_dir(job.job_id)
        out_dir.mkdir(parents=True, exist_ok=True)
        candidate_ids = []
        for i, candidate in enumerate(result.candidates):
            candidate_id = f"{job.job_id}-c{i}"
            (out_dir / f"{candidate_id}.png").write_bytes(image_to_png_bytes(candidate))
            candidate_ids.append(candidate_id)
        return {
            "candidate_ids": candidate_ids,
            "seeds": result.seeds,
            "backend": result.backend_name,
            "warnings": result.warnings,
            "session_id": payload["session_id"],
        }

    jobs = JobQueue(workspace, handlers={"inpaint": run_inpaint_job})
    jobs.start()
    app.state.workspace = workspace
    app.state.jobs = jobs

    # ----- error handling ---------------------------------------------------

    @app.exception_handler(E.RoadRedesignError)
    async def domain_error(_req, exc: E.RoadRedesignError):
        return JSONResponse(
            status_code=_status_for(exc),
            content={"error": {"code": exc.code, "message": str(exc)}},
        )

    @app.exception_handler(ValueError)
    async def invariant_error(_req, exc: ValueError):
        return JSONResponse(
            status_code=400,
            content={"error": {"code": "INVALID_PAYLOAD", "message": str(exc)}},
        )

    @app.exception_handler(RequestValidationError)
    async def payload_error(_req, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        where = ".".join(str(p) for p in first.get("loc", ()))
        message = f"{where}: {first.get('msg', 'invalid payload')}"
        return JSONResponse(
            status_code=400,
            content={"error": {"code": "INVALID_PAYLOAD", "message": message}},
        )

    # ----- idempotency -------------------------------------------------------

    def replay_or_run(request: Request, scope: str, produce):
        key = request.headers.get("Idempotency-Key")
        if key:
            stored = workspace.idempotency_lookup(scope, key)
            if stored is not None:
                return JSONResponse(status_code=stored["status"], content=stored["body"])
        body = produce()
        if key:
            workspace.idempotency_store(scope, key, {"status": 200, "body": body})
        return JSONResponse(status_code=200, content=body)

    # ----- probability cache ---------------------------------------------------

    prob_cache: dict = {}

    def p_hotspot(image_id: str) -> Optional[float]:
        try:
            model = workspace.model()
        except ModelNotTrained:
            return None
        cache_key = (image_id, workspace.model_path.stat().st_mtime_ns)
        if cache_key not in prob_cache:
            prob_cache[cache_key] = float(
                predict_proba(model, workspace.image_array(image_id))
            )
        return prob_cache[cache_key]

    # ----- endpoints ----------------------------------------------------------

    @app.get(API_PREFIX + "/health")
    def health():
        return {"status": "ok"}

    @app.get(API_PREFIX + "/images")
    def list_images(
        label: Optional[str] = None,
        page: int = Query(1, ge=1),
        page_size: int = Query(20, ge=1, le=100),
    ):
        records = workspace.manifest().records
        if label is not None:
            records = [r for r in records if r.label == label]
        total = len(records)
        start = (page - 1) * page_size
        items = []
        for record in records[start : start + page_size]:
            row = {
                "image_id": record.image_id,
                "latitude": record.latitude,
                "longitude": record.longitude,
                "heading": record.heading,
                "label": record.label,
                "source": record.source,
                "p_hotspot": p_hotspot(record.image_id),
            }
            items.append(row)
        return {"items": items, "page": page, "page_size": page_size, "total": total}

    @app.get(API_PREFIX + "/images/{image_id}")
    def get_image(image_id: str):
        record = workspace.record(image_id)
        return {
            "image_id": record.image_id,
            "latitude": record.latitude,
            "longitude": record.longitude,
            "heading": record.heading,
            "label": record.label,
            "source": record.source,
            "p_hotspot": p_hotspot(record.image_id),
        }

    @app.get(API_PREFIX + "/images/{image_id}/file")
    def get_image_file(image_id: str):
        record = workspace.record(image_id)
        path = workspace.root / record.file_path
        media = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        return FileResponse(path, media_type=media)

    @app.get(API_PREFIX + "/images/{image_id}/cam")
    def get_cam(
        image_id: str,
        method: str = "gradcam",
        threshold: float = Query(0.5, ge=0.0, le=1.0),
        min_area: int = Query(0, ge=0),
    ):
        config = CamConfig(method=method, threshold=threshold, min_area=min_area)
        model = workspace.model()
        image = workspace.image_array(image_id)
        result = compute_cam(model, image, method=config.method)
        # CAM runs at model input resolution; serve masks in image geometry.
        heat = np.asarray(
            Image.fromarray((np.clip(result.heatmap, 0, 1) * 255).astype(np.uint8)).resize(
                (image.shape[1], image.shape[0]), Image.BILINEAR
            ),
            dtype=np.uint8,
        )
        ap = threshold_to_mask(heat.astype(np.float64) / 255.0, threshold, min_area)
        return {
            "image_id": image_id,
            "method": method,
            "threshold": threshold,
            "probability": result.probability,
            "heatmap_png": _b64png(_heatmap_png(heat.astype(np.float64) / 255.0)),
            "ap_mask_png": _b64png(mask_to_png_bytes(ap)),
        }

    @app.post(API_PREFIX + "/images/{image_id}/mask")
    def post_mask(image_id: str, payload: ScribblePayload, request: Request):
        record = workspace.record(image_id)

        def produce():
            image = workspace.image_array(record.image_id)
            scribbles = ScribbleSet.from_json(payload.model_dump())
            mask = rasterize_scribbles(scribbles, (image.shape[1], image.shape[0]))
            mask_id = workspace.store_mask(mask, record.image_id)
            return {
                "mask_id": mask_id,
                "image_id": record.image_id,
                "area": int(mask.bits.sum()),
            }

        return replay_or_run(request, f"mask:{image_id}", produce)

    @app.get(API_PREFIX + "/masks/{mask_id}")
    def get_mask(mask_id: str):
        return FileResponse(workspace.mask_path(mask_id), media_type="image/png")

    @app.get(API_PREFIX + "/prompts")
    def get_prompts():
        items = [
            {
                "design_name": p.design_name,
                "subject_word": p.subject_word,
                "class_prompt": p.class_prompt,
                "full_prompt": p.full_prompt(),
            }
            for p in prompt_catalog()
        ]
        return {"items": items}

    @app.post(API_PREFIX + "/inpaint")
    def post_inpaint(payload: InpaintPayload, request: Request):
        record = workspace.record(payload.image_id)
        mask = workspace.load_mask(payload.mask_id)
        image = workspace.image_array(record.image_id)
        if mask.shape != image.shape[:2]:
            raise E.GeometryMismatch(
                f"mask {mask.shape} does not match image {image.shape[:2]}"
            )
        if payload.design_name:
            prompt_text = prompt_for(payload.design_name).full_prompt()
        elif payload.prompt:
            prompt_text = payload.prompt
        else:
            raise ValueError("either design_name or prompt is required")
        defaults = workspace.config["inpaint"]
        inpaint_request = InpaintRequest(
            image_id=payload.image_id,
            mask=mask,
            prompt=prompt_text,
            cfg_scale=payload.cfg_scale if payload.cfg_scale is not None
            else defaults["cfg_scale"],
            denoise_strength=payload.denoise_strength if payload.denoise_strength is not None
            else defaults["denoise_strength"],
            seed=payload.seed,
            sampler_name=payload.sampler_name or defaults["sampler_name"],
            n_candidates=payload.n_candidates or defaults["n_candidates"],
        )
        with _warnings.catch_warnings(record=True):
            _warnings.simplefilter("always")
            notes = inpaint_request.validate()

        def produce():
            session_id = f"s-{uuid.uuid4().hex[:12]}"
            job = jobs.submit(
                "inpaint",
                {
                    "image_id": payload.image_id,
                    "mask_id": payload.mask_id,
                    "prompt_text": prompt_text,
                    "cfg_scale": inpaint_request.cfg_scale,
                    "denoise_strength": inpaint_request.denoise_strength,
                    "seed": inpaint_request.seed,
                    "sampler_name": inpaint_request.sampler_name,
                    "n_candidates": inpaint_request.n_candidates,
                    "session_id": session_id,
                },
            )
            session = RedesignSession(
                session_id=session_id,
                image_id=payload.image_id,
                cam=workspace.config["cam"],
                mask_id=payload.mask_id,
                inpaint={
                    "job_id": job.job_id,
                    "prompt": prompt_text,
                    "cfg_scale": inpaint_request.cfg_scale,
                    "denoise_strength": inpaint_request.denoise_strength,
                    "seed": inpaint_request.seed,
                    "sampler_name": inpaint_request.sampler_name,
                    "n_candidates": inpaint_request.n_candidates,
                },
            )
            append_session(session, workspace.sessions_path)
            return {"job_id": job.job_id, "session_id": session_id, "warnings": notes}

        return replay_or_run(request, "inpaint", produce)

    @app.get(API_PREFIX + "/jobs/{job_id}")
    def get_job(job_id: str):
        return jobs.get(job_id).to_dict()

    @app.get(API_PREFIX + "/jobs/{job_id}/candidates")
    def get_candidates(job_id: str):
        job = jobs.get(job_id)
        if job.state != "done":
            raise IllegalJobTransition(
                f"job {job_id} is {job.state}; candidates exist only once done"
            )
        items = []
        for candidate_id in job.result["candidate_ids"]:
            path = workspace.candidate_path(job_id, candidate_id)
            items.append({"candidate_id": candidate_id, "png": _b64png(path.read_bytes())})
        return {"items": items, "job_id": job_id, "seeds": job.result["seeds"]}

    @app.post(API_PREFIX + "/sessions/{session_id}/select")
    def select_candidate(session_id: str, payload: SelectPayload, request: Request):
        sessions = {
            s.session_id: s for s in load_sessions(workspace.sessions_path)
        }
        if session_id not in sessions:
            raise UnknownSession(f"unknown session_id {session_id!r}")
        session = sessions[session_id]
        job_id = session.inpaint["job_id"]
        candidate_path = workspace.candidate_path(job_id, payload.candidate_id)
        if not candidate_path.exists():
            raise E.MissingCandidate(
                f"candidate {payload.candidate_id!r} does not belong to session {session_id}"
            )
        model = workspace.model()

        def produce():
            selected = RedesignSession(
                **{
                    **session.to_dict(),
                    "chosen_candidate_id": payload.candidate_id,
                }
            )
            record = workspace.record(session.image_id)
            scored = score_session(
                model,
                selected,
                workspace.root / record.file_path,
                candidate_path,
            )
            append_session(scored, workspace.sessions_path)
            return scored.to_dict()

        return replay_or_run(request, f"select:{session_id}", produce)

    @app.get(API_PREFIX + "/sessions/{session_id}")
    def get_session(session_id: str):
        for session in load_sessions(workspace.sessions_path):
            if session.session_id == session_id:
                return session.to_dict()
        raise UnknownSession(f"unknown session_id {session_id!r}")

    @app.get(API_PREFIX + "/reports/latest")
    def latest_report():
        scored = [s for s in load_sessions(workspace.sessions_path) if s.scored]
        report = aggregate(scored, model_identity=workspace.model_identity())
        write_report_json(report, workspace.reports_dir / "latest.json")
        write_report_csv(report, workspace.reports_dir / "latest.csv")
        return report.to_dict()

    @app.get(API_PREFIX + "/saliency/{image_id}")
    def get_saliency(
        image_id: str,
        method: str = "gradcam",
        threshold: float = Query(0.5, ge=0.0, le=1.0),
    ):
        model = workspace.model()
        image = workspace.image_array(image_id)
        config = CamConfig(method=method, threshold=threshold)
        region = salient_region(
            image, default_saliency_config(workspace), image_id=image_id
        )
        # AP mask at input scale, resized to image geometry for the overlap.
        cam = compute_cam(model, image, method=config.method)
        heat = np.asarray(
            Image.fromarray((np.clip(cam.heatmap, 0, 1) * 255).astype(np.uint8)).resize(
                (image.shape[1], image.shape[0]), Image.BILINEAR
            ),
            dtype=np.float64,
        ) / 255.0
        ap = threshold_to_mask(heat, threshold)
        body = {
            "image_id": image_id,
            "source": region.source,
            "salient_png": _b64png(mask_to_png_bytes(region.mask)),
            "ap_mask_png": _b64png(mask_to_png_bytes(ap)),
        }
        try:
            body["ratio"] = ap_saliency_ratio(region.mask, ap)
            body["reason"] = None
        except E.EmptyApMask:
            body["ratio"] = None
            body["reason"] = "EMPTY_AP_MASK"
        return body

    # ----- static console ------------------------------------------------------

    if console_dir and os.path.isdir(console_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=console_dir, html=True), name="console")

    return app
