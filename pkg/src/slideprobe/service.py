"""HTTP facade over the workbench: slides, tiles, scoring, sweeps,
verdicts, explanations and async evaluation jobs.

The service adds no computation of its own; every response equals the
corresponding in-process library call. Evaluations run as background
jobs polled by id, serialized per dataset.
"""

from __future__ import annotations

import hashlib
import json
import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, File, Form, Request, Response, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import fixtures
from .backend import RemoteBackend, ToyBackend
from .errors import (
    BackendError,
    ConcurrentIngestError,
    DegenerateStainError,
    EvalAborted,
    IngestError,
    NoTissueError,
    NotFound,
    OutOfBounds,
    ProtocolError,
    SlideprobeError,
    ValidationError,
    VlmError,
)
from .evaluate import (
    DEFAULT_N_BOOT,
    DEFAULT_THRESHOLDS,
    EvalDataset,
    Explanation,
    ExplanationStore,
    comparison_markdown,
)
from .pyramid import DEFAULT_PATCH_MPP, DEFAULT_PATCH_SIZE, SlideStore
from .stain import DEFAULT_REFERENCE, normalize_patch
from .sweeps import ExperimentStore, SweepRequest, Verdict, run_sweep, trace_to_csv
from .vlm import VlmConfig, VlmGateway


# -- request/response models -------------------------------------------------

class ScoreRequest(BaseModel):
    center_x0: float
    center_y0: float
    size_px: int = DEFAULT_PATCH_SIZE
    target_mpp: float = DEFAULT_PATCH_MPP


class SweepRequestModel(BaseModel):
    anchor_x0: float
    anchor_y0: float
    direction: tuple[float, float]
    stride_px: float
    steps: int
    size_px: int = DEFAULT_PATCH_SIZE
    target_mpp: float = DEFAULT_PATCH_MPP
    explanation_id: str | None = None


class VerdictModel(BaseModel):
    trace_id: str
    explanation_id: str
    component_label: str
    outcome: str
    note: str = ""
    author: str = ""


class ExplanationModel(BaseModel):
    id: str
    name: str
    text: str
    criteria_notes: str = ""


class VlmConfigModel(BaseModel):
    backend: str = "mock"
    endpoint: str = ""
    model_name: str = ""
    temperature: float = 0.0
    max_retries: int = 3
    timeout_s: float = 60.0
    rate_limit_per_min: int | None = None
    api_key_env: str = "VLM_API_KEY"
    mock_seed: int = 0


class EvaluationRequest(BaseModel):
    dataset_id: str
    explanation_ids: list[str]
    thresholds: list[float] = Field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    n_boot: int = DEFAULT_N_BOOT
    seed: int = 0
    center_at_median: bool = False
    vlm: VlmConfigModel = Field(default_factory=VlmConfigModel)


class JobModel(BaseModel):
    job_id: str
    kind: str
    status: str  # queued | running | done | failed
    progress: float
    result_ref: str | None = None
    error: str | None = None


# -- workbench state ----------------------------------------------------------

class Workbench:
    """Owns the stores, the scoring backend and the job table."""

    def __init__(self, data_dir: str | Path, backend=None):
        self.data_dir = Path(data_dir)
        self.slides = SlideStore(self.data_dir / "slides")
        self.experiments = ExperimentStore(self.data_dir / "experiments")
        self.explanations = ExplanationStore(self.data_dir / "explanations.json")
        self.backend = backend or ToyBackend()
        self.reference = DEFAULT_REFERENCE
        self.datasets_dir = self.data_dir / "datasets"
        self.results_dir = self.data_dir / "results"
        self.datasets_dir.mkdir(parents=True, exist_ok=True)
        self.results_dir.mkdir(parents=True, exist_ok=True)
        self.jobs: dict[str, JobModel] = {}
        self.job_results: dict[str, dict] = {}
        self._jobs_lock = threading.Lock()
        self._dataset_locks: dict[str, threading.Lock] = {}

    def dataset(self, dataset_id: str) -> EvalDataset:
        path = self.datasets_dir / f"{dataset_id}.json"
        if not path.exists():
            raise NotFound(f"unknown dataset {dataset_id!r}")
        return EvalDataset.load(path)

    def list_datasets(self) -> list[str]:
        return sorted(p.stem for p in self.datasets_dir.glob("*.json"))

    def _dataset_lock(self, dataset_id: str) -> threading.Lock:
        with self._jobs_lock:
            return self._dataset_locks.setdefault(dataset_id, threading.Lock())

    def scored_patch(self, slide_id: str, req: ScoreRequest):
        patch = self.slides.extract_patch(
            slide_id, req.center_x0, req.center_y0, req.size_px, req.target_mpp
        )
        return self.backend.score_patch(normalize_patch(patch, self.reference))

    # -- evaluation jobs ------------------------------------------------------

    def submit_evaluation(self, req: EvaluationRequest) -> JobModel:
        dataset = self.dataset(req.dataset_id)  # 404 before queueing
        explanations = [self.explanations.get(eid) for eid in req.explanation_ids]
        job = JobModel(
            job_id=uuid.uuid4().hex[:12],
            kind="comparison" if len(explanations) > 1 else "evaluation",
            status="queued",
            progress=0.0,
        )
        with self._jobs_lock:
            self.jobs[job.job_id] = job
        thread = threading.Thread(
            target=self._run_evaluation, args=(job, dataset, explanations, req),
            daemon=True,
        )
        thread.start()
        return job

    def _run_evaluation(self, job, dataset, explanations, req: EvaluationRequest):
        with self._dataset_lock(dataset.id):  # one job per dataset at a time
            job.status = "running"
            try:
                gateway = VlmGateway(VlmConfig(**req.vlm.model_dump()))
                payload = run_comparison(
                    dataset,
                    explanations,
                    gateway,
                    thresholds=req.thresholds,
                    n_boot=req.n_boot,
                    seed=req.seed,
                    center_at_median=req.center_at_median,
                    progress=lambda f: setattr(job, "progress", max(job.progress, f)),
                )
            except SlideprobeError as exc:
                job.status = "failed"
                job.error = str(exc)
                return
            out_dir = self.results_dir / job.job_id
            out_dir.mkdir(parents=True, exist_ok=True)
            for eid, result_json in payload["result_files"].items():
                (out_dir / f"{eid}.json").write_text(result_json)
            (out_dir / "comparison.md").write_text(payload["markdown"])
            self.job_results[job.job_id] = payload
            job.result_ref = str(out_dir.relative_to(self.data_dir))
            job.progress = 1.0
            job.status = "done"


def run_comparison(
    dataset, explanations, gateway, thresholds, n_boot, seed, center_at_median,
    progress=None,
) -> dict:
    """Library-level evaluation payload shared by the service and tests."""
    from .evaluate import evaluate_explanation

    cache: dict = {}
    results = {}
    errors: dict[str, str] = {}
    for k, exp in enumerate(explanations):
        try:
            results[exp.id] = evaluate_explanation(
                dataset, exp, gateway, thresholds=thresholds,
                n_boot=n_boot, seed=seed, center_at_median=center_at_median,
                description_cache=cache,
            )
        except EvalAborted as exc:
            errors[exp.id] = str(exc)
        if progress:
            progress((k + 1) / (len(explanations) + 1))
    comparison = {
        "dataset_id": dataset.id,
        "thresholds": list(thresholds),
        "results": results,
        "errors": errors,
    }
    return {
        "dataset_id": dataset.id,
        "thresholds": list(thresholds),
        "results": {eid: r.to_dict() for eid, r in results.items()},
        "result_files": {eid: r.to_json() for eid, r in results.items()},
        "samples_csv": {eid: r.samples_csv() for eid, r in results.items()},
        "errors": comparison["errors"],
        "markdown": comparison_markdown(comparison),
    }


# -- app factory --------------------------------------------------------------

_ERROR_STATUS = [
    (NotFound, 404),
    (OutOfBounds, 404),
    (ConcurrentIngestError, 409),
    (NoTissueError, 422),
    (DegenerateStainError, 422),
    (BackendError, 502),
    (VlmError, 502),
    (ProtocolError, 502),
    (EvalAborted, 502),
    (ValidationError, 400),
    (IngestError, 400),
    (SlideprobeError, 400),
]


def create_app(data_dir: str | Path, backend=None) -> FastAPI:
    app = FastAPI(title="slideprobe", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    wb = Workbench(data_dir, backend=backend)
    app.state.workbench = wb

    @app.exception_handler(SlideprobeError)
    async def _handle(request: Request, exc: SlideprobeError):
        status = next(s for cls, s in _ERROR_STATUS if isinstance(exc, cls))
        body = {"error": type(exc).__name__, "detail": str(exc)}
        if isinstance(exc, BackendError):
            body["retryable"] = exc.retryable
        return JSONResponse(status_code=status, content=body)

    # -- slides ---------------------------------------------------------------

    @app.post("/slides")
    async def ingest_slide(
        file: UploadFile = File(...),
        mpp: float = Form(...),
        slide_id: str | None = Form(None),
        tile_size: int = Form(256),
    ):
        from io import BytesIO

        from PIL import Image, UnidentifiedImageError

        data = await file.read()
        try:
            image = Image.open(BytesIO(data))
        except UnidentifiedImageError as exc:
            raise IngestError(f"unreadable raster: {exc}") from exc
        meta = wb.slides.ingest_image(image, mpp=mpp, tile_size=tile_size,
                                      slide_id=slide_id)
        return meta.to_dict()

    @app.get("/slides")
    def list_slides():
        return {"slides": wb.slides.list_slides()}

    @app.get("/slides/{slide_id}/meta")
    def slide_meta(slide_id: str):
        return wb.slides.meta(slide_id).to_dict()

    @app.get("/slides/{slide_id}/tiles/{level}/{col}/{row}")
    def get_tile(slide_id: str, level: int, col: int, row: int, request: Request):
        data = wb.slides.tile_png_bytes(slide_id, level, col, row)
        etag = hashlib.sha256(data).hexdigest()
        if request.headers.get("if-none-match") == etag:
            return Response(status_code=304, headers={"ETag": etag})
        return Response(
            content=data,
            media_type="image/png",
            headers={"ETag": etag, "Cache-Control": "public, max-age=86400"},
        )

    @app.post("/slides/{slide_id}/score")
    def score(slide_id: str, req: ScoreRequest):
        return wb.scored_patch(slide_id, req).to_dict()

    # -- sweeps and verdicts ----------------------------------------------------

    @app.post("/slides/{slide_id}/sweeps")
    def post_sweep(slide_id: str, body: SweepRequestModel):
        request = SweepRequest(slide_id=slide_id, **body.model_dump())
        trace = run_sweep(
            wb.slides, request, wb.backend, wb.reference,
            saliency_sink=wb.experiments.save_saliency,
        )
        wb.experiments.save_trace(trace)
        return trace.to_dict()

    @app.get("/slides/{slide_id}/sweeps")
    def list_sweeps(
        slide_id: str,
        explanation_id: str | None = None,
        offset: int = 0,
        limit: int | None = None,
    ):
        traces = wb.experiments.list_traces(slide_id, explanation_id, offset, limit)
        return {"traces": [t.to_dict() for t in traces]}

    @app.get("/sweeps/{trace_id}")
    def get_sweep(trace_id: str):
        return wb.experiments.get_trace(trace_id).to_dict()

    @app.get("/sweeps/{trace_id}/csv")
    def sweep_csv(trace_id: str):
        return Response(
            content=trace_to_csv(wb.experiments.get_trace(trace_id)),
            media_type="text/csv",
        )

    @app.post("/verdicts")
    def post_verdict(body: VerdictModel):
        verdict = Verdict(**body.model_dump())
        known = {e.id for e in wb.explanations.list()}
        wb.experiments.record_verdict(verdict, explanation_ids=known)
        from dataclasses import asdict

        return asdict(verdict)

    @app.get("/verdicts")
    def list_verdicts(trace_id: str | None = None):
        from dataclasses import asdict

        return {"verdicts": [asdict(v) for v in wb.experiments.list_verdicts(trace_id)]}

    # -- explanations -------------------------------------------------------------

    @app.get("/explanations")
    def list_explanations():
        from dataclasses import asdict

        return {"explanations": [asdict(e) for e in wb.explanations.list()]}

    @app.get("/explanations/{explanation_id}")
    def get_explanation(explanation_id: str):
        from dataclasses import asdict

        return asdict(wb.explanations.get(explanation_id))

    @app.post("/explanations")
    def put_explanation(body: ExplanationModel):
        from dataclasses import asdict

        return asdict(wb.explanations.put(Explanation(**body.model_dump())))

    @app.delete("/explanations/{explanation_id}")
    def delete_explanation(explanation_id: str):
        wb.explanations.delete(explanation_id)
        return {"deleted": explanation_id}

    # -- datasets ---------------------------------------------------------------

    @app.get("/datasets")
    def list_datasets():
        return {"datasets": wb.list_datasets()}

    @app.get("/datasets/{dataset_id}")
    def get_dataset(dataset_id: str):
        return wb.dataset(dataset_id).to_dict()

    @app.post("/datasets")
    def put_dataset(body: dict):
        dataset = EvalDataset.from_dict(body)
        dataset.save(wb.datasets_dir / f"{dataset.id}.json")
        return {"id": dataset.id, "n": len(dataset.items)}

    # -- evaluation jobs -----------------------------------------------------------

    @app.post("/evaluations")
    def post_evaluation(req: EvaluationRequest):
        return wb.submit_evaluation(req).model_dump()

    @app.get("/evaluations/{job_id}")
    def get_evaluation(job_id: str):
        job = wb.jobs.get(job_id)
        if job is None:
            raise NotFound(f"unknown job {job_id!r}")
        body = job.model_dump()
        if job.status == "done":
            body["result"] = wb.job_results[job_id]
        return body

    # -- fixtures -------------------------------------------------------------------

    @app.post("/fixtures")
    def make_fixtures(seed: int = 11):
        return fixtures.write_fixtures(wb.data_dir, seed=seed)

    return app
