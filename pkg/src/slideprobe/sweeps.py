"""Sliding-window experiments: overlapping patch sweeps with per-step
logits and saliency, plus human verdicts recorded against explanation
components.

Traces are appended to ``experiments/<slide_id>.jsonl``; saliency grids
go to sidecar ``.npy`` files so the JSONL stays small and diffable.
Verdicts live in ``experiments/verdicts.jsonl`` and are append-only.
"""

from __future__ import annotations

import csv
import io
import json
import math
import threading
import uuid
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateStainError,
    NoTissueError,
    NotFound,
    OutOfBounds,
    ValidationError,
)
from .pyramid import DEFAULT_PATCH_MPP, DEFAULT_PATCH_SIZE, SlideStore
from .stain import DEFAULT_REFERENCE, NormalizationReference, normalize_patch

MAX_STEPS = 256

VERDICT_OUTCOMES = ("supports", "contradicts", "inconclusive")


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class SweepRequest:
    slide_id: str
    anchor_x0: float
    anchor_y0: float
    direction: tuple[float, float]
    stride_px: float
    steps: int
    size_px: int = DEFAULT_PATCH_SIZE
    target_mpp: float = DEFAULT_PATCH_MPP
    explanation_id: str | None = None

    def __post_init__(self):
        dx, dy = self.direction
        norm = math.hypot(dx, dy)
        if norm == 0:
            raise ValidationError("direction must be a nonzero vector")
        object.__setattr__(self, "direction", (dx / norm, dy / norm))
        if self.stride_px < 0:
            raise ValidationError("stride_px must be >= 0")
        if not 1 <= self.steps <= MAX_STEPS:
            raise ValidationError(f"steps must be in [1, {MAX_STEPS}]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["direction"] = list(self.direction)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepRequest":
        d = dict(d)
        d["direction"] = tuple(d["direction"])
        return cls(**d)


@dataclass
class SweepPoint:
    index: int
    center_x0: float
    center_y0: float
    logit: float | None
    saliency_ref: str | None = None


@dataclass
class SweepTrace:
    trace_id: str
    request: SweepRequest
    points: list[SweepPoint]
    created_at: str
    backend_id: str
    warnings: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def logits(self) -> list[float | None]:
        return [p.logit for p in self.points]

    def to_dict(self) -> dict:
        return {
            "trace_id": self.trace_id,
            "request": self.request.to_dict(),
            "points": [asdict(p) for p in self.points],
            "created_at": self.created_at,
            "backend_id": self.backend_id,
            "warnings": self.warnings,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepTrace":
        return cls(
            trace_id=d["trace_id"],
            request=SweepRequest.from_dict(d["request"]),
            points=[SweepPoint(**p) for p in d["points"]],
            created_at=d["created_at"],
            backend_id=d["backend_id"],
            warnings=d.get("warnings", []),
            error=d.get("error"),
        )


@dataclass
class Verdict:
    trace_id: str
    explanation_id: str
    component_label: str
    outcome: str
    note: str = ""
    author: str = ""
    verdict_id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])
    created_at: str = field(default_factory=_now_iso)
    current: bool = True  # recomputed on read; latest per key wins

    def __post_init__(self):
        if self.outcome not in VERDICT_OUTCOMES:
            raise ValidationError(
                f"outcome must be one of {VERDICT_OUTCOMES}, got {self.outcome!r}"
            )


def run_sweep(
    slides: SlideStore,
    request: SweepRequest,
    backend,
    reference: NormalizationReference = DEFAULT_REFERENCE,
    saliency_sink=None,
) -> SweepTrace:
    """Extract, normalize and score steps+1 overlapping patches.

    Steps whose center falls outside the slide are truncated with a
    warning; a step without enough tissue records a null logit. A backend
    failure mid-sweep persists the partial trace with an error marker.
    """
    meta = slides.meta(request.slide_id)
    trace_id = uuid.uuid4().hex[:12]
    warnings: list[str] = []

    extent_l0 = request.size_px * request.target_mpp / meta.mpp
    if request.stride_px >= extent_l0:
        warnings.append(
            f"stride {request.stride_px} >= patch extent {extent_l0:.1f} px; "
            "patches will not overlap"
        )

    dx, dy = request.direction
    points: list[SweepPoint] = []
    error: str | None = None
    for i in range(request.steps + 1):
        cx = request.anchor_x0 + i * request.stride_px * dx
        cy = request.anchor_y0 + i * request.stride_px * dy
        if not (0 <= cx < meta.width_px and 0 <= cy < meta.height_px):
            warnings.append(f"step {i} center ({cx:.1f},{cy:.1f}) out of bounds; truncated")
            break
        try:
            patch = slides.extract_patch(
                request.slide_id, cx, cy, request.size_px, request.target_mpp
            )
            normalized = normalize_patch(patch, reference)
            score = backend.score_patch(normalized)
        except (NoTissueError, DegenerateStainError) as exc:
            warnings.append(f"step {i}: {exc}")
            points.append(SweepPoint(index=i, center_x0=cx, center_y0=cy, logit=None))
            continue
        except OutOfBounds as exc:
            warnings.append(f"step {i}: {exc}; truncated")
            break
        except Exception as exc:  # backend failure: keep the partial trace
            error = f"step {i}: {exc}"
            break
        saliency_ref = None
        if saliency_sink is not None:
            saliency_ref = saliency_sink(trace_id, i, score.saliency.values)
        points.append(
            SweepPoint(
                index=i,
                center_x0=cx,
                center_y0=cy,
                logit=score.logit,
                saliency_ref=saliency_ref,
            )
        )
    return SweepTrace(
        trace_id=trace_id,
        request=request,
        points=points,
        created_at=_now_iso(),
        backend_id=getattr(backend, "backend_id", "unknown"),
        warnings=warnings,
        error=error,
    )


class ExperimentStore:
    """Append-only persistence for sweep traces, saliency grids and verdicts."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "saliency").mkdir(exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, key: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(key, threading.Lock())

    # -- saliency sidecars ---------------------------------------------------

    def save_saliency(self, trace_id: str, index: int, values: np.ndarray) -> str:
        rel = f"saliency/{trace_id}_{index}.npy"
        np.save(self.root / rel, np.asarray(values, dtype=np.float32))
        return rel

    def load_saliency(self, ref: str) -> np.ndarray:
        path = self.root / ref
        if not path.exists():
            raise NotFound(f"no saliency sidecar {ref!r}")
        return np.load(path)

    # -- traces ----------------------------------------------------------------

    def save_trace(self, trace: SweepTrace) -> None:
        path = self.root / f"{trace.request.slide_id}.jsonl"
        line = json.dumps(trace.to_dict(), sort_keys=True)
        with self._lock_for(trace.request.slide_id):
            with open(path, "a") as f:
                f.write(line + "\n")

    def get_trace(self, trace_id: str) -> SweepTrace:
        for path in self.root.glob("*.jsonl"):
            if path.name == "verdicts.jsonl":
                continue
            for line in path.read_text().splitlines():
                d = json.loads(line)
                if d["trace_id"] == trace_id:
                    return SweepTrace.from_dict(d)
        raise NotFound(f"unknown trace {trace_id!r}")

    def list_traces(
        self,
        slide_id: str,
        explanation_id: str | None = None,
        offset: int = 0,
        limit: int | None = None,
    ) -> list[SweepTrace]:
        path = self.root / f"{slide_id}.jsonl"
        traces: list[SweepTrace] = []
        if path.exists():
            for line in path.read_text().splitlines():
                traces.append(SweepTrace.from_dict(json.loads(line)))
        if explanation_id is not None:
            traces = [t for t in traces if t.request.explanation_id == explanation_id]
        traces.sort(key=lambda t: (t.created_at, t.trace_id))
        if limit is None:
            return traces[offset:]
        return traces[offset : offset + limit]

    # -- verdicts ---------------------------------------------------------------

    def record_verdict(self, verdict: Verdict, explanation_ids: set[str] | None = None) -> str:
        self.get_trace(verdict.trace_id)  # NotFound if dangling
        if explanation_ids is not None and verdict.explanation_id not in explanation_ids:
            raise NotFound(f"unknown explanation {verdict.explanation_id!r}")
        path = self.root / "verdicts.jsonl"
        d = asdict(verdict)
        d.pop("current")
        with self._lock_for("verdicts"):
            with open(path, "a") as f:
                f.write(json.dumps(d, sort_keys=True) + "\n")
        return verdict.verdict_id

    def list_verdicts(self, trace_id: str | None = None) -> list[Verdict]:
        """All verdicts, oldest first; only the latest per (trace,
        explanation, component) is flagged current."""
        path = self.root / "verdicts.jsonl"
        verdicts: list[Verdict] = []
        if path.exists():
            for line in path.read_text().splitlines():
                verdicts.append(Verdict(**json.loads(line)))
        if trace_id is not None:
            verdicts = [v for v in verdicts if v.trace_id == trace_id]
        latest: dict[tuple, str] = {}
        for v in verdicts:
            latest[(v.trace_id, v.explanation_id, v.component_label)] = v.verdict_id
        for v in verdicts:
            v.current = (
                latest[(v.trace_id, v.explanation_id, v.component_label)] == v.verdict_id
            )
        return verdicts


def trace_to_csv(trace: SweepTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["index", "x", "y", "logit"])
    for p in trace.points:
        writer.writerow([p.index, p.center_x0, p.center_y0, p.logit])
    return buf.getvalue()
