"""Patch/slide scoring backends.

The toy backend is fully analytic: features are per-cell mean stain
concentrations, the head is linear, and the saliency grid is the exact
per-cell contribution magnitude. The remote backend speaks a small JSON
wire protocol so a real feature extractor + MIL model can be attached as
an external server.
"""

from __future__ import annotations

import base64
import threading
import time
from dataclasses import dataclass

import httpx
import numpy as np

from .errors import BackendError, EmptyBagError, ProtocolError
from .pyramid import Patch
from .stain import DEFAULT_REFERENCE, NormalizationReference, decompose

CELL_ROWS = 2
CELL_COLS = 4
STATS_PER_CELL = 2  # (mean H concentration, mean E concentration)
TOY_FEATURE_DIM = CELL_ROWS * CELL_COLS * STATS_PER_CELL


@dataclass(frozen=True)
class SaliencyGrid:
    values: np.ndarray  # (rows, cols), in [0, 1], max 1 when any nonzero

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, float))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def validate(self) -> "SaliencyGrid":
        v = self.values
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise ProtocolError("saliency grid must be a finite 2-D array")
        if np.any(v < 0) or np.any(v > 1):
            raise ProtocolError("saliency values must lie in [0, 1]")
        if np.any(v > 0) and v.max() < 1.0 - 1e-6:
            raise ProtocolError("nonzero saliency grid must be max-normalized")
        return self

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "values": self.values.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SaliencyGrid":
        try:
            values = np.asarray(d["values"], float).reshape(d["rows"], d["cols"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed saliency grid: {exc}") from exc
        return cls(values).validate()


@dataclass(frozen=True)
class PatchScore:
    logit: float
    saliency: SaliencyGrid
    backend_id: str
    features: np.ndarray | None = None

    def to_dict(self) -> dict:
        d = {
            "logit": self.logit,
            "saliency": self.saliency.to_dict(),
            "backend_id": self.backend_id,
        }
        if self.features is not None:
            d["features"] = np.asarray(self.features).tolist()
        return d


@dataclass(frozen=True)
class AttentionParams:
    V: np.ndarray  # (m, d)
    w: np.ndarray  # (m,)
    head_w: np.ndarray  # (d,)
    head_b: float
    U: np.ndarray | None = None  # gating matrix; None selects plain tanh

    def __post_init__(self):
        object.__setattr__(self, "V", np.asarray(self.V, float))
        object.__setattr__(self, "w", np.asarray(self.w, float))
        object.__setattr__(self, "head_w", np.asarray(self.head_w, float))


def toy_params(name: str = "toy-v1") -> AttentionParams:
    """Named, reproducible parameter fixture for the toy backend."""
    if name != "toy-v1":
        raise ValueError(f"unknown toy parameter fixture {name!r}")
    rng = np.random.default_rng(41)
    return AttentionParams(
        V=rng.normal(0.0, 0.5, size=(8, TOY_FEATURE_DIM)),
        w=rng.normal(0.0, 0.5, size=8),
        # positive head: H concentration drives risk up, E mildly
        head_w=np.tile([2.0, 0.75], CELL_ROWS * CELL_COLS),
        head_b=0.0,
    )


def attention_weights(features: list[np.ndarray], params: AttentionParams) -> np.ndarray:
    """a_i = softmax_i(w . tanh(V h_i)); nonnegative, sums to 1."""
    if len(features) == 0:
        raise EmptyBagError("attention over an empty bag")
    H = np.stack([np.asarray(f, float) for f in features])
    pre = np.tanh(H @ params.V.T)
    if params.U is not None:
        pre = pre * (1.0 / (1.0 + np.exp(-(H @ params.U.T))))
    scores = pre @ params.w
    scores = scores - scores.max()
    exp = np.exp(scores)
    return exp / exp.sum()


def mil_aggregate(features: list[np.ndarray], params: AttentionParams) -> float:
    """Attention-weighted mean of instance features through the linear head.

    Instances are summed in lexicographic feature order so the result is
    bit-stable under permutation of the bag.
    """
    if len(features) == 0:
        raise EmptyBagError("aggregation over an empty bag")
    H = np.stack([np.asarray(f, float) for f in features])
    order = np.lexsort(H.T[::-1])
    H = H[order]
    a = attention_weights(list(H), params)
    z = np.zeros(H.shape[1])
    for i in range(H.shape[0]):
        z += a[i] * H[i]
    return float(np.dot(params.head_w, z) + params.head_b)


class ToyBackend:
    """Analytic backend: linear head over per-cell mean stain concentrations."""

    def __init__(
        self,
        params: AttentionParams | None = None,
        reference: NormalizationReference = DEFAULT_REFERENCE,
        backend_id: str = "toy-v1",
    ):
        self.params = params if params is not None else toy_params()
        self.reference = reference
        self.backend_id = backend_id

    @property
    def feature_dim(self) -> int:
        return TOY_FEATURE_DIM

    def features(self, patch: Patch) -> np.ndarray:
        """2x4 spatial cells x (mean H, mean E concentration) = 16 dims."""
        conc = decompose(patch.pixels, self.reference.stain_matrix)
        out = np.empty(TOY_FEATURE_DIM)
        for r, row_block in enumerate(np.array_split(conc, CELL_ROWS, axis=0)):
            for c, cell in enumerate(np.array_split(row_block, CELL_COLS, axis=1)):
                base = (r * CELL_COLS + c) * STATS_PER_CELL
                out[base] = cell[..., 0].mean()
                out[base + 1] = cell[..., 1].mean()
        return out

    def cell_contributions(self, features: np.ndarray) -> np.ndarray:
        """Signed per-cell share of the logit (head restricted to cell slots)."""
        per_slot = self.params.head_w * features
        return per_slot.reshape(CELL_ROWS * CELL_COLS, STATS_PER_CELL).sum(axis=1)

    def score_patch(self, patch: Patch) -> PatchScore:
        f = self.features(patch)
        contrib = self.cell_contributions(f)
        logit = float(contrib.sum() + self.params.head_b)
        sal = np.abs(contrib).reshape(CELL_ROWS, CELL_COLS)
        peak = sal.max()
        if peak > 0:
            sal = sal / peak
        return PatchScore(
            logit=logit,
            saliency=SaliencyGrid(sal),
            backend_id=self.backend_id,
            features=f,
        )

    def score_slide(self, patches: list[Patch]) -> float:
        return mil_aggregate([self.features(p) for p in patches], self.params)


class RemoteBackend:
    """Client for the remote-inference wire protocol.

    POST {patch: base64 PNG, want: [...]} to the endpoint; the response
    carries the logit, a normalized saliency grid, and optionally features.
    """

    def __init__(
        self,
        endpoint: str,
        timeout_s: float = 30.0,
        max_retries: int = 3,
        backoff_s: float = 0.5,
        max_in_flight: int = 4,
        client: httpx.Client | None = None,
        backend_id: str | None = None,
    ):
        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._in_flight = threading.Semaphore(max_in_flight)
        self._client = client or httpx.Client(timeout=timeout_s)
        self.backend_id = backend_id or f"remote:{endpoint}"

    def score_patch(self, patch: Patch) -> PatchScore:
        return self.infer(patch.to_png_bytes())

    def infer(
        self,
        patch_png: bytes,
        want: tuple[str, ...] = ("logit", "saliency", "features"),
    ) -> PatchScore:
        body = {
            "patch": base64.b64encode(patch_png).decode("ascii"),
            "want": list(want),
        }
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                with self._in_flight:
                    resp = self._client.post(self.endpoint, json=body)
            except httpx.HTTPError as exc:
                last_exc = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff_s * (2**attempt))
                continue
            if resp.status_code >= 500:
                last_exc = BackendError(f"server error {resp.status_code}", retryable=True)
                if attempt < self.max_retries:
                    time.sleep(self.backoff_s * (2**attempt))
                continue
            if resp.status_code != 200:
                raise BackendError(f"inference failed with HTTP {resp.status_code}")
            return self._parse(resp)
        raise BackendError(f"remote inference failed: {last_exc}", retryable=True)

    def _parse(self, resp: httpx.Response) -> PatchScore:
        try:
            payload = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"non-JSON response: {exc}") from exc
        if not isinstance(payload, dict) or "logit" not in payload:
            raise ProtocolError("response missing 'logit'")
        logit = payload["logit"]
        if not isinstance(logit, (int, float)) or not np.isfinite(logit):
            raise ProtocolError(f"logit must be a finite number, got {logit!r}")
        if "saliency" in payload and payload["saliency"] is not None:
            saliency = SaliencyGrid.from_dict(payload["saliency"])
        else:
            saliency = SaliencyGrid(np.zeros((1, 1)))
        features = None
        if payload.get("features") is not None:
            features = np.asarray(payload["features"], float)
            if features.ndim != 1 or not np.all(np.isfinite(features)):
                raise ProtocolError("features must be a finite 1-D vector")
        return PatchScore(
            logit=float(logit),
            saliency=saliency,
            backend_id=self.backend_id,
            features=features,
        )


def get_backend(name: str, endpoint: str | None = None, **kwargs):
    if name in ("toy", "toy-v1"):
        return ToyBackend(**kwargs)
    if name == "remote":
        if not endpoint:
            raise BackendError("remote backend requires an endpoint")
        return RemoteBackend(endpoint, **kwargs)
    raise BackendError(f"unknown backend {name!r}")
