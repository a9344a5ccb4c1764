"""Quantitative comparison of competing explanations.

Each patch is described once, judged once per explanation, the four-way
judgment is binarized (any high vs any low), and bootstrapped AUROC is
reported on nested subsets that keep only samples whose model logit
magnitude exceeds a threshold.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateError,
    EvalAborted,
    JudgmentError,
    ValidationError,
    VlmError,
)
from .vlm import LABEL_ORDER, FourWayLabel, VlmGateway

DEFAULT_THRESHOLDS = (0.0, 1.0, 3.0)
DEFAULT_N_BOOT = 1000
MAX_FAILURE_FRACTION = 0.20


@dataclass(frozen=True)
class Explanation:
    id: str
    name: str
    text: str
    criteria_notes: str = ""

    def __post_init__(self):
        if not self.text:
            raise ValidationError("explanation text must be nonempty")


class ExplanationStore:
    """JSON-file-backed CRUD store for explanations."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._items: dict[str, Explanation] = {}
        if self.path.exists():
            for d in json.loads(self.path.read_text()):
                exp = Explanation(**d)
                self._items[exp.id] = exp

    def _flush(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        payload = [asdict(e) for e in self._items.values()]
        self.path.write_text(json.dumps(payload, indent=2))

    def list(self) -> list[Explanation]:
        return sorted(self._items.values(), key=lambda e: e.id)

    def get(self, explanation_id: str) -> Explanation:
        from .errors import NotFound

        if explanation_id not in self._items:
            raise NotFound(f"unknown explanation {explanation_id!r}")
        return self._items[explanation_id]

    def put(self, explanation: Explanation) -> Explanation:
        self._items[explanation.id] = explanation
        self._flush()
        return explanation

    def delete(self, explanation_id: str) -> None:
        from .errors import NotFound

        if explanation_id not in self._items:
            raise NotFound(f"unknown explanation {explanation_id!r}")
        del self._items[explanation_id]
        self._flush()


@dataclass(frozen=True)
class DatasetItem:
    patch_ref: str
    mil_logit: float


@dataclass(frozen=True)
class EvalDataset:
    id: str
    items: tuple[DatasetItem, ...]
    provenance: str = ""

    def __post_init__(self):
        refs = [it.patch_ref for it in self.items]
        if len(set(refs)) != len(refs):
            raise ValidationError("duplicate patch refs in dataset")
        if not all(np.isfinite(it.mil_logit) for it in self.items):
            raise ValidationError("dataset logits must be finite")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "provenance": self.provenance,
            "items": [asdict(it) for it in self.items],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalDataset":
        return cls(
            id=d["id"],
            items=tuple(DatasetItem(**it) for it in d["items"]),
            provenance=d.get("provenance", ""),
        )

    @classmethod
    def load(cls, path: str | Path) -> "EvalDataset":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


@dataclass
class EvalSample:
    patch_ref: str
    mil_logit: float
    description: str
    label: FourWayLabel
    binary_pred: int
    ground_truth: int


@dataclass
class SubsetRow:
    threshold: float
    n: int
    positive_fraction: float
    auroc_point: float
    auroc_mean: float
    auroc_std: float
    auroc_ordinal: float  # 4-level diagnostic, not the headline metric


@dataclass
class EvalResult:
    explanation_id: str
    dataset_id: str
    rows: list[SubsetRow]
    n_boot: int
    seed: int
    center_at_median: bool
    samples: list[EvalSample] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)
    created_at: str = ""

    def to_dict(self, include_volatile: bool = True) -> dict:
        d = {
            "explanation_id": self.explanation_id,
            "dataset_id": self.dataset_id,
            "rows": [asdict(r) for r in self.rows],
            "n_boot": self.n_boot,
            "seed": self.seed,
            "center_at_median": self.center_at_median,
            "samples": [
                {**asdict(s), "label": s.label.value} for s in self.samples
            ],
            "failures": self.failures,
        }
        if include_volatile:
            d["created_at"] = self.created_at
        return d

    def to_json(self) -> str:
        """Deterministic serialization (timestamps excluded) so reruns with
        the same seed are byte-identical."""
        return json.dumps(self.to_dict(include_volatile=False), sort_keys=True, indent=2)

    def samples_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            ["patch_ref", "mil_logit", "label", "binary_pred", "ground_truth", "description"]
        )
        for s in self.samples:
            writer.writerow(
                [s.patch_ref, s.mil_logit, s.label.value, s.binary_pred, s.ground_truth,
                 s.description]
            )
        return buf.getvalue()


def binarize(label: FourWayLabel) -> int:
    """Any high vs any low."""
    return 1 if label in (FourWayLabel.HIGH, FourWayLabel.MEDIUM_HIGH) else 0


def ground_truth(mil_logit: float, boundary: float = 0.0) -> int:
    if not np.isfinite(mil_logit):
        raise ValidationError(f"logit must be finite, got {mil_logit}")
    return 1 if mil_logit > boundary else 0


def subset(samples: list, j: float, center: float = 0.0) -> list:
    """Keep samples with |logit - center| > j; j = 0 keeps everything."""
    if j < 0:
        raise ValidationError("threshold j must be >= 0")
    if j == 0:
        return list(samples)
    return [s for s in samples if abs(s.mil_logit - center) > j]


def auroc(scores, labels) -> float:
    """Mann-Whitney estimator: fraction of (pos, neg) pairs won, ties half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise DegenerateError("AUROC needs at least one positive and one negative")
    diff = pos[:, None] - neg[None, :]
    wins = np.count_nonzero(diff > 0)
    ties = np.count_nonzero(diff == 0)
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def bootstrap_auroc(
    scores, labels, n_boot: int = DEFAULT_N_BOOT, seed: int = 0
) -> tuple[float, float]:
    """Mean and std of AUROC over n_boot resamples with replacement.

    Single-class resamples are discarded and redrawn, up to 10x n_boot
    attempts total.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n = len(scores)
    if n < 2 or len(set(labels.tolist())) < 2:
        raise DegenerateError("bootstrap needs >= 2 samples with both classes")
    rng = np.random.default_rng(seed)
    values = []
    attempts = 0
    while len(values) < n_boot and attempts < 10 * n_boot:
        attempts += 1
        idx = rng.integers(0, n, size=n)
        lab = labels[idx]
        if lab.min() == lab.max():
            continue
        values.append(auroc(scores[idx], lab))
    if len(values) < n_boot:
        raise DegenerateError("could not draw enough two-class resamples")
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std())


def evaluate_explanation(
    dataset: EvalDataset,
    explanation: Explanation,
    gateway: VlmGateway,
    thresholds=DEFAULT_THRESHOLDS,
    n_boot: int = DEFAULT_N_BOOT,
    seed: int = 0,
    center_at_median: bool = False,
    description_cache: dict | None = None,
    resolve_patch=None,
    progress=None,
) -> EvalResult:
    """Describe-judge-binarize-score one explanation over a dataset.

    Descriptions are cached by patch_ref (the describe stage does not
    depend on the explanation), so judging k explanations with a shared
    cache issues exactly one describe call per patch.
    """
    if not dataset.items:
        raise ValidationError("dataset is empty")
    cache = description_cache if description_cache is not None else {}
    logits = np.array([it.mil_logit for it in dataset.items])
    center = float(np.median(logits)) if center_at_median else 0.0

    samples: list[EvalSample] = []
    failures: list[str] = []
    for k, item in enumerate(dataset.items):
        try:
            if item.patch_ref not in cache:
                png = resolve_patch(item.patch_ref) if resolve_patch else None
                cache[item.patch_ref] = gateway.describe_patch(png, item.patch_ref)
            desc = cache[item.patch_ref]
            label = gateway.judge(desc, explanation)
        except (VlmError, JudgmentError) as exc:
            failures.append(f"{item.patch_ref}: {exc}")
            continue
        samples.append(
            EvalSample(
                patch_ref=item.patch_ref,
                mil_logit=item.mil_logit,
                description=desc.text,
                label=label,
                binary_pred=binarize(label),
                ground_truth=ground_truth(item.mil_logit, boundary=center),
            )
        )
        if progress:
            progress((k + 1) / len(dataset.items))
    if len(failures) > MAX_FAILURE_FRACTION * len(dataset.items):
        raise EvalAborted(
            f"{len(failures)}/{len(dataset.items)} VLM failures exceed "
            f"{MAX_FAILURE_FRACTION:.0%}"
        )

    rows = []
    for j in thresholds:
        kept = subset(samples, j, center=center)
        preds = [s.binary_pred for s in kept]
        ords = [LABEL_ORDER[s.label] for s in kept]
        truth = [s.ground_truth for s in kept]
        n = len(kept)
        pos_frac = float(np.mean(truth)) if n else float("nan")
        point = auroc(preds, truth)
        mean, std = bootstrap_auroc(preds, truth, n_boot=n_boot, seed=seed)
        rows.append(
            SubsetRow(
                threshold=float(j),
                n=n,
                positive_fraction=pos_frac,
                auroc_point=point,
                auroc_mean=mean,
                auroc_std=std,
                auroc_ordinal=auroc(ords, truth),
            )
        )
    return EvalResult(
        explanation_id=explanation.id,
        dataset_id=dataset.id,
        rows=rows,
        n_boot=n_boot,
        seed=seed,
        center_at_median=center_at_median,
        samples=samples,
        failures=failures,
        created_at=datetime.now(timezone.utc).isoformat(),
    )


def compare_explanations(
    dataset: EvalDataset,
    explanations: list[Explanation],
    gateway: VlmGateway,
    thresholds=DEFAULT_THRESHOLDS,
    n_boot: int = DEFAULT_N_BOOT,
    seed: int = 0,
    center_at_median: bool = False,
    resolve_patch=None,
) -> dict:
    """Run all explanations over one dataset, reusing cached descriptions.

    A row that aborts is reported with its error without killing others.
    """
    if len(explanations) < 2:
        raise ValidationError("comparison needs at least 2 explanations")
    cache: dict = {}
    results: dict[str, EvalResult] = {}
    errors: dict[str, str] = {}
    for exp in explanations:
        try:
            results[exp.id] = evaluate_explanation(
                dataset,
                exp,
                gateway,
                thresholds=thresholds,
                n_boot=n_boot,
                seed=seed,
                center_at_median=center_at_median,
                description_cache=cache,
                resolve_patch=resolve_patch,
            )
        except EvalAborted as exc:
            errors[exp.id] = str(exc)
    return {
        "dataset_id": dataset.id,
        "thresholds": list(thresholds),
        "results": results,
        "errors": errors,
    }


def comparison_markdown(comparison: dict) -> str:
    """Rows = explanations, columns = subsets, cells = mean +/- std; the
    best mean per column is starred."""
    thresholds = comparison["thresholds"]
    results: dict[str, EvalResult] = comparison["results"]
    header = ["Explanation"] + [
        ("X" if j == 0 else f"X{j:g}") for j in thresholds
    ]
    best = {}
    for col, j in enumerate(thresholds):
        means = {
            eid: r.rows[col].auroc_mean for eid, r in results.items()
        }
        if means:
            best[col] = max(means, key=means.get)
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] * len(header)) + "|",
    ]
    for eid, r in results.items():
        cells = [eid]
        for col in range(len(thresholds)):
            row = r.rows[col]
            mark = " *" if best.get(col) == eid else ""
            cells.append(f"{row.auroc_mean:.2f} ± {row.auroc_std:.2f}{mark}")
        lines.append("| " + " | ".join(cells) + " |")
    for eid, err in comparison["errors"].items():
        lines.append(f"| {eid} | aborted: {err} |")
    return "\n".join(lines) + "\n"
