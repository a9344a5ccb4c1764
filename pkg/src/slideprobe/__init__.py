"""Workbench for falsifying and quantifying natural-language explanations
of patch/slide classifiers in computational pathology."""

from .backend import (
    AttentionParams,
    PatchScore,
    RemoteBackend,
    SaliencyGrid,
    ToyBackend,
    attention_weights,
    mil_aggregate,
    toy_params,
)
from .evaluate import (
    EvalDataset,
    EvalResult,
    Explanation,
    ExplanationStore,
    auroc,
    binarize,
    bootstrap_auroc,
    compare_explanations,
    evaluate_explanation,
    ground_truth,
    subset,
)
from .pyramid import LevelMeta, Patch, SlideMeta, SlideStore
from .stain import (
    DEFAULT_REFERENCE,
    NormalizationReference,
    StainMatrix,
    estimate_stain_matrix,
    normalize_patch,
    rgb_to_od,
)
from .sweeps import ExperimentStore, SweepRequest, SweepTrace, Verdict, run_sweep
from .vlm import FourWayLabel, MockVlm, PatchDescription, VlmConfig, VlmGateway, parse_label

__version__ = "0.1.0"
