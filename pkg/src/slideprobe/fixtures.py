"""Synthetic fixtures: Beer-Lambert rendered slides, reference patch,
bundled explanations and the 132-sample mock evaluation dataset.

Everything here is seeded so the whole workbench runs reproducibly with
no external data.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .evaluate import DatasetItem, EvalDataset, Explanation, ExplanationStore
from .pyramid import SlideStore
from .stain import DEFAULT_REFERENCE, StainMatrix, render

GRADIENT_SLIDE_ID = "gradient-he"
FINE_SLIDE_ID = "fine-gradient"
UNIFORM_SLIDE_ID = "uniform-gray"
FIXTURE_DATASET_ID = "fixture-132"

# tags whose canned descriptions read as tumor (high risk) vs immune (low risk)
HIGH_TAGS = ("tumor_solid", "tumor_adipose", "tumor_poor")
LOW_TAGS = ("lymphocytes",)

BUNDLED_EXPLANATIONS = [
    Explanation(
        id="cow_camel",
        name="cow camel",
        text=(
            "A camel visible in the image leads to a high score and a cow "
            "visible in the image leads to a low score. If neither animal is "
            "present the score falls in the middle bands."
        ),
        criteria_notes=(
            "Criticizable (testable on any patch) but deliberately "
            "irrelevant to tissue; serves as a random-performance control."
        ),
    ),
    Explanation(
        id="tumor_lymphocyte_inverse",
        name="tumor lymphocyte inverse",
        text=(
            "Lymphocytes in the patch push the score up; tumor cells in the "
            "patch push the score down."
        ),
        criteria_notes="Deliberate inversion control; expected below-chance AUROC.",
    ),
    Explanation(
        id="tumor_lymphocyte",
        name="tumor lymphocyte",
        text=(
            "Lymphocytes in the patch push the score down; tumor cells in "
            "the patch push the score up."
        ),
        criteria_notes="Coarse but criticizable and hard to vary.",
    ),
    Explanation(
        id="detailed_analyses",
        name="detailed analyses",
        text=(
            "The model outputs higher scores for poorly differentiated or "
            "highly proliferative tumor, including pleomorphic regions and "
            "epithelial-mesenchymal transition, for tumor infiltrating "
            "adjacent adipose tissue, and for an aggressive tumor-stroma "
            "interface. It outputs lower scores for well-differentiated "
            "glandular tissue and for organized lymphocytic infiltration."
        ),
        criteria_notes=(
            "Criticizable per component via sliding-window experiments; "
            "hard to vary; grounded in model behavior rather than authority."
        ),
    ),
]


def synthetic_tissue(
    width: int,
    height: int,
    h_conc,
    e_conc,
    seed: int = 0,
    jitter: float = 0.02,
    stains: StainMatrix | None = None,
) -> np.ndarray:
    """Render an RGB raster from H/E concentration fields via Beer-Lambert.

    ``h_conc``/``e_conc`` may be scalars, 1-D ramps along x, or full
    (height, width) fields. Multiplicative jitter keeps the OD cloud
    two-dimensional so stain estimation is well posed.
    """
    stains = stains or DEFAULT_REFERENCE.stain_matrix
    rng = np.random.default_rng(seed)

    def as_field(c):
        c = np.asarray(c, dtype=float)
        if c.ndim == 0:
            return np.full((height, width), float(c))
        if c.ndim == 1:
            return np.tile(c, (height, 1))
        return c

    conc = np.stack([as_field(h_conc), as_field(e_conc)], axis=-1)
    conc = conc * rng.normal(1.0, jitter, size=conc.shape)
    return render(np.clip(conc, 0, None), stains)


def synthetic_patch(
    h_conc, e_conc, size: int = 224, seed: int = 0, jitter: float = 0.02,
    stains: StainMatrix | None = None,
) -> np.ndarray:
    return synthetic_tissue(size, size, h_conc, e_conc, seed=seed, jitter=jitter,
                            stains=stains)


def tissue_concentrations(
    rng: np.random.Generator,
    size: int = 224,
    max_h: float = 1.5,
    max_e: float = 1.0,
) -> np.ndarray:
    """Tissue-like (H, E) concentration field: a mix of near-pure
    hematoxylin pixels (nuclei), near-pure eosin pixels (stroma) and mixed
    pixels, so the OD cloud has well-populated extreme angles."""
    n = size * size
    kind = rng.choice(3, size=n, p=[0.25, 0.25, 0.5])
    h = rng.uniform(0, max_h, n)
    e = rng.uniform(0, max_e, n)
    e[kind == 0] *= 0.03
    h[kind == 1] *= 0.03
    return np.stack([h, e], axis=-1).reshape(size, size, 2)


def reference_patch(size: int = 224, seed: int = 7) -> np.ndarray:
    """Patch rendered from the reference basis whose 99th-percentile
    concentrations sit at the reference maxima (normalization fixed point)."""
    rng = np.random.default_rng(seed)
    max_h, max_e = DEFAULT_REFERENCE.max_concentrations
    conc = tissue_concentrations(rng, size, max_h, max_e)
    # pin the 99th percentile at the reference maxima
    conc[..., 0] *= max_h / np.percentile(conc[..., 0], 99)
    conc[..., 1] *= max_e / np.percentile(conc[..., 1], 99)
    return render(conc, DEFAULT_REFERENCE.stain_matrix)


def make_gradient_slide(
    store: SlideStore,
    slide_id: str = GRADIENT_SLIDE_ID,
    width: int = 2048,
    height: int = 512,
    mpp: float = 1.14,
    seed: int = 3,
):
    """The density of hematoxylin-stained pixels ramps up left to right
    over a constant eosin background, so sweeping rightwards raises the
    toy logit monotonically. Density (not amplitude) carries the gradient
    because per-patch normalization rescales stain amplitude away."""
    rng = np.random.default_rng(seed)
    p_h = np.tile(np.linspace(0.06, 0.60, width), (height, 1))
    r = rng.uniform(0, 1, (height, width))
    is_h = r < p_h
    is_e = (r >= p_h) & (r < p_h + 0.30)
    h = np.where(is_h, rng.uniform(0.2, 1.5, (height, width)), 0.0)
    e = np.where(is_e, rng.uniform(0.2, 0.9, (height, width)), 0.0)
    raster = render(np.stack([h, e], axis=-1), DEFAULT_REFERENCE.stain_matrix)
    return store.ingest_image(raster, mpp=mpp, slide_id=slide_id)


def make_fine_slide(
    store: SlideStore,
    slide_id: str = FINE_SLIDE_ID,
    size: int = 1024,
    mpp: float = 0.57,
    seed: int = 5,
):
    """Smooth 0.57 mpp slide for cross-level patch-extraction checks."""
    h_ramp = np.linspace(0.3, 1.4, size)
    e_ramp = np.linspace(0.8, 0.3, size)
    raster = synthetic_tissue(size, size, h_ramp, np.tile(e_ramp, (1,)), seed=seed,
                              jitter=0.0)
    return store.ingest_image(raster, mpp=mpp, slide_id=slide_id)


def make_uniform_slide(
    store: SlideStore,
    slide_id: str = UNIFORM_SLIDE_ID,
    size: int = 1024,
    value: int = 128,
    mpp: float = 1.14,
):
    raster = np.full((size, size, 3), value, dtype=np.uint8)
    return store.ingest_image(raster, mpp=mpp, slide_id=slide_id)


def make_eval_dataset(
    n: int = 132,
    seed: int = 11,
    base_accuracy: float = 0.62,
    accuracy_slope: float = 0.0,
    dataset_id: str = FIXTURE_DATASET_ID,
) -> EvalDataset:
    """Mock evaluation dataset: each item pairs a model logit with a fixture
    tag whose canned description agrees with the logit's sign with
    probability base_accuracy + accuracy_slope * |logit| (capped at 0.98).
    """
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        logit = float(rng.uniform(-5.0, 5.0))
        p = min(0.98, base_accuracy + accuracy_slope * abs(logit))
        agrees = rng.random() < p
        wants_high = (logit > 0) == agrees
        tag = rng.choice(HIGH_TAGS) if wants_high else rng.choice(LOW_TAGS)
        items.append(DatasetItem(patch_ref=f"fixture:{tag}#{i}", mil_logit=round(logit, 4)))
    return EvalDataset(
        id=dataset_id,
        items=tuple(items),
        provenance=f"synthetic mock-VLM fixture (seed={seed}, n={n})",
    )


def write_fixtures(data_dir: str | Path, seed: int = 11) -> dict:
    """Generate the bundled slides, reference, explanations and dataset
    under a data directory. Idempotent: existing slides are kept."""
    data_dir = Path(data_dir)
    store = SlideStore(data_dir / "slides")
    created = {"slides": [], "datasets": [], "explanations": []}
    for maker, slide_id in (
        (make_gradient_slide, GRADIENT_SLIDE_ID),
        (make_fine_slide, FINE_SLIDE_ID),
        (make_uniform_slide, UNIFORM_SLIDE_ID),
    ):
        if slide_id not in store.list_slides():
            maker(store, slide_id)
            created["slides"].append(slide_id)

    datasets_dir = data_dir / "datasets"
    datasets_dir.mkdir(parents=True, exist_ok=True)
    dataset = make_eval_dataset(seed=seed)
    dataset.save(datasets_dir / f"{dataset.id}.json")
    created["datasets"].append(dataset.id)

    exp_store = ExplanationStore(data_dir / "explanations.json")
    for exp in BUNDLED_EXPLANATIONS:
        exp_store.put(exp)
        created["explanations"].append(exp.id)

    DEFAULT_REFERENCE.save(data_dir / "reference.json")

    from PIL import Image

    ref_dir = data_dir / "patches"
    ref_dir.mkdir(exist_ok=True)
    Image.fromarray(reference_patch()).save(ref_dir / "reference_patch.png")
    return created
