"""Macenko stain normalization of H&E patches.

Pixels are mapped to optical density, the two dominant stain directions
are estimated from the OD point cloud, per-pixel concentrations are
rescaled to a reference, and the patch is re-rendered through the
reference stain basis. All functions are pure.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateStainError, NoTissueError
from .pyramid import Patch

I0 = 256.0
DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 0.15
MIN_TISSUE_PIXELS = 100
PERCENTILE_MAX_CONC = 99.0


@dataclass(frozen=True)
class StainMatrix:
    """Unit OD vectors for hematoxylin and eosin (RGB channel order)."""

    h_vector: np.ndarray
    e_vector: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h_vector", _unit(np.asarray(self.h_vector, float)))
        object.__setattr__(self, "e_vector", _unit(np.asarray(self.e_vector, float)))

    @property
    def matrix(self) -> np.ndarray:
        """3x2 matrix with H and E as columns."""
        return np.stack([self.h_vector, self.e_vector], axis=1)

    def angle_to(self, other: "StainMatrix") -> tuple[float, float]:
        """Angular error (degrees) between corresponding stain vectors."""
        return (
            _angle_deg(self.h_vector, other.h_vector),
            _angle_deg(self.e_vector, other.e_vector),
        )


@dataclass(frozen=True)
class NormalizationReference:
    stain_matrix: StainMatrix
    max_concentrations: np.ndarray  # (2,) 99th-percentile H and E

    def __post_init__(self):
        mc = np.asarray(self.max_concentrations, float)
        if mc.shape != (2,) or np.any(mc <= 0):
            raise ValueError("max_concentrations must be 2 positive floats")
        object.__setattr__(self, "max_concentrations", mc)

    def to_dict(self) -> dict:
        return {
            "h_vector": self.stain_matrix.h_vector.tolist(),
            "e_vector": self.stain_matrix.e_vector.tolist(),
            "max_concentrations": self.max_concentrations.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationReference":
        return cls(
            stain_matrix=StainMatrix(d["h_vector"], d["e_vector"]),
            max_concentrations=np.asarray(d["max_concentrations"], float),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "NormalizationReference":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero stain vector")
    return v / n

def _angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    c = np.clip(abs(np.dot(_unit(a), _unit(b))), -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


# Classic H&E basis; concentrations chosen so the bundled reference patch
# renders with typical stain intensity.
DEFAULT_REFERENCE = NormalizationReference(
    stain_matrix=StainMatrix(
        h_vector=np.array([0.650, 0.704, 0.286]),
        e_vector=np.array([0.072, 0.990, 0.105]),
    ),
    max_concentrations=np.array([1.9705, 1.0308]),
)


def rgb_to_od(pixels: np.ndarray) -> np.ndarray:
    """Optical density per channel: -log10((I+1)/256)."""
    arr = np.asarray(pixels, dtype=np.float64)
    return -np.log10((arr + 1.0) / I0)


def od_to_rgb(od: np.ndarray) -> np.ndarray:
    intensity = I0 * np.power(10.0, -np.asarray(od, float)) - 1.0
    return np.rint(np.clip(intensity, 0, 255)).astype(np.uint8)


def _pixels_of(patch) -> np.ndarray:
    return patch.pixels if isinstance(patch, Patch) else np.asarray(patch)


def estimate_stain_matrix(
    patch,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
) -> StainMatrix:
    """Estimate the H/E stain basis from a patch's OD cloud.

    Keeps pixels whose OD magnitude exceeds beta (faint, near-background
    pixels are discarded), takes the top-2 principal plane, and reads the
    alpha / (100-alpha) percentile angle directions as the extreme stain
    vectors.
    """
    od = rgb_to_od(_pixels_of(patch)).reshape(-1, 3)
    tissue = od[np.linalg.norm(od, axis=1) > beta]
    if tissue.shape[0] < MIN_TISSUE_PIXELS:
        raise NoTissueError(
            f"only {tissue.shape[0]} pixels above OD {beta}, need {MIN_TISSUE_PIXELS}"
        )

    _, eigvecs = np.linalg.eigh(np.cov(tissue.T))
    plane = eigvecs[:, 1:3][:, ::-1]  # top-2 eigenvectors, largest first
    # orient so projections are predominantly positive
    for k in range(2):
        if np.sum(tissue @ plane[:, k]) < 0:
            plane[:, k] = -plane[:, k]

    proj = tissue @ plane
    phi = np.arctan2(proj[:, 1], proj[:, 0])
    phi_min = np.percentile(phi, alpha)
    phi_max = np.percentile(phi, 100 - alpha)
    if np.degrees(phi_max - phi_min) < 1.0:
        raise DegenerateStainError(
            f"OD angle spread {np.degrees(phi_max - phi_min):.3f} deg < 1 deg"
        )

    v1 = plane @ np.array([np.cos(phi_min), np.sin(phi_min)])
    v2 = plane @ np.array([np.cos(phi_max), np.sin(phi_max)])
    v1 = _nonneg_unit(v1)
    v2 = _nonneg_unit(v2)

    # hematoxylin is the more blue-absorbing vector; tie on red channel
    if (v1[2], v1[0]) > (v2[2], v2[0]):
        h, e = v1, v2
    else:
        h, e = v2, v1
    return StainMatrix(h_vector=h, e_vector=e)


def _nonneg_unit(v: np.ndarray) -> np.ndarray:
    if np.sum(v) < 0:
        v = -v
    return _unit(np.clip(v, 0, None))


def decompose(pixels: np.ndarray, stains: StainMatrix) -> np.ndarray:
    """Per-pixel (H, E) concentrations via clipped pseudo-inverse."""
    pixels = np.asarray(pixels)
    od = rgb_to_od(pixels).reshape(-1, 3)
    conc = od @ np.linalg.pinv(stains.matrix).T
    conc = np.clip(conc, 0, None)
    return conc.reshape(pixels.shape[:-1] + (2,))


def render(concentrations: np.ndarray, stains: StainMatrix) -> np.ndarray:
    """Beer-Lambert forward model: concentrations -> RGB through a stain basis."""
    conc = np.asarray(concentrations, float)
    od = conc.reshape(-1, 2) @ stains.matrix.T
    return od_to_rgb(od).reshape(conc.shape[:-1] + (3,))


def max_concentrations(concentrations: np.ndarray) -> np.ndarray:
    flat = np.asarray(concentrations).reshape(-1, 2)
    return np.percentile(flat, PERCENTILE_MAX_CONC, axis=0)


def normalize_patch(
    patch,
    reference: NormalizationReference = DEFAULT_REFERENCE,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
):
    """Re-render a patch in the reference stain basis at reference intensity.

    Returns the same type as given (Patch in, Patch out).
    """
    pixels = _pixels_of(patch)
    stains = estimate_stain_matrix(pixels, alpha=alpha, beta=beta)
    conc = decompose(pixels, stains)
    max_c = np.maximum(max_concentrations(conc), 1e-8)
    scaled = conc * (reference.max_concentrations / max_c)
    out = render(scaled, reference.stain_matrix)
    if isinstance(patch, Patch):
        return dataclasses.replace(patch, pixels=out)
    return out
