"""Tiled multi-resolution image pyramid with physical scale metadata.

Slides are stored as directories of PNG tiles, one directory per level,
plus a ``meta.json`` describing geometry and microns-per-pixel:

    slides/<id>/meta.json
    slides/<id>/<level>/<col>_<row>.png

Each level halves the previous one via 2x2 box filtering until the top
level fits in a single tile.
"""

from __future__ import annotations

import json
import math
import threading
import uuid
from dataclasses import dataclass, field, asdict
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    ConcurrentIngestError,
    IngestError,
    NotFound,
    OutOfBounds,
    ValidationError,
)

DEFAULT_TILE_SIZE = 256
DEFAULT_PATCH_SIZE = 224
DEFAULT_PATCH_MPP = 1.14

WHITE = 255


@dataclass(frozen=True)
class LevelMeta:
    level: int
    downsample: int
    width_px: int
    height_px: int
    cols: int
    rows: int


@dataclass(frozen=True)
class SlideMeta:
    slide_id: str
    width_px: int
    height_px: int
    mpp: float
    tile_size: int
    levels: list[LevelMeta] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SlideMeta":
        levels = [LevelMeta(**lv) for lv in d["levels"]]
        return cls(
            slide_id=d["slide_id"],
            width_px=d["width_px"],
            height_px=d["height_px"],
            mpp=d["mpp"],
            tile_size=d["tile_size"],
            levels=levels,
        )


@dataclass
class Patch:
    slide_id: str
    center_x0: int
    center_y0: int
    size_px: int
    target_mpp: float
    pixels: np.ndarray  # (size_px, size_px, 3) uint8
    level_used: int = 0
    upsampled: bool = False

    def to_png_bytes(self) -> bytes:
        buf = BytesIO()
        Image.fromarray(self.pixels).save(buf, format="PNG")
        return buf.getvalue()


def box_downsample(raster: np.ndarray) -> np.ndarray:
    """Halve a raster with a 2x2 box filter; odd edges average available pixels."""
    h, w = raster.shape[:2]
    ph, pw = h + (h % 2), w + (w % 2)
    padded = np.empty((ph, pw, raster.shape[2]), dtype=np.float64)
    padded[:h, :w] = raster
    if ph > h:
        padded[h:, :w] = raster[h - 1 :, :]
    if pw > w:
        padded[:h, w:] = raster[:, w - 1 :]
    if ph > h and pw > w:
        padded[h:, w:] = raster[h - 1 :, w - 1 :]
    pooled = (
        padded[0::2, 0::2] + padded[1::2, 0::2] + padded[0::2, 1::2] + padded[1::2, 1::2]
    ) / 4.0
    return np.rint(pooled).astype(np.uint8)


def _as_rgb_array(raster) -> np.ndarray:
    if isinstance(raster, (str, Path)):
        try:
            raster = Image.open(raster)
        except Exception as exc:
            raise IngestError(f"cannot read raster: {exc}") from exc
    if isinstance(raster, Image.Image):
        raster = np.asarray(raster.convert("RGB"))
    raster = np.asarray(raster)
    if raster.ndim == 2:
        raster = np.stack([raster] * 3, axis=-1)
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise IngestError(f"expected RGB raster, got shape {raster.shape}")
    if raster.size == 0:
        raise IngestError("empty raster")
    return raster.astype(np.uint8)


class SlideStore:
    """Filesystem-backed pyramid store rooted at ``root``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._ingest_lock = threading.Lock()
        self._in_flight: set[str] = set()

    # -- ingestion ---------------------------------------------------------

    def ingest_image(
        self,
        raster,
        mpp: float,
        tile_size: int = DEFAULT_TILE_SIZE,
        slide_id: str | None = None,
    ) -> SlideMeta:
        if mpp is None or mpp <= 0:
            raise ValidationError(f"mpp must be > 0, got {mpp}")
        if tile_size < 64:
            raise ValidationError(f"tile_size must be >= 64, got {tile_size}")
        pixels = _as_rgb_array(raster)
        slide_id = slide_id or uuid.uuid4().hex[:12]

        with self._ingest_lock:
            if slide_id in self._in_flight:
                raise ConcurrentIngestError(f"slide {slide_id!r} is being ingested")
            if (self.root / slide_id).exists():
                raise ConcurrentIngestError(f"slide {slide_id!r} already exists")
            self._in_flight.add(slide_id)
        try:
            return self._write_pyramid(slide_id, pixels, mpp, tile_size)
        finally:
            with self._ingest_lock:
                self._in_flight.discard(slide_id)

    def _write_pyramid(
        self, slide_id: str, pixels: np.ndarray, mpp: float, tile_size: int
    ) -> SlideMeta:
        slide_dir = self.root / slide_id
        levels: list[LevelMeta] = []
        current = pixels
        level = 0
        downsample = 1
        while True:
            h, w = current.shape[:2]
            cols = math.ceil(w / tile_size)
            rows = math.ceil(h / tile_size)
            levels.append(
                LevelMeta(
                    level=level,
                    downsample=downsample,
                    width_px=w,
                    height_px=h,
                    cols=cols,
                    rows=rows,
                )
            )
            level_dir = slide_dir / str(level)
            level_dir.mkdir(parents=True, exist_ok=True)
            for row in range(rows):
                for col in range(cols):
                    tile = current[
                        row * tile_size : (row + 1) * tile_size,
                        col * tile_size : (col + 1) * tile_size,
                    ]
                    Image.fromarray(tile).save(level_dir / f"{col}_{row}.png")
            if w <= tile_size and h <= tile_size:
                break
            current = box_downsample(current)
            level += 1
            downsample *= 2

        meta = SlideMeta(
            slide_id=slide_id,
            width_px=pixels.shape[1],
            height_px=pixels.shape[0],
            mpp=float(mpp),
            tile_size=tile_size,
            levels=levels,
        )
        with open(slide_dir / "meta.json", "w") as f:
            json.dump(meta.to_dict(), f, indent=2)
        return meta

    # -- reads -------------------------------------------------------------

    def list_slides(self) -> list[str]:
        return sorted(
            p.name for p in self.root.iterdir() if (p / "meta.json").exists()
        )

    def meta(self, slide_id: str) -> SlideMeta:
        path = self.root / slide_id / "meta.json"
        if not path.exists():
            raise NotFound(f"unknown slide {slide_id!r}")
        with open(path) as f:
            return SlideMeta.from_dict(json.load(f))

    def tile_path(self, slide_id: str, level: int, col: int, row: int) -> Path:
        meta = self.meta(slide_id)
        if not 0 <= level < len(meta.levels):
            raise NotFound(f"slide {slide_id!r} has no level {level}")
        lv = meta.levels[level]
        if not (0 <= col < lv.cols and 0 <= row < lv.rows):
            raise NotFound(f"tile ({col},{row}) out of grid for level {level}")
        return self.root / slide_id / str(level) / f"{col}_{row}.png"

    def read_tile(self, slide_id: str, level: int, col: int, row: int) -> np.ndarray:
        return np.asarray(Image.open(self.tile_path(slide_id, level, col, row)))

    def tile_png_bytes(self, slide_id: str, level: int, col: int, row: int) -> bytes:
        return self.tile_path(slide_id, level, col, row).read_bytes()

    def read_region(
        self, slide_id: str, level: int, x: int, y: int, w: int, h: int
    ) -> np.ndarray:
        """Stitch a w x h region at level coords; out-of-bounds area is white."""
        meta = self.meta(slide_id)
        if not 0 <= level < len(meta.levels):
            raise NotFound(f"slide {slide_id!r} has no level {level}")
        if w <= 0 or h <= 0:
            raise ValidationError("region must have positive extent")
        lv = meta.levels[level]
        out = np.full((h, w, 3), WHITE, dtype=np.uint8)
        ix0, iy0 = max(x, 0), max(y, 0)
        ix1, iy1 = min(x + w, lv.width_px), min(y + h, lv.height_px)
        if ix0 >= ix1 or iy0 >= iy1:
            return out
        ts = meta.tile_size
        for row in range(iy0 // ts, (iy1 - 1) // ts + 1):
            for col in range(ix0 // ts, (ix1 - 1) // ts + 1):
                tile = self.read_tile(slide_id, level, col, row)
                tx0, ty0 = col * ts, row * ts
                sx0, sy0 = max(ix0, tx0), max(iy0, ty0)
                sx1 = min(ix1, tx0 + tile.shape[1])
                sy1 = min(iy1, ty0 + tile.shape[0])
                out[sy0 - y : sy1 - y, sx0 - x : sx1 - x] = tile[
                    sy0 - ty0 : sy1 - ty0, sx0 - tx0 : sx1 - tx0
                ]
        return out

    # -- patches -----------------------------------------------------------

    def extract_patch(
        self,
        slide_id: str,
        center_x0: float,
        center_y0: float,
        size_px: int = DEFAULT_PATCH_SIZE,
        target_mpp: float = DEFAULT_PATCH_MPP,
        level: int | None = None,
    ) -> Patch:
        """Extract a size_px square patch at target_mpp, bilinearly resampled.

        Picks the pyramid level with the largest mpp <= target_mpp unless
        ``level`` forces a route. Boundary overhang is padded white.
        """
        meta = self.meta(slide_id)
        if target_mpp <= 0:
            raise ValidationError(f"target_mpp must be > 0, got {target_mpp}")
        if not (0 <= center_x0 < meta.width_px and 0 <= center_y0 < meta.height_px):
            raise OutOfBounds(
                f"center ({center_x0},{center_y0}) outside slide "
                f"{meta.width_px}x{meta.height_px}"
            )
        if level is None:
            level = 0
            for lv in meta.levels:
                if meta.mpp * lv.downsample <= target_mpp * (1 + 1e-9):
                    level = lv.level
        lv = meta.levels[level]
        level_mpp = meta.mpp * lv.downsample
        upsampled = target_mpp < meta.mpp

        side = size_px * target_mpp / level_mpp
        side_px = max(1, round(side))
        cx = center_x0 / lv.downsample
        cy = center_y0 / lv.downsample
        x = round(cx - side / 2)
        y = round(cy - side / 2)
        region = self.read_region(slide_id, level, x, y, side_px, side_px)
        if side_px != size_px:
            img = Image.fromarray(region).resize(
                (size_px, size_px), resample=Image.BILINEAR
            )
            region = np.asarray(img)
        return Patch(
            slide_id=slide_id,
            center_x0=int(round(center_x0)),
            center_y0=int(round(center_y0)),
            size_px=size_px,
            target_mpp=target_mpp,
            pixels=region,
            level_used=level,
            upsampled=upsampled,
        )
