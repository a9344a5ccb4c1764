import type { SlideMeta } from "./types.js";

export interface Viewport {
  /** Slide level-0 coordinates of the screen center. */
  centerX: number;
  centerY: number;
  /** Screen pixels per level-0 slide pixel; 1 = native resolution. */
  zoom: number;
}

export interface PatchBox {
  centerX: number;
  centerY: number;
  sizePx: number;
  targetMpp: number;
}

export interface OverlayToggles {
  saliency: boolean;
  opacity: number; // 0..1
}

export interface Point {
  x: number;
  y: number;
}

const MIN_ZOOM = 1 / 64;
const MAX_ZOOM = 8;

export function clamp(value: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, value));
}

/** Extent of the patch box in level-0 pixels. */
export function patchExtent(box: PatchBox, slideMpp: number): number {
  return (box.sizePx * box.targetMpp) / slideMpp;
}

/**
 * Pyramid level whose downsample best matches the zoom: the coarsest level
 * still at or above screen resolution, so tiles are never upscaled past 1:1.
 */
export function levelForZoom(meta: SlideMeta, zoom: number): number {
  let chosen = 0;
  for (const level of meta.levels) {
    if (level.downsample <= 1 / zoom) chosen = level.level;
  }
  return chosen;
}

/** Client-side UI state; every mutator returns a clamped copy. */
export class ViewerState {
  readonly viewport: Viewport;
  readonly patch: PatchBox;
  readonly overlays: OverlayToggles;
  selectedExplanationId: string | null = null;
  selectedComponent = "";
  currentTraceId: string | null = null;

  constructor(
    readonly meta: SlideMeta,
    viewport?: Partial<Viewport>,
    patch?: Partial<PatchBox>,
  ) {
    this.viewport = this.clampViewport({
      centerX: meta.width_px / 2,
      centerY: meta.height_px / 2,
      zoom: 1 / meta.levels[meta.levels.length - 1].downsample,
      ...viewport,
    });
    this.patch = this.clampPatch({
      centerX: meta.width_px / 2,
      centerY: meta.height_px / 2,
      sizePx: 224,
      targetMpp: 1.14,
      ...patch,
    });
    this.overlays = { saliency: true, opacity: 0.6 };
  }

  private clampViewport(v: Viewport): Viewport {
    return {
      centerX: clamp(v.centerX, 0, this.meta.width_px),
      centerY: clamp(v.centerY, 0, this.meta.height_px),
      zoom: clamp(v.zoom, MIN_ZOOM, MAX_ZOOM),
    };
  }

  private clampPatch(p: PatchBox): PatchBox {
    const half = patchExtent(p, this.meta.mpp) / 2;
    return {
      ...p,
      // keep the whole box inside the slide where it fits, else center it
      centerX: this.clampCenter(p.centerX, half, this.meta.width_px),
      centerY: this.clampCenter(p.centerY, half, this.meta.height_px),
    };
  }

  private clampCenter(value: number, half: number, extent: number): number {
    if (2 * half >= extent) return extent / 2;
    return clamp(value, half, extent - half);
  }

  panTo(centerX: number, centerY: number): ViewerState {
    return this.with({ viewport: { ...this.viewport, centerX, centerY } });
  }

  zoomBy(factor: number): ViewerState {
    return this.with({
      viewport: { ...this.viewport, zoom: this.viewport.zoom * factor },
    });
  }

  movePatchTo(centerX: number, centerY: number): ViewerState {
    return this.with({ patch: { ...this.patch, centerX, centerY } });
  }

  get level(): number {
    return levelForZoom(this.meta, this.viewport.zoom);
  }

  /** Level-0 slide coordinates -> screen pixels for a canvas of this size. */
  toScreen(p: Point, canvasW: number, canvasH: number): Point {
    const { centerX, centerY, zoom } = this.viewport;
    return {
      x: (p.x - centerX) * zoom + canvasW / 2,
      y: (p.y - centerY) * zoom + canvasH / 2,
    };
  }

  toSlide(p: Point, canvasW: number, canvasH: number): Point {
    const { centerX, centerY, zoom } = this.viewport;
    return {
      x: (p.x - canvasW / 2) / zoom + centerX,
      y: (p.y - canvasH / 2) / zoom + centerY,
    };
  }

  private with(changes: {
    viewport?: Viewport;
    patch?: PatchBox;
  }): ViewerState {
    const next = new ViewerState(
      this.meta,
      changes.viewport ?? this.viewport,
      changes.patch ?? this.patch,
    );
    next.overlays.saliency = this.overlays.saliency;
    next.overlays.opacity = this.overlays.opacity;
    next.selectedExplanationId = this.selectedExplanationId;
    next.selectedComponent = this.selectedComponent;
    next.currentTraceId = this.currentTraceId;
    return next;
  }
}
