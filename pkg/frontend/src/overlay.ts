import type { SaliencyGrid, SweepTrace } from "./types.js";
import type { Point } from "./state.js";

export interface PatchOutline {
  index: number;
  /** Screen-space corners: top-left and side length. */
  x: number;
  y: number;
  side: number;
}

export interface LogitBadge {
  index: number;
  x: number;
  y: number;
  text: string;
}

export interface SweepOverlay {
  outlines: PatchOutline[];
  badges: LogitBadge[];
}

export type ToScreen = (p: Point) => Point;

/**
 * Screen-space render model for a sweep trace: one outline and one logit
 * badge per trace point (steps + 1 of each for a full trace). Null logits
 * (no-tissue steps) render an explicit "null" badge rather than nothing.
 */
export function buildSweepOverlay(
  trace: SweepTrace,
  slideMpp: number,
  zoom: number,
  toScreen: ToScreen,
): SweepOverlay {
  const extent =
    ((trace.request.size_px ?? 224) * (trace.request.target_mpp ?? 1.14)) / slideMpp;
  const side = extent * zoom;
  const outlines: PatchOutline[] = [];
  const badges: LogitBadge[] = [];
  for (const point of trace.points) {
    const center = toScreen({ x: point.center_x0, y: point.center_y0 });
    outlines.push({
      index: point.index,
      x: center.x - side / 2,
      y: center.y - side / 2,
      side,
    });
    badges.push({
      index: point.index,
      x: center.x,
      y: center.y - side / 2 - 4,
      text: point.logit === null ? "null" : point.logit.toFixed(2),
    });
  }
  return { outlines, badges };
}

export interface ChartPoint {
  step: number;
  logit: number | null;
}

/** Logit-vs-step series for the sweep line chart; gaps stay as nulls. */
export function sweepChartSeries(trace: SweepTrace): ChartPoint[] {
  return trace.points.map((p) => ({ step: p.index, logit: p.logit }));
}

/**
 * Saliency grid -> RGBA pixels with a single-hue alpha ramp. Value 0 is
 * fully transparent; alpha scales with value times the overlay opacity.
 * One output pixel per grid cell; the canvas scales it onto the patch box.
 */
export function saliencyToRgba(
  grid: SaliencyGrid,
  opacity: number,
  hue: [number, number, number] = [220, 40, 40],
): Uint8ClampedArray<ArrayBuffer> {
  if (grid.values.length !== grid.rows * grid.cols) {
    throw new Error(
      `saliency grid ${grid.rows}x${grid.cols} with ${grid.values.length} values`,
    );
  }
  const out = new Uint8ClampedArray(grid.rows * grid.cols * 4);
  for (let i = 0; i < grid.values.length; i++) {
    const v = Math.min(1, Math.max(0, grid.values[i]));
    out[4 * i] = hue[0];
    out[4 * i + 1] = hue[1];
    out[4 * i + 2] = hue[2];
    out[4 * i + 3] = Math.round(255 * v * opacity);
  }
  return out;
}

export interface TileAddress {
  level: number;
  col: number;
  row: number;
  /** Screen-space placement. */
  x: number;
  y: number;
  side: number;
}

/**
 * Tiles of one pyramid level intersecting the viewport, with their screen
 * placement. The caller draws whichever are already loaded (progressive).
 */
export function visibleTiles(
  meta: { tile_size: number; levels: { level: number; downsample: number; cols: number; rows: number }[] },
  level: number,
  zoom: number,
  toScreen: ToScreen,
  canvasW: number,
  canvasH: number,
): TileAddress[] {
  const lv = meta.levels[level];
  const tileSide = meta.tile_size * lv.downsample * zoom;
  const tiles: TileAddress[] = [];
  for (let row = 0; row < lv.rows; row++) {
    for (let col = 0; col < lv.cols; col++) {
      const origin = toScreen({
        x: col * meta.tile_size * lv.downsample,
        y: row * meta.tile_size * lv.downsample,
      });
      if (
        origin.x + tileSide <= 0 ||
        origin.y + tileSide <= 0 ||
        origin.x >= canvasW ||
        origin.y >= canvasH
      ) {
        continue;
      }
      tiles.push({ level, col, row, x: origin.x, y: origin.y, side: tileSide });
    }
  }
  return tiles;
}
