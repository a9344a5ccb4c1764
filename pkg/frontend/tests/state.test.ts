import { describe, expect, it } from "vitest";

import { levelForZoom, patchExtent, ViewerState } from "../src/state.js";
import type { SlideMeta } from "../src/types.js";

const META: SlideMeta = {
  slide_id: "s",
  width_px: 2048,
  height_px: 512,
  mpp: 1.14,
  tile_size: 256,
  levels: [
    { level: 0, downsample: 1, width_px: 2048, height_px: 512, cols: 8, rows: 2 },
    { level: 1, downsample: 2, width_px: 1024, height_px: 256, cols: 4, rows: 1 },
    { level: 2, downsample: 4, width_px: 512, height_px: 128, cols: 2, rows: 1 },
    { level: 3, downsample: 8, width_px: 256, height_px: 64, cols: 1, rows: 1 },
  ],
};

describe("levelForZoom", () => {
  it("native zoom uses level 0", () => {
    expect(levelForZoom(META, 1)).toBe(0);
  });

  it("zoomed out picks the coarsest level at or above screen resolution", () => {
    expect(levelForZoom(META, 0.5)).toBe(1);
    expect(levelForZoom(META, 0.26)).toBe(1);
    expect(levelForZoom(META, 0.25)).toBe(2);
    expect(levelForZoom(META, 0.01)).toBe(3);
  });

  it("zoomed in past native stays at level 0", () => {
    expect(levelForZoom(META, 4)).toBe(0);
  });
});

describe("ViewerState clamping", () => {
  it("viewport center is clamped to the slide", () => {
    const state = new ViewerState(META).panTo(-500, 9999);
    expect(state.viewport.centerX).toBe(0);
    expect(state.viewport.centerY).toBe(512);
  });

  it("zoom is clamped", () => {
    let state = new ViewerState(META);
    for (let i = 0; i < 50; i++) state = state.zoomBy(2);
    expect(state.viewport.zoom).toBe(8);
    for (let i = 0; i < 100; i++) state = state.zoomBy(0.5);
    expect(state.viewport.zoom).toBe(1 / 64);
  });

  it("patch box never leaves the slide", () => {
    const state = new ViewerState(META).movePatchTo(0, 0);
    const half = patchExtent(state.patch, META.mpp) / 2;
    expect(state.patch.centerX).toBe(half);
    expect(state.patch.centerY).toBe(half);
    const right = state.movePatchTo(99999, 99999);
    expect(right.patch.centerX).toBe(2048 - half);
    expect(right.patch.centerY).toBe(512 - half);
  });

  it("patch extent converts through mpp", () => {
    const state = new ViewerState(META);
    expect(patchExtent(state.patch, META.mpp)).toBeCloseTo(224, 10);
    expect(patchExtent({ ...state.patch, targetMpp: 2.28 }, META.mpp)).toBeCloseTo(448, 10);
  });
});

describe("coordinate transforms", () => {
  it("toScreen and toSlide are inverses", () => {
    const state = new ViewerState(META, { centerX: 700, centerY: 300, zoom: 0.5 });
    const slide = { x: 123.25, y: 456.5 };
    const roundtrip = state.toSlide(state.toScreen(slide, 900, 700), 900, 700);
    expect(roundtrip.x).toBeCloseTo(slide.x, 9);
    expect(roundtrip.y).toBeCloseTo(slide.y, 9);
  });

  it("viewport center maps to canvas center", () => {
    const state = new ViewerState(META, { centerX: 700, centerY: 300, zoom: 2 });
    expect(state.toScreen({ x: 700, y: 300 }, 900, 700)).toEqual({ x: 450, y: 350 });
  });
});
