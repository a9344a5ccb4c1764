// JSON payload shapes of the workbench HTTP API. Field names mirror the
// server exactly; no renaming layer.

export interface LevelMeta {
  level: number;
  downsample: number;
  width_px: number;
  height_px: number;
  cols: number;
  rows: number;
}

export interface SlideMeta {
  slide_id: string;
  width_px: number;
  height_px: number;
  mpp: number;
  tile_size: number;
  levels: LevelMeta[];
}

export interface SaliencyGrid {
  rows: number;
  cols: number;
  values: number[];
}

export interface PatchScore {
  logit: number;
  saliency: SaliencyGrid;
  backend_id: string;
}

export interface SweepRequestBody {
  anchor_x0: number;
  anchor_y0: number;
  direction: [number, number];
  stride_px: number;
  steps: number;
  size_px?: number;
  target_mpp?: number;
  explanation_id?: string | null;
}

export interface SweepPoint {
  index: number;
  center_x0: number;
  center_y0: number;
  logit: number | null;
  saliency_ref: string | null;
}

export interface SweepTrace {
  trace_id: string;
  request: SweepRequestBody & { slide_id: string };
  points: SweepPoint[];
  created_at: string;
  backend_id: string;
  warnings: string[];
  error: string | null;
}

export type VerdictOutcome = "supports" | "contradicts" | "inconclusive";

export interface VerdictBody {
  trace_id: string;
  explanation_id: string;
  component_label: string;
  outcome: VerdictOutcome;
  note?: string;
  author?: string;
}

export interface Verdict extends VerdictBody {
  verdict_id: string;
  created_at: string;
  current: boolean;
}

export interface Explanation {
  id: string;
  name: string;
  text: string;
  criteria_notes?: string;
}

export interface ApiError {
  error: string;
  detail: string;
  retryable?: boolean;
}
