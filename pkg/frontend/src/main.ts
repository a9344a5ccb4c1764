import { ApiClient } from "./api.js";
import { debounce } from "./debounce.js";
import { LatestGate } from "./latest.js";
import { patchExtent, ViewerState } from "./state.js";
import {
  buildSweepOverlay,
  saliencyToRgba,
  sweepChartSeries,
  visibleTiles,
} from "./overlay.js";
import type { PatchScore, SweepTrace, VerdictOutcome } from "./types.js";

const DEBOUNCE_MS = 150;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function toast(message: string, isError = false): void {
  const host = el<HTMLDivElement>("toasts");
  const node = document.createElement("div");
  node.className = isError ? "toast error" : "toast";
  node.textContent = message;
  host.appendChild(node);
  setTimeout(() => node.remove(), 4000);
}

class Viewer {
  private state!: ViewerState;
  private score: PatchScore | null = null;
  private trace: SweepTrace | null = null;
  private readonly tiles = new Map<string, HTMLImageElement>();
  private readonly scoreGate = new LatestGate<PatchScore>();
  private readonly canvas = el<HTMLCanvasElement>("viewer");
  private readonly chart = el<HTMLCanvasElement>("chart");

  private readonly scoreSoon = debounce(() => this.requestScore(), DEBOUNCE_MS);

  constructor(private readonly api: ApiClient) {}

  async open(slideId: string): Promise<void> {
    const meta = await this.api.slideMeta(slideId);
    this.state = new ViewerState(meta);
    this.score = null;
    this.trace = null;
    this.tiles.clear();
    this.scoreGate.invalidate();
    this.requestScore();
    this.render();
  }

  private setState(next: ViewerState): void {
    this.state = next;
    this.render();
  }

  // -- scoring ---------------------------------------------------------------

  private requestScore(): void {
    const { patch, meta } = this.state;
    this.scoreGate
      .run(
        () =>
          this.api.score(
            meta.slide_id,
            patch.centerX,
            patch.centerY,
            patch.sizePx,
            patch.targetMpp,
          ),
        (score) => {
          this.score = score;
          this.render();
        },
      )
      .catch((err) => toast(`score failed: ${err.message}`, true));
  }

  movePatch(centerX: number, centerY: number): void {
    this.setState(this.state.movePatchTo(centerX, centerY));
    this.score = null; // stale until the debounced request lands
    this.scoreSoon();
  }

  // -- sweeps ------------------------------------------------------------------

  async runSweep(dx: number, dy: number, stride: number, steps: number): Promise<void> {
    const { patch, meta } = this.state;
    try {
      this.trace = await this.api.runSweep(meta.slide_id, {
        anchor_x0: patch.centerX,
        anchor_y0: patch.centerY,
        direction: [dx, dy],
        stride_px: stride,
        steps,
        size_px: patch.sizePx,
        target_mpp: patch.targetMpp,
        explanation_id: this.state.selectedExplanationId,
      });
      this.state.currentTraceId = this.trace.trace_id;
      for (const warning of this.trace.warnings) toast(warning);
      await this.refreshVerdicts();
      this.render();
    } catch (err) {
      toast(`sweep failed: ${(err as Error).message}`, true);
    }
  }

  async submitVerdict(outcome: VerdictOutcome, note: string): Promise<void> {
    if (!this.state.currentTraceId || !this.state.selectedExplanationId) {
      toast("run a sweep and select an explanation first", true);
      return;
    }
    try {
      await this.api.postVerdict({
        trace_id: this.state.currentTraceId,
        explanation_id: this.state.selectedExplanationId,
        component_label: this.state.selectedComponent || "(whole explanation)",
        outcome,
        note,
      });
      await this.refreshVerdicts();
    } catch (err) {
      toast(`verdict failed: ${(err as Error).message}`, true);
    }
  }

  private async refreshVerdicts(): Promise<void> {
    if (!this.state.currentTraceId) return;
    const verdicts = await this.api.listVerdicts(this.state.currentTraceId);
    const host = el<HTMLUListElement>("verdict-list");
    host.innerHTML = "";
    for (const v of verdicts) {
      const item = document.createElement("li");
      item.textContent =
        `${v.outcome} [${v.component_label}] ${v.note}` + (v.current ? "" : " (superseded)");
      host.appendChild(item);
    }
  }

  // -- rendering ---------------------------------------------------------------

  private tileImage(level: number, col: number, row: number): HTMLImageElement {
    const key = `${level}/${col}/${row}`;
    let img = this.tiles.get(key);
    if (!img) {
      img = new Image();
      img.src = this.api.tileUrl(this.state.meta.slide_id, level, col, row);
      img.onload = () => this.render();
      this.tiles.set(key, img);
    }
    return img;
  }

  render(): void {
    const ctx = this.canvas.getContext("2d")!;
    const { width, height } = this.canvas;
    const toScreen = (p: { x: number; y: number }) => this.state.toScreen(p, width, height);
    ctx.fillStyle = "#fff";
    ctx.fillRect(0, 0, width, height);

    const level = this.state.level;
    for (const tile of visibleTiles(
      this.state.meta, level, this.state.viewport.zoom, toScreen, width, height,
    )) {
      const img = this.tileImage(tile.level, tile.col, tile.row);
      if (img.complete && img.naturalWidth > 0) {
        ctx.drawImage(img, tile.x, tile.y, tile.side, tile.side);
      }
    }

    this.renderPatchBox(ctx, toScreen);
    if (this.trace) {
      const overlay = buildSweepOverlay(
        this.trace, this.state.meta.mpp, this.state.viewport.zoom, toScreen,
      );
      ctx.strokeStyle = "#0a84ff";
      ctx.fillStyle = "#0a84ff";
      ctx.font = "12px sans-serif";
      ctx.textAlign = "center";
      for (const outline of overlay.outlines) {
        ctx.strokeRect(outline.x, outline.y, outline.side, outline.side);
      }
      for (const badge of overlay.badges) {
        ctx.fillText(badge.text, badge.x, badge.y);
      }
      this.renderChart();
    }
  }

  private renderPatchBox(
    ctx: CanvasRenderingContext2D,
    toScreen: (p: { x: number; y: number }) => { x: number; y: number },
  ): void {
    const { patch, meta, overlays } = this.state;
    const side = patchExtent(patch, meta.mpp) * this.state.viewport.zoom;
    const center = toScreen({ x: patch.centerX, y: patch.centerY });
    const x = center.x - side / 2;
    const y = center.y - side / 2;

    if (overlays.saliency && this.score) {
      const grid = this.score.saliency;
      const rgba = saliencyToRgba(grid, overlays.opacity);
      const image = new ImageData(rgba, grid.cols, grid.rows);
      const scratch = document.createElement("canvas");
      scratch.width = grid.cols;
      scratch.height = grid.rows;
      scratch.getContext("2d")!.putImageData(image, 0, 0);
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(scratch, x, y, side, side);
      ctx.imageSmoothingEnabled = true;
    }

    ctx.strokeStyle = "#d62728";
    ctx.lineWidth = 2;
    ctx.strokeRect(x, y, side, side);
    ctx.fillStyle = "#d62728";
    ctx.font = "bold 14px sans-serif";
    ctx.textAlign = "center";
    const label = this.score ? this.score.logit.toFixed(2) : "…";
    ctx.fillText(label, center.x, y - 6);
    ctx.lineWidth = 1;
  }

  private renderChart(): void {
    if (!this.trace) return;
    const ctx = this.chart.getContext("2d")!;
    const { width, height } = this.chart;
    ctx.clearRect(0, 0, width, height);
    const series = sweepChartSeries(this.trace);
    const logits = series.map((p) => p.logit).filter((l): l is number => l !== null);
    if (logits.length === 0) return;
    const lo = Math.min(...logits);
    const hi = Math.max(...logits);
    const span = hi - lo || 1;
    ctx.strokeStyle = "#0a84ff";
    ctx.beginPath();
    let started = false;
    for (const point of series) {
      if (point.logit === null) {
        started = false;
        continue;
      }
      const x = (point.step / Math.max(1, series.length - 1)) * (width - 20) + 10;
      const y = height - 12 - ((point.logit - lo) / span) * (height - 24);
      if (started) ctx.lineTo(x, y);
      else ctx.moveTo(x, y);
      started = true;
    }
    ctx.stroke();
  }

  // -- input -------------------------------------------------------------------

  attachInput(): void {
    let dragging: "pan" | "patch" | null = null;
    let last = { x: 0, y: 0 };

    this.canvas.addEventListener("pointerdown", (ev) => {
      const { width, height } = this.canvas;
      const slide = this.state.toSlide({ x: ev.offsetX, y: ev.offsetY }, width, height);
      const half = patchExtent(this.state.patch, this.state.meta.mpp) / 2;
      const inBox =
        Math.abs(slide.x - this.state.patch.centerX) <= half &&
        Math.abs(slide.y - this.state.patch.centerY) <= half;
      dragging = inBox ? "patch" : "pan";
      last = { x: ev.offsetX, y: ev.offsetY };
      this.canvas.setPointerCapture(ev.pointerId);
    });

    this.canvas.addEventListener("pointermove", (ev) => {
      if (!dragging) return;
      const dx = (ev.offsetX - last.x) / this.state.viewport.zoom;
      const dy = (ev.offsetY - last.y) / this.state.viewport.zoom;
      last = { x: ev.offsetX, y: ev.offsetY };
      if (dragging === "patch") {
        this.movePatch(this.state.patch.centerX + dx, this.state.patch.centerY + dy);
      } else {
        this.setState(
          this.state.panTo(
            this.state.viewport.centerX - dx,
            this.state.viewport.centerY - dy,
          ),
        );
      }
    });

    this.canvas.addEventListener("pointerup", () => (dragging = null));

    this.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.setState(this.state.zoomBy(ev.deltaY < 0 ? 1.2 : 1 / 1.2));
    });
  }

  get viewerState(): ViewerState {
    return this.state;
  }
}

async function bootstrap(): Promise<void> {
  const base = (window as unknown as { SLIDEPROBE_URL?: string }).SLIDEPROBE_URL ??
    "http://127.0.0.1:8765";
  const api = new ApiClient(base);
  const viewer = new Viewer(api);
  viewer.attachInput();

  const slideSelect = el<HTMLSelectElement>("slide-select");
  const slides = await api.listSlides();
  for (const id of slides) {
    const option = document.createElement("option");
    option.value = option.textContent = id;
    slideSelect.appendChild(option);
  }
  slideSelect.addEventListener("change", () => viewer.open(slideSelect.value));
  if (slides.length > 0) await viewer.open(slides[0]);

  const explanationSelect = el<HTMLSelectElement>("explanation-select");
  const refreshExplanations = async () => {
    explanationSelect.innerHTML = "";
    for (const exp of await api.listExplanations()) {
      const option = document.createElement("option");
      option.value = exp.id;
      option.textContent = exp.name;
      explanationSelect.appendChild(option);
    }
    viewer.viewerState.selectedExplanationId = explanationSelect.value || null;
  };
  await refreshExplanations();
  explanationSelect.addEventListener("change", () => {
    viewer.viewerState.selectedExplanationId = explanationSelect.value;
  });
  el<HTMLInputElement>("component-input").addEventListener("input", (ev) => {
    viewer.viewerState.selectedComponent = (ev.target as HTMLInputElement).value;
  });

  el<HTMLButtonElement>("sweep-run").addEventListener("click", () => {
    void viewer.runSweep(
      Number(el<HTMLInputElement>("sweep-dx").value),
      Number(el<HTMLInputElement>("sweep-dy").value),
      Number(el<HTMLInputElement>("sweep-stride").value),
      Number(el<HTMLInputElement>("sweep-steps").value),
    );
  });

  for (const outcome of ["supports", "contradicts", "inconclusive"] as const) {
    el<HTMLButtonElement>(`verdict-${outcome}`).addEventListener("click", () => {
      void viewer.submitVerdict(outcome, el<HTMLTextAreaElement>("verdict-note").value);
    });
  }

  el<HTMLButtonElement>("explanation-save").addEventListener("click", async () => {
    try {
      await api.putExplanation({
        id: el<HTMLInputElement>("explanation-id").value,
        name: el<HTMLInputElement>("explanation-name").value,
        text: el<HTMLTextAreaElement>("explanation-text").value,
      });
      await refreshExplanations();
      toast("explanation saved");
    } catch (err) {
      toast(`save failed: ${(err as Error).message}`, true);
    }
  });
}

if (typeof document !== "undefined" && document.getElementById("viewer")) {
  void bootstrap();
}
