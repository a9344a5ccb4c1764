import type {
  Explanation,
  PatchScore,
  SlideMeta,
  SweepRequestBody,
  SweepTrace,
  Verdict,
  VerdictBody,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClientError extends Error {
  constructor(
    message: string,
    readonly status: number,
    readonly kind: string,
  ) {
    super(message);
  }
}

/** Thin typed client over the workbench HTTP API. */
export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: {} };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    if (!resp.ok) {
      let kind = "HTTPError";
      let detail = resp.statusText;
      try {
        const err = await resp.json();
        kind = err.error ?? kind;
        detail = err.detail ?? detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiClientError(detail, resp.status, kind);
    }
    return (await resp.json()) as T;
  }

  listSlides(): Promise<string[]> {
    return this.request<{ slides: string[] }>("GET", "/slides").then((r) => r.slides);
  }

  slideMeta(slideId: string): Promise<SlideMeta> {
    return this.request("GET", `/slides/${slideId}/meta`);
  }

  tileUrl(slideId: string, level: number, col: number, row: number): string {
    return `${this.baseUrl}/slides/${slideId}/tiles/${level}/${col}/${row}`;
  }

  score(
    slideId: string,
    centerX: number,
    centerY: number,
    sizePx = 224,
    targetMpp = 1.14,
  ): Promise<PatchScore> {
    return this.request("POST", `/slides/${slideId}/score`, {
      center_x0: centerX,
      center_y0: centerY,
      size_px: sizePx,
      target_mpp: targetMpp,
    });
  }

  runSweep(slideId: string, body: SweepRequestBody): Promise<SweepTrace> {
    return this.request("POST", `/slides/${slideId}/sweeps`, body);
  }

  getSweep(traceId: string): Promise<SweepTrace> {
    return this.request("GET", `/sweeps/${traceId}`);
  }

  postVerdict(body: VerdictBody): Promise<Verdict> {
    return this.request("POST", "/verdicts", body);
  }

  listVerdicts(traceId?: string): Promise<Verdict[]> {
    const query = traceId ? `?trace_id=${encodeURIComponent(traceId)}` : "";
    return this.request<{ verdicts: Verdict[] }>("GET", `/verdicts${query}`).then(
      (r) => r.verdicts,
    );
  }

  listExplanations(): Promise<Explanation[]> {
    return this.request<{ explanations: Explanation[] }>("GET", "/explanations").then(
      (r) => r.explanations,
    );
  }

  putExplanation(explanation: Explanation): Promise<Explanation> {
    return this.request("POST", "/explanations", explanation);
  }

  deleteExplanation(id: string): Promise<void> {
    return this.request("DELETE", `/explanations/${id}`).then(() => undefined);
  }
}
