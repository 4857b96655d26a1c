// Thin fetch wrapper over the review service endpoints.

import { ReviewDecision, SlideReport, SlideSummary } from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public error: string,
    detail: string,
  ) {
    super(detail);
  }
}

async function raiseForStatus(response: Response): Promise<void> {
  if (response.ok) return;
  let error = 'http_error';
  let detail = `${response.status} ${response.statusText}`;
  try {
    const body = await response.json();
    if (body && typeof body === 'object') {
      error = body.error ?? error;
      detail = body.detail ?? detail;
    }
  } catch {
    // non-JSON error body; keep the status line
  }
  throw new ApiError(response.status, error, detail);
}

export class ApiClient {
  constructor(private base = '') {}

  async listSlides(): Promise<SlideSummary[]> {
    const response = await fetch(`${this.base}/api/slides`);
    await raiseForStatus(response);
    return response.json();
  }

  async getReport(slideId: string): Promise<SlideReport> {
    const response = await fetch(`${this.base}/api/slides/${slideId}/report`);
    await raiseForStatus(response);
    return response.json();
  }

  async postReview(slideId: string, decision: ReviewDecision): Promise<string> {
    const response = await fetch(`${this.base}/api/slides/${slideId}/review`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(decision),
    });
    await raiseForStatus(response);
    const body = await response.json();
    return body.decision_id;
  }

  heatmapUrl(slideId: string): string {
    return `${this.base}/api/slides/${slideId}/heatmap.png`;
  }

  tileUrl(slideId: string, level: number, col: number, row: number): string {
    return `${this.base}/api/slides/${slideId}/tiles/${level}/${col}/${row}.png`;
  }
}
