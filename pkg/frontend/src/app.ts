// Review application: a slide browser plus a per-slide review view with a
// flagged-tile queue, verdict capture, and disposition submission. All state
// before submit is reconstructible from the server, so refreshing is safe.

import { ApiClient, ApiError } from './api.js';
import {
  VerdictChoice,
  buildDecision,
  buildTileQueue,
  queueProgress,
  sortSlides,
} from './queue.js';
import {
  CLASS_COLORS,
  DISPOSITIONS,
  SlideReport,
  SlideSummary,
  TileRef,
  isDisposition,
} from './types.js';

export class App {
  private api: ApiClient;
  private root: HTMLElement;
  private slides: SlideSummary[] = [];

  private report: SlideReport | null = null;
  private queue: TileRef[] = [];
  private cursor = 0;
  private choices = new Map<number, VerdictChoice>();
  private disposition = '';
  private note = '';
  private keyHandler = (event: KeyboardEvent) => this.onKey(event);

  constructor(root: HTMLElement, api: ApiClient = new ApiClient()) {
    this.root = root;
    this.api = api;
  }

  async start(): Promise<void> {
    await this.showSlideList();
  }

  // ------------------------------------------------------------ slide list

  async showSlideList(): Promise<void> {
    document.removeEventListener('keydown', this.keyHandler);
    this.report = null;
    try {
      this.slides = sortSlides(await this.api.listSlides());
    } catch (err) {
      this.renderError(`Could not load slides: ${describe(err)}`, () => this.showSlideList());
      return;
    }
    this.renderSlideList();
  }

  private renderSlideList(): void {
    const rows = this.slides
      .map((slide) => {
        const badge =
          slide.routing === 'manual_review'
            ? '<span class="badge review">manual review</span>'
            : '<span class="badge pass">auto pass</span>';
        const flags = slide.flags
          .map(
            (name) =>
              `<span class="flag" style="background:${CLASS_COLORS[name] ?? '#ccc'}">${name}` +
              ` (${slide.flag_counts[name] ?? 0})</span>`,
          )
          .join(' ');
        const reviewed = slide.reviewed ? '<span class="reviewed">&#10003; reviewed</span>' : '';
        return `<tr data-slide="${slide.slide_id}">
          <td class="mono">${slide.slide_id}</td>
          <td>${badge}</td>
          <td>${flags}</td>
          <td>${reviewed}</td>
        </tr>`;
      })
      .join('');
    this.root.innerHTML = `
      <header><h1>Slide QC review</h1></header>
      ${this.slides.length === 0 ? '<p class="empty">No screened slides yet.</p>' : ''}
      <table class="slides">
        <thead><tr><th>Slide</th><th>Routing</th><th>Flags</th><th></th></tr></thead>
        <tbody>${rows}</tbody>
      </table>`;
    this.root.querySelectorAll('tbody tr').forEach((row) => {
      row.addEventListener('click', () => {
        const id = (row as HTMLElement).dataset.slide;
        if (id) void this.openSlide(id);
      });
    });
  }

  // ------------------------------------------------------------ review view

  async openSlide(slideId: string): Promise<void> {
    try {
      this.report = await this.api.getReport(slideId);
    } catch (err) {
      this.renderError(`Could not load report for ${slideId}: ${describe(err)}`, () =>
        this.showSlideList(),
      );
      return;
    }
    this.queue = buildTileQueue(this.report);
    this.cursor = 0;
    this.choices = new Map();
    this.disposition = '';
    this.note = '';
    document.addEventListener('keydown', this.keyHandler);
    this.renderReview();
  }

  private renderReview(): void {
    const report = this.report;
    if (!report) return;
    const slideId = report.slide_id;
    const options = DISPOSITIONS.map(
      (d) => `<option value="${d}" ${d === this.disposition ? 'selected' : ''}>${d}</option>`,
    ).join('');
    const steps = report.suggested_steps.length
      ? `suggested: ${report.suggested_steps.join(', ')}`
      : 'no reprocess step suggested';
    this.root.innerHTML = `
      <header>
        <button id="back">&larr; slides</button>
        <h1 class="mono">${slideId}</h1>
        <span class="badge ${report.routing === 'manual_review' ? 'review' : 'pass'}">
          ${report.routing.replace('_', ' ')}</span>
      </header>
      <div class="columns">
        <section class="heatmap">
          <h2>Artifact map</h2>
          <img id="heatmap" src="${this.api.heatmapUrl(slideId)}" alt="heatmap of ${slideId}" />
          <p class="hint">${steps}</p>
        </section>
        <section class="tilepanel">
          <h2>Flagged tiles <span id="progress"></span></h2>
          <div id="tile-area"></div>
          <div class="controls">
            <button id="prev" title="previous (left arrow)">&larr;</button>
            <button id="confirm" title="confirm (c)">confirm</button>
            <button id="dismiss" title="dismiss (x)">dismiss</button>
            <button id="next" title="next (right arrow)">&rarr;</button>
          </div>
          <div class="decision">
            <label>disposition
              <select id="disposition">
                <option value="">choose...</option>${options}
              </select>
            </label>
            <label>note <input id="note" type="text" value="${this.note}" /></label>
            <button id="submit" disabled>submit decision</button>
          </div>
          <div id="banner"></div>
        </section>
      </div>`;
    this.bindReviewHandlers();
    this.renderTile();
  }

  private bindReviewHandlers(): void {
    this.byId('back').addEventListener('click', () => void this.showSlideList());
    this.byId('prev').addEventListener('click', () => this.step(-1));
    this.byId('next').addEventListener('click', () => this.step(1));
    this.byId('confirm').addEventListener('click', () => this.choose('confirmed'));
    this.byId('dismiss').addEventListener('click', () => this.choose('dismissed'));
    const select = this.byId('disposition') as HTMLSelectElement;
    select.addEventListener('change', () => {
      this.disposition = select.value;
      this.updateSubmit();
    });
    const note = this.byId('note') as HTMLInputElement;
    note.addEventListener('input', () => {
      this.note = note.value;
    });
    this.byId('submit').addEventListener('click', () => void this.submit());
  }

  private renderTile(): void {
    const report = this.report;
    if (!report) return;
    const area = this.byId('tile-area');
    this.byId('progress').textContent = `(${queueProgress(this.queue, this.choices)} decided)`;
    if (this.queue.length === 0) {
      area.innerHTML = '<p class="empty">No flagged tiles on this slide.</p>';
      return;
    }
    const tile = this.queue[this.cursor];
    const choice = this.choices.get(this.cursor);
    const state = choice ? `<span class="choice ${choice}">${choice}</span>` : '';
    area.innerHTML = `
      <p>
        tile ${this.cursor + 1} of ${this.queue.length}:
        <span class="flag" style="background:${CLASS_COLORS[tile.className] ?? '#ccc'}">
          ${tile.className}</span>
        p=${tile.probability.toFixed(3)} at (L${tile.level}, col ${tile.col}, row ${tile.row})
        ${state}
      </p>
      <img class="tile" src="${this.api.tileUrl(report.slide_id, tile.level, tile.col, tile.row)}"
           alt="tile ${tile.col},${tile.row}" />`;
  }

  private step(delta: number): void {
    if (this.queue.length === 0) return;
    this.cursor = Math.min(Math.max(this.cursor + delta, 0), this.queue.length - 1);
    this.renderTile();
  }

  private choose(choice: VerdictChoice): void {
    if (this.queue.length === 0) return;
    this.choices.set(this.cursor, choice);
    if (this.cursor < this.queue.length - 1) {
      this.cursor += 1;
    }
    this.renderTile();
  }

  private onKey(event: KeyboardEvent): void {
    if ((event.target as HTMLElement | null)?.tagName === 'INPUT') return;
    if (event.key === 'ArrowRight') this.step(1);
    else if (event.key === 'ArrowLeft') this.step(-1);
    else if (event.key === 'c') this.choose('confirmed');
    else if (event.key === 'x') this.choose('dismissed');
  }

  private updateSubmit(): void {
    const button = this.byId('submit') as HTMLButtonElement;
    button.disabled = !isDisposition(this.disposition);
  }

  private async submit(): Promise<void> {
    const report = this.report;
    if (!report || !isDisposition(this.disposition)) return;
    const decision = buildDecision(
      reviewerId(),
      this.disposition,
      this.queue,
      this.choices,
      this.note,
    );
    const banner = this.byId('banner');
    try {
      const id = await this.api.postReview(report.slide_id, decision);
      banner.innerHTML = `<p class="ok">Decision ${id} recorded.</p>`;
      await this.showSlideList();
    } catch (err) {
      // local verdicts are preserved so the operator can retry
      banner.innerHTML = `<p class="error">Submit failed: ${describe(err)}. Your verdicts are kept.</p>`;
    }
  }

  private renderError(message: string, retry: () => void): void {
    this.root.innerHTML = `
      <header><h1>Slide QC review</h1></header>
      <div class="error-banner">
        <p>${message}</p>
        <button id="retry">retry</button>
      </div>`;
    this.byId('retry').addEventListener('click', retry);
  }

  private byId(id: string): HTMLElement {
    const el = this.root.querySelector(`#${id}`);
    if (!el) throw new Error(`missing element #${id}`);
    return el as HTMLElement;
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `${err.error}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}

function reviewerId(): string {
  const stored = window.localStorage.getItem('reviewer_id');
  if (stored) return stored;
  const fresh = `reviewer-${Math.random().toString(36).slice(2, 8)}`;
  window.localStorage.setItem('reviewer_id', fresh);
  return fresh;
}
