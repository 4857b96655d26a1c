// Pure review-session logic: slide ordering, the flagged-tile queue, and
// decision payload assembly. Kept DOM-free so it is directly testable.

import {
  CLASS_NAMES,
  ReviewDecision,
  SlideReport,
  SlideSummary,
  TileRef,
  Verdict,
} from './types.js';

/** Slides needing review come first; ties sort by slide id for stability. */
export function sortSlides(slides: SlideSummary[]): SlideSummary[] {
  return [...slides].sort((a, b) => {
    const ra = a.routing === 'manual_review' ? 0 : 1;
    const rb = b.routing === 'manual_review' ? 0 : 1;
    if (ra !== rb) return ra - rb;
    return a.slide_id < b.slide_id ? -1 : a.slide_id > b.slide_id ? 1 : 0;
  });
}

/**
 * Flagged-class tiles ordered by descending probability so the operator sees
 * the most confident detections first; ties fall back to grid order.
 */
export function buildTileQueue(report: SlideReport): TileRef[] {
  const flagged = new Set(report.flags);
  const { cols, level } = {
    cols: report.reference.cols,
    level: report.reference.level,
  };
  const queue: TileRef[] = [];
  report.tiles.labels.forEach((label, index) => {
    const className = CLASS_NAMES[label];
    if (className === undefined || !flagged.has(className)) return;
    queue.push({
      level,
      col: index % cols,
      row: Math.floor(index / cols),
      className,
      probability: report.tiles.probs[index],
    });
  });
  queue.sort((a, b) => {
    if (a.probability !== b.probability) return b.probability - a.probability;
    const ka = a.row * cols + a.col;
    const kb = b.row * cols + b.col;
    return ka - kb;
  });
  return queue;
}

export type VerdictChoice = 'confirmed' | 'dismissed';

/** Assemble the POST body; verdicts follow queue order. */
export function buildDecision(
  reviewerId: string,
  disposition: string,
  queue: TileRef[],
  choices: Map<number, VerdictChoice>,
  note = '',
): ReviewDecision {
  const verdicts: Verdict[] = [];
  queue.forEach((tile, index) => {
    const choice = choices.get(index);
    if (!choice) return;
    verdicts.push({
      level: tile.level,
      col: tile.col,
      row: tile.row,
      confirmed: choice === 'confirmed',
      corrected_class: null,
    });
  });
  return { reviewer_id: reviewerId, disposition, verdicts, note };
}

export function queueProgress(queue: TileRef[], choices: Map<number, VerdictChoice>): string {
  return `${choices.size}/${queue.length}`;
}
