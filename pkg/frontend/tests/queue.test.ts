import { describe, expect, it } from 'vitest';

import { buildDecision, buildTileQueue, queueProgress, sortSlides } from '../src/queue.js';
import { CLASS_NAMES, SlideReport, SlideSummary } from '../src/types.js';

function summary(id: string, routing: SlideSummary['routing'], reviewed = false): SlideSummary {
  return { slide_id: id, routing, flags: [], flag_counts: {}, reviewed };
}

const PEN = CLASS_NAMES.indexOf('pen');
const FOLD = CLASS_NAMES.indexOf('fold');

function report(overrides: Partial<SlideReport> = {}): SlideReport {
  // 4x2 grid: two pen tiles, one fold tile, rest negative
  const labels = [0, PEN, 0, FOLD, PEN, 0, 0, 0];
  const probs = [0, 0.7, 0, 0.95, 0.9, 0, 0, 0];
  return {
    schema_version: 1,
    slide_id: 's-demo',
    reference: { level: 2, tile_size: 256, cols: 4, rows: 2 },
    tiles: { labels, probs },
    class_counts: { pen: 2, fold: 1 },
    class_fractions: { pen: 0.25, fold: 0.125 },
    flags: ['fold', 'pen'],
    routing: 'manual_review',
    suggested_steps: ['recut'],
    ensemble_digest: 'abc',
    timestamp: '2026-01-01T00:00:00+00:00',
    ...overrides,
  };
}

describe('sortSlides', () => {
  it('puts manual_review slides first, then sorts by id', () => {
    const slides = [
      summary('s-c', 'auto_pass'),
      summary('s-b', 'manual_review'),
      summary('s-a', 'auto_pass'),
      summary('s-d', 'manual_review'),
    ];
    expect(sortSlides(slides).map((s) => s.slide_id)).toEqual(['s-b', 's-d', 's-a', 's-c']);
  });

  it('does not mutate its input', () => {
    const slides = [summary('s-b', 'auto_pass'), summary('s-a', 'manual_review')];
    sortSlides(slides);
    expect(slides[0].slide_id).toBe('s-b');
  });
});

describe('buildTileQueue', () => {
  it('contains only flagged-class tiles ordered by descending probability', () => {
    const queue = buildTileQueue(report());
    expect(queue).toHaveLength(3);
    expect(queue.map((t) => t.probability)).toEqual([0.95, 0.9, 0.7]);
    expect(queue[0]).toMatchObject({ className: 'fold', col: 3, row: 0, level: 2 });
    expect(queue[1]).toMatchObject({ className: 'pen', col: 0, row: 1 });
  });

  it('excludes predicted classes that are not flagged', () => {
    const queue = buildTileQueue(report({ flags: ['pen'] }));
    expect(queue).toHaveLength(2);
    expect(queue.every((t) => t.className === 'pen')).toBe(true);
  });

  it('is empty when nothing is flagged', () => {
    expect(buildTileQueue(report({ flags: [] }))).toHaveLength(0);
  });

  it('breaks probability ties in row-major grid order', () => {
    const labels = [PEN, 0, 0, 0, 0, 0, 0, PEN];
    const probs = [0.8, 0, 0, 0, 0, 0, 0, 0.8];
    const queue = buildTileQueue(report({ tiles: { labels, probs }, flags: ['pen'] }));
    expect(queue.map((t) => [t.row, t.col])).toEqual([
      [0, 0],
      [1, 3],
    ]);
  });

  it('matches the spec example: seven flagged pen tiles give a queue of seven', () => {
    const labels = new Array(48).fill(0);
    const probs = new Array(48).fill(0);
    for (let i = 0; i < 7; i += 1) {
      labels[i * 5] = PEN;
      probs[i * 5] = 0.6 + i * 0.05;
    }
    const r = report({
      reference: { level: 2, tile_size: 256, cols: 8, rows: 6 },
      tiles: { labels, probs },
      flags: ['pen'],
    });
    expect(buildTileQueue(r)).toHaveLength(7);
  });
});

describe('buildDecision', () => {
  it('serializes confirms and dismissals in queue order', () => {
    const queue = buildTileQueue(report());
    const choices = new Map<number, 'confirmed' | 'dismissed'>([
      [0, 'confirmed'],
      [1, 'dismissed'],
      [2, 'confirmed'],
    ]);
    const decision = buildDecision('rev-1', 'release', queue, choices, 'ok');
    expect(decision.reviewer_id).toBe('rev-1');
    expect(decision.disposition).toBe('release');
    expect(decision.note).toBe('ok');
    expect(decision.verdicts).toHaveLength(3);
    expect(decision.verdicts[0]).toEqual({
      level: 2,
      col: 3,
      row: 0,
      confirmed: true,
      corrected_class: null,
    });
    expect(decision.verdicts[1].confirmed).toBe(false);
  });

  it('confirming every tile posts one verdict per queue entry', () => {
    const queue = buildTileQueue(report());
    const choices = new Map(queue.map((_, i) => [i, 'confirmed' as const]));
    const decision = buildDecision('rev-1', 'release', queue, choices);
    expect(decision.verdicts).toHaveLength(queue.length);
    expect(decision.verdicts.every((v) => v.confirmed)).toBe(true);
  });

  it('skips undecided tiles', () => {
    const queue = buildTileQueue(report());
    const decision = buildDecision('rev-1', 'recut', queue, new Map([[1, 'dismissed' as const]]));
    expect(decision.verdicts).toHaveLength(1);
    expect(decision.verdicts[0].confirmed).toBe(false);
  });
});

describe('queueProgress', () => {
  it('formats decided/total', () => {
    const queue = buildTileQueue(report());
    expect(queueProgress(queue, new Map([[0, 'confirmed']]))).toBe('1/3');
  });
});
