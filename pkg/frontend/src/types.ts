// Shapes of the review service API payloads.

export interface SlideSummary {
  slide_id: string;
  routing: 'auto_pass' | 'manual_review';
  flags: string[];
  flag_counts: Record<string, number>;
  reviewed: boolean;
}

export interface GridReference {
  level: number;
  tile_size: number;
  cols: number;
  rows: number;
}

export interface SlideReport {
  schema_version: number;
  slide_id: string;
  reference: GridReference;
  tiles: { labels: number[]; probs: number[] };
  class_counts: Record<string, number>;
  class_fractions: Record<string, number>;
  flags: string[];
  routing: string;
  suggested_steps: string[];
  ensemble_digest: string;
  timestamp: string;
}

export interface TileRef {
  level: number;
  col: number;
  row: number;
  className: string;
  probability: number;
}

export interface Verdict {
  level: number;
  col: number;
  row: number;
  confirmed: boolean;
  corrected_class: string | null;
}

export interface ReviewDecision {
  reviewer_id: string;
  disposition: string;
  verdicts: Verdict[];
  note: string;
}

export const DISPOSITIONS = [
  'release',
  'rescan',
  'recut',
  'restain',
  'recoverslip',
  'reembed',
] as const;

export type Disposition = (typeof DISPOSITIONS)[number];

export function isDisposition(value: string): value is Disposition {
  return (DISPOSITIONS as readonly string[]).includes(value);
}

// Mirrors the service's class table; index = class id in report tile labels.
export const CLASS_NAMES = [
  'background',
  'tissue',
  'air_bubble',
  'chatter',
  'coverslip_scratch',
  'debris',
  'dropped_tissue',
  'dust',
  'focus',
  'fold',
  'pen',
  'tissue_scratch',
] as const;

// Same color table the triage heatmap uses, for cross-tool consistency.
export const CLASS_COLORS: Record<string, string> = {
  background: '#ffffff',
  tissue: '#e0e0e0',
  air_bubble: '#87cefa',
  chatter: '#ff8c00',
  coverslip_scratch: '#009688',
  debris: '#795548',
  dropped_tissue: '#00c800',
  dust: '#708090',
  focus: '#ff00ff',
  fold: '#dc143c',
  pen: '#0000ff',
  tissue_scratch: '#ffd700',
};
