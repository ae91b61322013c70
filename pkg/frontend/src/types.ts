/** Wire types for the punchhole /v1 HTTP API. */

export interface RectJson {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface ProgressJson {
  answered: number;
  /** Projected question total; null when the scheduler cannot know it
   * in advance (adaptive group punching). */
  total: number | null;
}

export interface StimulusJson {
  image_url: string;
  question: string;
  hidden: RectJson[];
  progress: ProgressJson;
  /** Sequence number of the question being asked; echoed back with the
   * answer so stale or duplicate posts are rejected with 409. */
  punch_seq: number;
}

export type SessionState =
  | { status: "active" | "level_complete"; stimulus: StimulusJson }
  | { status: "done"; questions: number };

export interface OpenSessionJson {
  session_id: string;
  status: string;
  stimulus: StimulusJson;
}

export interface MapScoreJson {
  level: number;
  row: number;
  col: number;
  score: number;
  rect: RectJson;
}

export interface MapGridJson {
  level: number;
  patch_side: number;
  rows: number;
  cols: number;
  width: number;
  height: number;
}

export interface MapJson {
  task_id: string;
  question: string;
  image_url: string;
  n_workers: number;
  tau: number;
  grid: MapGridJson;
  scores: MapScoreJson[];
  agreement: {
    consensus_important: [number, number][];
    consensus_unimportant: [number, number][];
    controversial: [number, number][];
  };
}
