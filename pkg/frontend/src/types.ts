/** Wire types for the gateway's /api/v1 JSON payloads. */

export interface ImageRecord {
  image_id: string;
  latitude: number;
  longitude: number;
  heading: number;
  label: string;
  source: string;
  /** null until a model has been trained. */
  p_hotspot: number | null;
}

export interface ImageListing {
  total: number;
  page: number;
  page_size: number;
  items: ImageRecord[];
}

export interface CamResponse {
  image_id: string;
  method: string;
  threshold: number;
  probability: number;
  /** base64 PNG, image geometry. */
  heatmap_png: string;
  /** base64 PNG, white = accident-prone feature. */
  ap_mask_png: string;
}

export interface PromptInfo {
  design_name: string;
  subject_word: string;
  class_prompt: string;
  full_prompt: string;
}

export interface PromptListing {
  items: PromptInfo[];
}

export interface MaskResponse {
  mask_id: string;
  image_id: string;
  /** number of masked pixels, as rasterized by the server. */
  area: number;
}

export interface InpaintSubmission {
  image_id: string;
  mask_id: string;
  design_name?: string;
  prompt?: string;
  cfg_scale?: number;
  denoise_strength?: number;
  seed?: number;
  sampler_name?: string;
  n_candidates?: number;
}

export interface InpaintAccepted {
  job_id: string;
  session_id: string;
  /** non-blocking out-of-recommended-band notes from the server. */
  warnings: string[];
}

export type JobState = "queued" | "running" | "done" | "failed";

export interface JobInfo {
  job_id: string;
  kind: string;
  state: JobState;
  result?: Record<string, unknown> | null;
  error?: { code: string; message: string } | null;
}

export interface CandidateItem {
  candidate_id: string;
  /** base64 PNG. */
  png: string;
}

export interface CandidateListing {
  job_id: string;
  items: CandidateItem[];
  seeds: number[];
}

export interface SessionInfo {
  session_id: string;
  image_id: string;
  mask_id: string;
  chosen_candidate_id: string | null;
  p_before: number | null;
  p_after: number | null;
  revision: number;
  created_at: string;
}

export interface EvalReportBody {
  model_identity: string;
  sessions: SessionInfo[];
  mean_p_before: number;
  mean_p_after: number;
  mean_relative_drop_percent: number;
  drop_of_means_percent: number;
  n_excluded_zero_before: number;
}

export interface SaliencyResponse {
  image_id: string;
  source: string;
  salient_png: string;
  ap_mask_png: string;
  /** percent of the accident-prone mask that is salient; null when the mask is empty. */
  ratio: number | null;
  reason: string | null;
}

export interface ErrorEnvelope {
  error: { code: string; message: string };
}
