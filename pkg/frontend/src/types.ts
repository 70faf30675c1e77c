/** Wire-format types for the scoring service JSON API. */

export interface BoxJson {
  x_min: number;
  y_min: number;
  x_max: number;
  y_max: number;
  label?: string;
  confidence?: number;
}

export interface BoxesJson {
  boxes: BoxJson[];
}

export interface ScoreResponse {
  score: number;
  boxes: BoxesJson;
  saliency_grid: number[][];
  saliency_png_ref: string;
}

export interface SaliencyResponse {
  saliency_png_ref: string;
  width: number;
  height: number;
  checkpoint_id: string | null;
}

export interface RescoreRequest {
  saliency_png_ref: string;
  boxes: BoxesJson;
  threshold?: number;
  mode?: string;
  scale?: string;
}

export interface HealthResponse {
  status: string;
  checkpoint_id: string | null;
  text_detector: boolean;
  logo_detector: boolean;
  version: string;
}

/** Pixel dimensions of the image a session is working on. */
export interface ImageSize {
  width: number;
  height: number;
}
