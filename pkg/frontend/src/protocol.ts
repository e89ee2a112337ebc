/** Wire shapes shared with the engine: channel frames and REST payloads. */

export type Stage = "uploading" | "ocr" | "generating" | "inserting" | "done" | "failed";

export interface InitAck {
  type: "ack";
  for: "upload.init";
  session_id: string;
  chunk_size: number;
  total_chunks: number;
}

export interface ChunkAck {
  type: "ack";
  for: "upload.chunk";
  index: number;
  status: "accepted" | "duplicate";
}

export interface ResumeAck {
  type: "ack";
  for: "upload.resume";
  session_id: string;
  missing: number[];
}

export interface CompleteAck {
  type: "ack";
  for: "upload.complete";
  document_id: string;
  job_id: string;
}

export interface ProgressFrame {
  type: "progress";
  id: string;
  stage: Stage;
  percent: number;
  log: string;
  ts: string;
}

export interface ResultFrame {
  type: "result";
  job_id: string;
  paper_id: string;
  question_count: number;
}

export interface ErrorFrame {
  type: "error";
  code: string;
  message: string;
}

export type ServerFrame =
  | InitAck
  | ChunkAck
  | ResumeAck
  | CompleteAck
  | ProgressFrame
  | ResultFrame
  | ErrorFrame;

export interface Choice {
  index: number;
  text: string;
  is_correct: boolean;
}

export interface Part {
  index: number;
  prompt: string;
  marks: number;
}

export interface Question {
  id: string;
  kind: "mcq" | "saq";
  stem: string;
  explanation: string | null;
  course_id: string;
  past_paper_id: string;
  concept_ids: string[];
  choices?: Choice[];
  parts?: Part[];
}

export interface Changeset {
  cursor: number;
  upserted_questions: Question[];
  retired_question_ids: string[];
}

export interface SyncOp {
  op_id: string;
  kind: "mcq-response" | "saq-response" | "feedback";
  payload: Record<string, unknown>;
  client_clock: string;
  user_id: string;
}

export interface PushResult {
  op_id: string;
  status: "applied" | "duplicate" | "rejected";
  reason?: string;
}

export interface FlagInfo {
  id: string;
  question_id: string;
  raised_by: string;
  reason: string;
  state: string;
  at: string;
  resolved_at: string | null;
}

/** Server page cap; every list request must respect it. */
export const MAX_PAGE_SIZE = 100;
