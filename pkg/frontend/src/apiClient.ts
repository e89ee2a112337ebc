/** Thin typed wrapper over the engine's HTTP routes.
 *
 * Network failures (fetch rejecting) raise NetworkError; the app treats that
 * as "offline", which is more reliable on flaky links than platform
 * connectivity flags. Server-reported failures raise ApiError with the
 * engine's stable error code.
 */

import {
  Changeset,
  FlagInfo,
  MAX_PAGE_SIZE,
  PushResult,
  Question,
  SyncOp,
} from "./protocol.js";

export class NetworkError extends Error {}

export class ApiError extends Error {
  constructor(public code: string, message: string, public status: number) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}) => Promise<{ status: number; json(): Promise<unknown> }>;

export interface QuestionPage {
  items: Question[];
  total: number;
  page: number;
  page_size: number;
}

export class ApiClient {
  private fetchImpl: FetchLike;

  constructor(private baseUrl: string, private token: string, fetchImpl?: FetchLike) {
    this.fetchImpl = fetchImpl ?? (fetch.bind(globalThis) as FetchLike);
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`, {
        method,
        headers: {
          Authorization: `Bearer ${this.token}`,
          ...(body !== undefined ? { "Content-Type": "application/json" } : {}),
        },
        ...(body !== undefined ? { body: JSON.stringify(body) } : {}),
      });
    } catch (err) {
      throw new NetworkError(String(err));
    }
    const payload = (await response.json()) as Record<string, unknown>;
    if (response.status >= 400) {
      throw new ApiError(
        String(payload.code ?? "unknown"),
        String(payload.message ?? response.status),
        response.status,
      );
    }
    return payload as T;
  }

  health(): Promise<{ status: string; version: string }> {
    return this.request("GET", "/health");
  }

  courses(institution?: string): Promise<{ items: { id: string; code: string; title: string }[] }> {
    const query = institution ? `?institution=${encodeURIComponent(institution)}` : "";
    return this.request("GET", `/courses${query}`);
  }

  paperQuestions(paperId: string, page = 1, pageSize = 20, state?: string): Promise<QuestionPage> {
    const size = Math.min(pageSize, MAX_PAGE_SIZE);
    const query = `?page=${page}&page_size=${size}` + (state ? `&state=${state}` : "");
    return this.request("GET", `/papers/${paperId}/questions${query}`);
  }

  postMcqResponse(questionId: string, chosenIndex: number):
      Promise<{ correct: boolean; explanation: string | null }> {
    return this.request("POST", `/questions/${questionId}/responses`,
                        { kind: "mcq", chosen_index: chosenIndex });
  }

  postSaqResponse(questionId: string, answers: { index: number; text: string }[],
                  selfCorrect: boolean): Promise<{ recorded: boolean }> {
    return this.request("POST", `/questions/${questionId}/responses`,
                        { kind: "saq", answers, self_correct: selfCorrect });
  }

  postFeedback(questionId: string, rating: number, comment?: string): Promise<{ recorded: boolean }> {
    return this.request("POST", `/questions/${questionId}/feedback`, { rating, comment });
  }

  flagQuestion(questionId: string, reason: string): Promise<FlagInfo> {
    return this.request("POST", `/questions/${questionId}/flags`, { reason });
  }

  listFlags(state?: string): Promise<{ items: FlagInfo[] }> {
    return this.request("GET", `/flags${state ? `?state=${state}` : ""}`);
  }

  resolveFlag(flagId: string, outcome: "republish" | "retire"): Promise<{ question_state: string }> {
    return this.request("POST", `/flags/${flagId}/resolve`, { outcome });
  }

  syncPush(ops: SyncOp[]): Promise<{ results: PushResult[] }> {
    return this.request("POST", "/sync/push", { ops });
  }

  syncPull(cursor?: number | null): Promise<Changeset> {
    const query = cursor === null || cursor === undefined ? "" : `?cursor=${cursor}`;
    return this.request("GET", `/sync/pull${query}`);
  }
}
