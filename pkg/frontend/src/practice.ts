/** Practice flow: published questions with immediate feedback, online or off.
 *
 * The local cache is replaced only by pulled changesets; answers submitted
 * while offline are graded against the cached answer key, marked pending,
 * and queued as sync ops that drain on reconnect.
 */

import { ApiClient, NetworkError } from "./apiClient.js";
import { OfflineQueue, newOpId } from "./offlineQueue.js";
import { PushResult, Question, SyncOp } from "./protocol.js";
import { StorageLike } from "./storage.js";

export interface AnswerOutcome {
  correct: boolean | null;
  explanation: string | null;
  /** True when the answer was queued for sync instead of recorded live. */
  pending: boolean;
}

interface PersistedState {
  cursor: number | null;
  questions: Question[];
}

export class PracticeSession {
  private cache = new Map<string, Question>();
  private cursor: number | null = null;

  constructor(private api: ApiClient, private queue: OfflineQueue,
              private storage: StorageLike, private userId: string,
              private stateKey = "paperbank.practice") {
    this.load();
  }

  private load(): void {
    const raw = this.storage.getItem(this.stateKey);
    if (!raw) return;
    const state = JSON.parse(raw) as PersistedState;
    this.cursor = state.cursor;
    this.cache = new Map(state.questions.map((q) => [q.id, q]));
  }

  private persist(): void {
    this.storage.setItem(this.stateKey, JSON.stringify({
      cursor: this.cursor,
      questions: [...this.cache.values()],
    } satisfies PersistedState));
  }

  get pendingOps(): number {
    return this.queue.size;
  }

  /** Pull the next changeset and apply it to the cache. One pull cycle is
   * enough to drop anything faculty pulled out of circulation. */
  async refresh(): Promise<void> {
    const changeset = await this.api.syncPull(this.cursor);
    for (const question of changeset.upserted_questions) {
      this.cache.set(question.id, question);
    }
    for (const id of changeset.retired_question_ids) {
      this.cache.delete(id);
    }
    this.cursor = changeset.cursor;
    this.persist();
  }

  visibleQuestions(courseId?: string): Question[] {
    const all = [...this.cache.values()];
    return courseId ? all.filter((q) => q.course_id === courseId) : all;
  }

  question(id: string): Question | undefined {
    return this.cache.get(id);
  }

  async answerMcq(questionId: string, chosenIndex: number): Promise<AnswerOutcome> {
    const cached = this.cache.get(questionId);
    try {
      const result = await this.api.postMcqResponse(questionId, chosenIndex);
      return { correct: result.correct, explanation: result.explanation, pending: false };
    } catch (err) {
      if (!(err instanceof NetworkError)) throw err;
    }
    // Offline: queue the op and grade locally from the cached answer key.
    const op: SyncOp = {
      op_id: newOpId(),
      kind: "mcq-response",
      payload: { question_id: questionId, chosen_index: chosenIndex },
      client_clock: new Date().toISOString(),
      user_id: this.userId,
    };
    this.queue.enqueue(op);
    const choice = cached?.choices?.[chosenIndex];
    return {
      correct: choice ? choice.is_correct : null,
      explanation: cached?.explanation ?? null,
      pending: true,
    };
  }

  async recordFeedback(questionId: string, rating: number, comment?: string): Promise<boolean> {
    try {
      await this.api.postFeedback(questionId, rating, comment);
      return true;
    } catch (err) {
      if (!(err instanceof NetworkError)) throw err;
      this.queue.enqueue({
        op_id: newOpId(),
        kind: "feedback",
        payload: { question_id: questionId, rating, comment: comment ?? null },
        client_clock: new Date().toISOString(),
        user_id: this.userId,
      });
      return false;
    }
  }

  /** Push the offline queue; safe to call on every reconnect. */
  syncQueued(): Promise<PushResult[]> {
    return this.queue.drain(async (ops) => (await this.api.syncPush(ops)).results);
  }
}
