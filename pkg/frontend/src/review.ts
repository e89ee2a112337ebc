/** Faculty review flow: inspect drafts and flagged content, flag with a
 * reason, resolve by republishing or retiring. Students never reach this
 * surface; the server enforces the role either way. */

import { ApiClient } from "./apiClient.js";
import { FlagInfo, Question } from "./protocol.js";

export class ReviewQueue {
  constructor(private api: ApiClient) {}

  openFlags(): Promise<FlagInfo[]> {
    return this.api.listFlags("open").then((r) => r.items);
  }

  flaggedQuestions(paperId: string): Promise<Question[]> {
    return this.api.paperQuestions(paperId, 1, 100, "flagged").then((r) => r.items);
  }

  draftQuestions(paperId: string): Promise<Question[]> {
    return this.api.paperQuestions(paperId, 1, 100, "draft").then((r) => r.items);
  }

  flag(questionId: string, reason: string): Promise<FlagInfo> {
    return this.api.flagQuestion(questionId, reason);
  }

  async resolve(flagId: string, outcome: "republish" | "retire"): Promise<string> {
    const result = await this.api.resolveFlag(flagId, outcome);
    return result.question_state;
  }
}
