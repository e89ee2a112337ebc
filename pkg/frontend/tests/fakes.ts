/** Test doubles that speak the engine's wire protocols.
 *
 * FakeUploadServer implements the channel contract (sessions survive
 * connections, chunk bitmap, resume, idempotent complete) and logs every
 * chunk index it sees on the wire so tests can prove nothing already
 * received is ever retransmitted. FakeEngine backs the REST routes the
 * client touches, including sync push idempotency and pull cursors.
 */

import type { FetchLike } from "../src/apiClient.js";
import type { PushResult, Question, SyncOp } from "../src/protocol.js";
import { sha256Hex } from "../src/sha256.js";
import type { WsLike } from "../src/uploadClient.js";

export class FakeSocket implements WsLike {
  onopen: (() => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: ((err: unknown) => void) | null = null;
  closed = false;

  constructor(private server: FakeUploadServer, readonly connectionId: number) {
    queueMicrotask(() => this.onopen?.());
  }

  send(data: string | Uint8Array): void {
    if (this.closed) throw new Error("send on closed socket");
    this.server.receive(this, data);
  }

  close(): void {
    this.closed = true;
  }

  deliver(frame: unknown): void {
    if (!this.closed) this.onmessage?.({ data: JSON.stringify(frame) });
  }

  /** Server-side drop: the network dies under the client. */
  serverDrop(): void {
    if (this.closed) return;
    this.closed = true;
    this.onclose?.();
  }
}

interface Session {
  id: string;
  chunkSize: number;
  total: number;
  declaredHash: string;
  size: number;
  received: Map<number, Uint8Array>;
  completed: boolean;
}

export class FakeUploadServer {
  chunkSize = 64 * 1024;
  questionCount = 3;
  /** Drop the connection once, right after this many chunks are stored. */
  dropAfterChunks: number | null = null;
  /** Reject this chunk index as corrupt exactly once. */
  corruptOnceIndex: number | null = null;

  sessions = new Map<string, Session>();
  /** Every chunk payload observed on the wire: [connectionId, index]. */
  wireChunks: Array<[number, number]> = [];
  connections = 0;

  private chain = Promise.resolve();
  private pendingHeader: { session: string; index: number; sha256: string } | null = null;
  private nextSession = 1;

  socketFactory = (): WsLike => new FakeSocket(this, ++this.connections);

  receive(socket: FakeSocket, data: string | Uint8Array): void {
    this.chain = this.chain.then(() => this.process(socket, data));
  }

  private async process(socket: FakeSocket, data: string | Uint8Array): Promise<void> {
    if (typeof data !== "string") {
      const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
      const index = view.getUint32(0, false);
      const payload = data.slice(4);
      const header = this.pendingHeader;
      this.pendingHeader = null;
      if (!header || header.index !== index) {
        socket.deliver({ type: "error", code: "protocol-violation", message: "index mismatch" });
        return;
      }
      await this.storeChunk(socket, header.session, index, payload, header.sha256);
      return;
    }
    const frame = JSON.parse(data) as Record<string, unknown>;
    switch (frame.type) {
      case "upload.init": {
        const id = `ses_${this.nextSession++}`;
        const size = frame.size as number;
        const total = Math.ceil(size / this.chunkSize);
        this.sessions.set(id, {
          id, size, total,
          chunkSize: this.chunkSize,
          declaredHash: frame.sha256 as string,
          received: new Map(),
          completed: false,
        });
        socket.deliver({ type: "ack", for: "upload.init", session_id: id,
                         chunk_size: this.chunkSize, total_chunks: total });
        break;
      }
      case "upload.chunk": {
        const header = { session: frame.session_id as string,
                         index: frame.index as number, sha256: frame.sha256 as string };
        if (typeof frame.data === "string") {
          const payload = Uint8Array.from(atob(frame.data), (c) => c.charCodeAt(0));
          await this.storeChunk(socket, header.session, header.index, payload, header.sha256);
        } else {
          this.pendingHeader = header;
        }
        break;
      }
      case "upload.resume": {
        const session = this.sessions.get(frame.session_id as string);
        if (!session) {
          socket.deliver({ type: "error", code: "unknown-session", message: "no session" });
          break;
        }
        const missing = [];
        for (let i = 0; i < session.total; i++) {
          if (!session.received.has(i)) missing.push(i);
        }
        socket.deliver({ type: "ack", for: "upload.resume", session_id: session.id, missing });
        break;
      }
      case "upload.complete": {
        const session = this.sessions.get(frame.session_id as string);
        if (!session) {
          socket.deliver({ type: "error", code: "unknown-session", message: "no session" });
          break;
        }
        if (session.received.size !== session.total) {
          socket.deliver({ type: "error", code: "incomplete", message: "chunks missing" });
          break;
        }
        const assembled = new Uint8Array(session.size);
        for (let i = 0; i < session.total; i++) {
          assembled.set(session.received.get(i)!, i * session.chunkSize);
        }
        if ((await sha256Hex(assembled)) !== session.declaredHash) {
          socket.deliver({ type: "error", code: "content-corrupt", message: "hash mismatch" });
          break;
        }
        session.completed = true;
        socket.deliver({ type: "ack", for: "upload.complete",
                         document_id: "doc_1", job_id: "job_1" });
        for (const [stage, percent] of [["ocr", 100], ["generating", 100],
                                        ["inserting", 100], ["done", 100]] as const) {
          socket.deliver({ type: "progress", id: "job_1", stage, percent,
                           log: stage, ts: "2025-06-01T00:00:00+00:00" });
        }
        socket.deliver({ type: "result", job_id: "job_1", paper_id: "pp_1",
                         question_count: this.questionCount });
        break;
      }
      default:
        socket.deliver({ type: "error", code: "protocol-violation",
                         message: `unknown type ${frame.type}` });
    }
  }

  private async storeChunk(socket: FakeSocket, sessionId: string, index: number,
                           payload: Uint8Array, declared: string): Promise<void> {
    const session = this.sessions.get(sessionId);
    if (!session) {
      socket.deliver({ type: "error", code: "unknown-session", message: "no session" });
      return;
    }
    this.wireChunks.push([socket.connectionId, index]);
    if (this.corruptOnceIndex === index) {
      this.corruptOnceIndex = null;
      socket.deliver({ type: "error", code: "chunk-corrupt", message: "hash mismatch" });
      return;
    }
    if ((await sha256Hex(payload)) !== declared) {
      socket.deliver({ type: "error", code: "chunk-corrupt", message: "hash mismatch" });
      return;
    }
    const duplicate = session.received.has(index);
    if (!duplicate) session.received.set(index, payload);
    if (!duplicate && this.dropAfterChunks !== null
        && session.received.size >= this.dropAfterChunks) {
      // Stored but never acknowledged: the client must rely on resume.
      this.dropAfterChunks = null;
      socket.serverDrop();
      return;
    }
    socket.deliver({ type: "ack", for: "upload.chunk", index,
                     status: duplicate ? "duplicate" : "accepted" });
    socket.deliver({ type: "progress", id: sessionId, stage: "uploading",
                     percent: (100 * session.received.size) / session.total,
                     log: `chunk ${index}`, ts: "2025-06-01T00:00:00+00:00" });
  }
}

interface EngineQuestion extends Question {
  state: "draft" | "published" | "flagged" | "retired";
  change_seq: number;
}

export class FakeEngine {
  questions = new Map<string, EngineQuestion>();
  flags = new Map<string, { id: string; question_id: string; state: string; reason: string }>();
  appliedOps = new Map<string, number>();
  responses: Array<{ question_id: string; chosen_index: number; via: string }> = [];
  feedback: Array<{ question_id: string; rating: number }> = [];
  private changeSeq = 0;
  private nextFlag = 1;
  offline = false;
  /** Apply the next push but pretend the response got lost on the network. */
  loseNextPushResponse = false;

  seed(questions: Question[]): void {
    for (const q of questions) {
      this.questions.set(q.id, { ...q, state: "published", change_seq: ++this.changeSeq });
    }
  }

  flagQuestion(id: string, reason: string) {
    const q = this.questions.get(id)!;
    q.state = "flagged";
    q.change_seq = ++this.changeSeq;
    const flag = { id: `flag_${this.nextFlag++}`, question_id: id, state: "open", reason };
    this.flags.set(flag.id, flag);
    return flag;
  }

  resolveFlag(flagId: string, outcome: "republish" | "retire"): string {
    const flag = this.flags.get(flagId)!;
    flag.state = outcome === "republish" ? "resolved-republished" : "resolved-retired";
    const q = this.questions.get(flag.question_id)!;
    q.state = outcome === "republish" ? "published" : "retired";
    q.change_seq = ++this.changeSeq;
    return q.state;
  }

  private applyOps(ops: SyncOp[]): PushResult[] {
    return ops.map((op) => {
      if (this.appliedOps.has(op.op_id)) return { op_id: op.op_id, status: "duplicate" as const };
      this.appliedOps.set(op.op_id, 1);
      const q = this.questions.get(String(op.payload.question_id));
      if (!q || q.state !== "published") {
        return { op_id: op.op_id, status: "rejected" as const, reason: "not-available" };
      }
      if (op.kind === "mcq-response") {
        this.responses.push({ question_id: q.id,
                              chosen_index: op.payload.chosen_index as number, via: "sync" });
      } else if (op.kind === "feedback") {
        this.feedback.push({ question_id: q.id, rating: op.payload.rating as number });
      }
      return { op_id: op.op_id, status: "applied" as const };
    });
  }

  private pull(cursor: number | null) {
    const upserted: Question[] = [];
    const retired: string[] = [];
    for (const q of this.questions.values()) {
      const changed = cursor === null || q.change_seq > cursor;
      if (!changed) continue;
      if (q.state === "published") {
        const { state: _state, change_seq: _seq, ...payload } = q;
        upserted.push(payload);
      } else if (cursor !== null) {
        retired.push(q.id);
      }
    }
    return { cursor: this.changeSeq, upserted_questions: upserted,
             retired_question_ids: retired };
  }

  /** FetchLike implementation routing the endpoints the client uses. */
  fetch: FetchLike = async (url, init) => {
    if (this.offline) throw new TypeError("fetch failed: offline");
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(init.body) : undefined;
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    const respond = (status: number, payload: unknown) =>
      ({ status, json: async () => payload });

    let match: RegExpMatchArray | null;
    if (method === "GET" && path.startsWith("/sync/pull")) {
      const cursor = /cursor=(\d+)/.exec(path);
      return respond(200, this.pull(cursor ? Number(cursor[1]) : null));
    }
    if (method === "POST" && path === "/sync/push") {
      const results = this.applyOps((body.ops as SyncOp[]) ?? []);
      if (this.loseNextPushResponse) {
        this.loseNextPushResponse = false;
        throw new TypeError("fetch failed: response lost");
      }
      return respond(200, { results });
    }
    if (method === "POST" && (match = path.match(/^\/questions\/([^/]+)\/responses$/))) {
      const q = this.questions.get(match[1]);
      if (!q || q.state !== "published") {
        return respond(404, { code: "not-available", message: "not available" });
      }
      const index = body.chosen_index as number;
      if (!q.choices || index < 0 || index >= q.choices.length) {
        return respond(422, { code: "bad-choice", message: "out of range" });
      }
      this.responses.push({ question_id: q.id, chosen_index: index, via: "direct" });
      return respond(200, { correct: q.choices[index].is_correct, explanation: q.explanation });
    }
    if (method === "POST" && (match = path.match(/^\/questions\/([^/]+)\/feedback$/))) {
      this.feedback.push({ question_id: match[1], rating: body.rating as number });
      return respond(200, { recorded: true });
    }
    if (method === "POST" && (match = path.match(/^\/questions\/([^/]+)\/flags$/))) {
      const flag = this.flagQuestion(match[1], body.reason as string);
      return respond(200, { ...flag, raised_by: "usr_fac", at: "", resolved_at: null });
    }
    if (method === "GET" && path.startsWith("/flags")) {
      const wanted = /state=([a-z-]+)/.exec(path)?.[1];
      const items = [...this.flags.values()]
        .filter((f) => !wanted || f.state === wanted)
        .map((f) => ({ ...f, raised_by: "usr_fac", at: "", resolved_at: null }));
      return respond(200, { items });
    }
    if (method === "POST" && (match = path.match(/^\/flags\/([^/]+)\/resolve$/))) {
      return respond(200, { question_state: this.resolveFlag(match[1], body.outcome) });
    }
    if (method === "GET" && (match = path.match(/^\/papers\/([^/]+)\/questions/))) {
      const state = /state=([a-z]+)/.exec(path)?.[1];
      const size = Number(/page_size=(\d+)/.exec(path)?.[1] ?? 20);
      if (size > 100) return respond(422, { code: "page-too-large", message: "cap is 100" });
      const items = [...this.questions.values()]
        .filter((q) => q.past_paper_id === match![1] && (!state || q.state === state));
      return respond(200, { items, total: items.length, page: 1, page_size: size });
    }
    return respond(404, { code: "unknown-route", message: path });
  };
}

export function sampleQuestions(): Question[] {
  return [0, 1, 2].map((i) => ({
    id: `q_${i}`,
    kind: "mcq" as const,
    stem: `Sample stem ${i}`,
    explanation: `Because ${i}.`,
    course_id: i === 2 ? "crs_other" : "crs_pha301",
    past_paper_id: "pp_1",
    concept_ids: ["cpt_1"],
    choices: [
      { index: 0, text: "right answer", is_correct: true },
      { index: 1, text: "wrong answer", is_correct: false },
    ],
  }));
}
