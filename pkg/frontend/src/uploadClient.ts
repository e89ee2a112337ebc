/** Resumable upload over the persistent message channel.
 *
 * Drives upload.init / upload.chunk / upload.resume / upload.complete and
 * forwards every progress frame to the caller. When the connection drops the
 * client reconnects, asks the server which chunk indices are still missing,
 * and sends exactly those: nothing received survives a retransmit.
 */

import type {
  ChunkAck,
  InitAck,
  ProgressFrame,
  ResultFrame,
  ResumeAck,
  ServerFrame,
} from "./protocol.js";
import { sha256Hex } from "./sha256.js";

export interface WsLike {
  send(data: string | Uint8Array): void;
  close(): void;
  readyState?: number;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: ((err: unknown) => void) | null;
}

export type SocketFactory = () => WsLike;

export class ConnectionLost extends Error {
  constructor() {
    super("connection lost");
  }
}

export class UploadError extends Error {
  constructor(public code: string, message: string) {
    super(message);
  }
}

export interface UploadOptions {
  socketFactory: SocketFactory;
  file: { name: string; bytes: Uint8Array };
  courseId: string;
  paper: { title: string; year: number };
  onProgress?: (frame: ProgressFrame) => void;
  onLog?: (line: string) => void;
  /** Reconnect budget after a dropped connection. */
  maxReconnects?: number;
  /** Send payloads as binary frames (default) or base64 text frames. */
  binaryFrames?: boolean;
  chunkRetries?: number;
}

/** Adapts a socket to an awaitable frame stream. */
class Channel {
  private frames: ServerFrame[] = [];
  private waiter: { resolve: (f: ServerFrame) => void; reject: (e: Error) => void } | null = null;
  private failure: Error | null = null;
  readonly opened: Promise<void>;

  constructor(private ws: WsLike) {
    this.opened = new Promise((resolve, reject) => {
      if (ws.readyState === 1) resolve();
      ws.onopen = () => resolve();
      ws.onerror = () => {
        this.fail(new ConnectionLost());
        reject(new ConnectionLost());
      };
      ws.onclose = () => {
        this.fail(new ConnectionLost());
        reject(new ConnectionLost());
      };
    });
    this.opened.catch(() => undefined); // handled by callers of next()
    ws.onmessage = (ev) => {
      if (typeof ev.data !== "string") return;
      const frame = JSON.parse(ev.data) as ServerFrame;
      if (this.waiter) {
        const w = this.waiter;
        this.waiter = null;
        w.resolve(frame);
      } else {
        this.frames.push(frame);
      }
    };
  }

  private fail(err: Error): void {
    this.failure = err;
    if (this.waiter) {
      const w = this.waiter;
      this.waiter = null;
      w.reject(err);
    }
  }

  next(): Promise<ServerFrame> {
    if (this.frames.length) return Promise.resolve(this.frames.shift()!);
    if (this.failure) return Promise.reject(this.failure);
    return new Promise((resolve, reject) => {
      this.waiter = { resolve, reject };
    });
  }

  sendJson(obj: unknown): void {
    this.ws.send(JSON.stringify(obj));
  }

  sendBytes(data: Uint8Array): void {
    this.ws.send(data);
  }

  dispose(): void {
    this.ws.onmessage = null;
    this.ws.onclose = null;
    this.ws.onerror = null;
    try {
      this.ws.close();
    } catch {
      /* already closed */
    }
  }
}

function base64Of(bytes: Uint8Array): string {
  let binary = "";
  for (const b of bytes) binary += String.fromCharCode(b);
  return btoa(binary);
}

export class UploadClient {
  private sessionId: string | null = null;
  private chunkSize = 0;
  private totalChunks = 0;

  constructor(private options: UploadOptions) {}

  private log(line: string): void {
    this.options.onLog?.(line);
  }

  /** Run the upload to its terminal frame; resolves with the pipeline result. */
  async start(): Promise<ResultFrame> {
    const { file } = this.options;
    const digest = await sha256Hex(file.bytes);
    const maxReconnects = this.options.maxReconnects ?? 5;
    let reconnects = 0;

    for (;;) {
      const channel = new Channel(this.options.socketFactory());
      try {
        await channel.opened;
        const pending = await this.openSession(channel, digest);
        for (const index of pending) {
          await this.sendChunk(channel, index);
        }
        channel.sendJson({ type: "upload.complete", session_id: this.sessionId });
        await this.expectAck(channel, "upload.complete");
        return await this.awaitResult(channel);
      } catch (err) {
        if (err instanceof ConnectionLost && reconnects < maxReconnects) {
          reconnects += 1;
          this.log(`connection lost, resuming (attempt ${reconnects})`);
          continue;
        }
        throw err;
      } finally {
        channel.dispose();
      }
    }
  }

  private async openSession(channel: Channel, digest: string): Promise<number[]> {
    const { file, courseId, paper } = this.options;
    if (this.sessionId === null) {
      channel.sendJson({
        type: "upload.init",
        filename: file.name,
        size: file.bytes.length,
        sha256: digest,
        course_id: courseId,
        paper,
      });
      const ack = (await this.expectAck(channel, "upload.init")) as InitAck;
      this.sessionId = ack.session_id;
      this.chunkSize = ack.chunk_size;
      this.totalChunks = ack.total_chunks;
      this.log(`session ${ack.session_id}: ${ack.total_chunks} chunks`);
      return [...Array(ack.total_chunks).keys()];
    }
    channel.sendJson({ type: "upload.resume", session_id: this.sessionId });
    const ack = (await this.expectAck(channel, "upload.resume")) as ResumeAck;
    this.log(`resumed: ${ack.missing.length} chunks missing`);
    return [...ack.missing];
  }

  private chunkAt(index: number): Uint8Array {
    const start = index * this.chunkSize;
    return this.options.file.bytes.subarray(start, start + this.chunkSize);
  }

  private async sendChunk(channel: Channel, index: number): Promise<void> {
    const payload = this.chunkAt(index);
    const digest = await sha256Hex(payload);
    const retries = this.options.chunkRetries ?? 3;
    for (let attempt = 0; ; attempt++) {
      const header: Record<string, unknown> = {
        type: "upload.chunk",
        session_id: this.sessionId,
        index,
        sha256: digest,
      };
      if (this.options.binaryFrames ?? true) {
        channel.sendJson(header);
        const framed = new Uint8Array(4 + payload.length);
        new DataView(framed.buffer).setUint32(0, index, false);
        framed.set(payload, 4);
        channel.sendBytes(framed);
      } else {
        header.data = base64Of(payload);
        channel.sendJson(header);
      }
      try {
        const ack = (await this.expectAck(channel, "upload.chunk")) as ChunkAck;
        if (ack.index !== index) throw new UploadError("protocol-violation", "ack for wrong chunk");
        return;
      } catch (err) {
        if (err instanceof UploadError && err.code === "chunk-corrupt" && attempt < retries) {
          this.log(`chunk ${index} corrupt in transit, retrying`);
          continue;
        }
        throw err;
      }
    }
  }

  /** Next ack of the given kind; forwards progress frames, throws on errors. */
  private async expectAck(channel: Channel, kind: string): Promise<ServerFrame> {
    for (;;) {
      const frame = await channel.next();
      if (frame.type === "progress") {
        this.options.onProgress?.(frame);
        continue;
      }
      if (frame.type === "error") throw new UploadError(frame.code, frame.message);
      if (frame.type === "ack" && frame.for === kind) return frame;
      throw new UploadError("protocol-violation", `unexpected frame ${frame.type}`);
    }
  }

  private async awaitResult(channel: Channel): Promise<ResultFrame> {
    for (;;) {
      const frame = await channel.next();
      if (frame.type === "progress") {
        this.options.onProgress?.(frame);
        this.log(`[${frame.stage}] ${frame.percent.toFixed(0)}% ${frame.log}`);
        continue;
      }
      if (frame.type === "result") return frame;
      if (frame.type === "error") throw new UploadError(frame.code, frame.message);
    }
  }
}
