import { describe, expect, it } from "vitest";

import type { ProgressFrame } from "../src/protocol.js";
import { UploadClient } from "../src/uploadClient.js";
import { FakeUploadServer } from "./fakes.js";

function randomBytes(n: number, seed = 42): Uint8Array {
  const out = new Uint8Array(n);
  let state = seed;
  for (let i = 0; i < n; i++) {
    state = (state * 1664525 + 1013904223) >>> 0;
    out[i] = state & 0xff;
  }
  return out;
}

function makeClient(server: FakeUploadServer, bytes: Uint8Array,
                    extra: Partial<ConstructorParameters<typeof UploadClient>[0]> = {}) {
  const progress: ProgressFrame[] = [];
  const client = new UploadClient({
    socketFactory: server.socketFactory,
    file: { name: "exam.pdf", bytes },
    courseId: "crs_pha301",
    paper: { title: "Uploaded paper", year: 2025 },
    onProgress: (frame) => progress.push(frame),
    ...extra,
  });
  return { client, progress };
}

describe("UploadClient", () => {
  it("uploads end to end and returns the pipeline result", async () => {
    const server = new FakeUploadServer();
    const bytes = randomBytes(200_000);
    const { client, progress } = makeClient(server, bytes);

    const result = await client.start();

    expect(result.question_count).toBe(3);
    expect(result.paper_id).toBe("pp_1");
    const stages = progress.map((f) => f.stage);
    expect(stages).toContain("uploading");
    expect(stages[stages.length - 1]).toBe("done");
    const uploadPercents = progress.filter((f) => f.stage === "uploading").map((f) => f.percent);
    expect(uploadPercents).toEqual([...uploadPercents].sort((a, b) => a - b));
  });

  it("survives a forced disconnect at 50% without re-sending received chunks", async () => {
    const server = new FakeUploadServer();
    const bytes = randomBytes(6 * 64 * 1024); // 6 chunks
    server.dropAfterChunks = 3; // the network dies halfway, mid-ack
    const { client } = makeClient(server, bytes);

    const result = await client.start();

    expect(result.question_count).toBe(3);
    const indices = server.wireChunks.map(([, index]) => index);
    expect([...indices].sort((a, b) => a - b)).toEqual([0, 1, 2, 3, 4, 5]);
    expect(new Set(indices).size).toBe(indices.length); // nothing retransmitted
    const connections = new Set(server.wireChunks.map(([conn]) => conn));
    expect(connections.size).toBeGreaterThanOrEqual(2);
  });

  it("falls back to base64 text frames when binary frames are off", async () => {
    const server = new FakeUploadServer();
    const bytes = randomBytes(150_000, 7);
    const { client } = makeClient(server, bytes, { binaryFrames: false });

    const result = await client.start();

    expect(result.question_count).toBe(3);
    expect(server.sessions.size).toBe(1);
    const session = [...server.sessions.values()][0];
    expect(session.completed).toBe(true);
  });

  it("retransmits a chunk the server reports as corrupt", async () => {
    const server = new FakeUploadServer();
    server.corruptOnceIndex = 1;
    const bytes = randomBytes(3 * 64 * 1024, 9);
    const { client } = makeClient(server, bytes);

    const result = await client.start();

    expect(result.question_count).toBe(3);
    const ones = server.wireChunks.filter(([, index]) => index === 1);
    expect(ones.length).toBe(2); // corrupted delivery plus the good retry
  });

  it("gives up after exhausting the reconnect budget", async () => {
    const server = new FakeUploadServer();
    const bytes = randomBytes(4 * 64 * 1024, 3);
    let connectionsOpened = 0;
    const client = new UploadClient({
      socketFactory: () => {
        // every connection drops after storing one more chunk
        server.dropAfterChunks = (server.sessions.size
          ? [...server.sessions.values()][0].received.size : 0) + 1;
        connectionsOpened += 1;
        return server.socketFactory();
      },
      file: { name: "exam.pdf", bytes },
      courseId: "crs_pha301",
      paper: { title: "Uploaded paper", year: 2025 },
      maxReconnects: 1,
    });

    await expect(client.start()).rejects.toThrow("connection lost");
    expect(connectionsOpened).toBe(2); // initial attempt + one reconnect
  });
});
