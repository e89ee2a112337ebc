/** Durable queue of sync ops recorded while offline.
 *
 * Ops leave the queue only when a push acknowledges them individually
 * (applied, duplicate or rejected); a failed request leaves everything in
 * place for the next attempt. Idempotency keys on the ops make flaky
 * retries safe. At most one push is in flight at a time.
 */

import { PushResult, SyncOp } from "./protocol.js";
import { StorageLike } from "./storage.js";

export class OfflineQueue {
  private inFlight = false;

  constructor(private storage: StorageLike, private key = "paperbank.opqueue") {}

  list(): SyncOp[] {
    const raw = this.storage.getItem(this.key);
    return raw ? (JSON.parse(raw) as SyncOp[]) : [];
  }

  get size(): number {
    return this.list().length;
  }

  private save(ops: SyncOp[]): void {
    this.storage.setItem(this.key, JSON.stringify(ops));
  }

  enqueue(op: SyncOp): void {
    const ops = this.list();
    ops.push(op);
    this.save(ops);
  }

  /** Push everything queued; remove only what the server acknowledged. */
  async drain(push: (ops: SyncOp[]) => Promise<PushResult[]>): Promise<PushResult[]> {
    if (this.inFlight) return [];
    const ops = this.list();
    if (!ops.length) return [];
    this.inFlight = true;
    try {
      const results = await push(ops);
      const acked = new Set(results.map((r) => r.op_id));
      this.save(this.list().filter((op) => !acked.has(op.op_id)));
      return results;
    } finally {
      this.inFlight = false;
    }
  }
}

export function newOpId(): string {
  const bytes = new Uint8Array(12);
  crypto.getRandomValues(bytes);
  return "op_" + [...bytes].map((b) => b.toString(16).padStart(2, "0")).join("");
}
