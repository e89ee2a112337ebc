/** Client session state that survives reloads: who we are and what we study.
 * The op queue and question cache persist separately (OfflineQueue,
 * PracticeSession) under their own keys. */

import { StorageLike } from "./storage.js";

export interface ClientState {
  token: string;
  userId: string;
  institutionId: string | null;
  courseId: string | null;
}

const KEY = "paperbank.client";

export function loadClientState(storage: StorageLike): ClientState | null {
  const raw = storage.getItem(KEY);
  return raw ? (JSON.parse(raw) as ClientState) : null;
}

export function saveClientState(storage: StorageLike, state: ClientState): void {
  storage.setItem(KEY, JSON.stringify(state));
}

export function clearClientState(storage: StorageLike): void {
  storage.removeItem(KEY);
}
