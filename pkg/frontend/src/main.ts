/** Browser wiring: one screen with upload, practice and review panels.
 * All logic lives in the modules this file composes; the DOM layer stays
 * thin enough to read in one sitting. */

import { ApiClient } from "./apiClient.js";
import { OfflineQueue } from "./offlineQueue.js";
import { PracticeSession } from "./practice.js";
import { ReviewQueue } from "./review.js";
import { loadClientState, saveClientState } from "./state.js";
import { UploadClient } from "./uploadClient.js";
import type { WsLike } from "./uploadClient.js";

const $ = <T extends HTMLElement>(id: string): T => document.getElementById(id) as T;

function wsUrl(base: string, token: string): string {
  return base.replace(/^http/, "ws") + `/ws?token=${encodeURIComponent(token)}`;
}

function start(): void {
  const storage = window.localStorage;
  const saved = loadClientState(storage);
  const baseUrl = (document.body.dataset.api ?? "http://127.0.0.1:8080").replace(/\/$/, "");
  const token = saved?.token ?? $("token-input") ? ($("token-input") as HTMLInputElement).value : "";

  $("connect-btn").onclick = async () => {
    const tokenValue = ($("token-input") as HTMLInputElement).value.trim();
    const userValue = ($("user-input") as HTMLInputElement).value.trim();
    saveClientState(storage, {
      token: tokenValue, userId: userValue, institutionId: null, courseId: null,
    });
    window.location.reload();
  };

  if (!saved) return;

  const api = new ApiClient(baseUrl, saved.token);
  const queue = new OfflineQueue(storage);
  const practice = new PracticeSession(api, queue, storage, saved.userId);
  const review = new ReviewQueue(api);
  const logPane = $("upload-log");
  const appendLog = (line: string) => {
    logPane.textContent += line + "\n";
    logPane.scrollTop = logPane.scrollHeight;
  };

  $("font-toggle").onclick = () => document.body.classList.toggle("large-text");

  ($("file-input") as HTMLInputElement).onchange = async (ev) => {
    const input = ev.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    const bytes = new Uint8Array(await file.arrayBuffer());
    const course = ($("course-input") as HTMLInputElement).value.trim();
    const uploader = new UploadClient({
      socketFactory: () => new WebSocket(wsUrl(baseUrl, saved.token)) as unknown as WsLike,
      file: { name: file.name, bytes },
      courseId: course,
      paper: {
        title: ($("title-input") as HTMLInputElement).value || file.name,
        year: new Date().getUTCFullYear(),
      },
      onProgress: (frame) => appendLog(`[${frame.stage}] ${frame.percent.toFixed(0)}% ${frame.log}`),
      onLog: appendLog,
    });
    try {
      const result = await uploader.start();
      appendLog(`ready: paper ${result.paper_id} with ${result.question_count} questions`);
    } catch (err) {
      appendLog(`upload failed: ${String(err)}`);
    }
  };

  const renderQuestions = () => {
    const list = $("practice-list");
    list.innerHTML = "";
    for (const q of practice.visibleQuestions()) {
      const item = document.createElement("li");
      item.textContent = q.stem;
      if (q.kind === "mcq" && q.choices) {
        for (const choice of q.choices) {
          const btn = document.createElement("button");
          btn.textContent = choice.text;
          btn.onclick = async () => {
            const outcome = await practice.answerMcq(q.id, choice.index);
            const verdict = outcome.correct === null ? "recorded"
              : outcome.correct ? "correct" : "incorrect";
            btn.after(document.createTextNode(
              ` ${verdict}${outcome.pending ? " (pending sync)" : ""}` +
              (outcome.explanation ? ` - ${outcome.explanation}` : "")));
            $("pending-count").textContent = String(practice.pendingOps);
          };
          item.appendChild(btn);
        }
      }
      list.appendChild(item);
    }
  };

  $("refresh-btn").onclick = async () => {
    await practice.refresh();
    renderQuestions();
  };

  $("sync-btn").onclick = async () => {
    const results = await practice.syncQueued();
    appendLog(`synced ${results.length} queued ops`);
    $("pending-count").textContent = String(practice.pendingOps);
  };

  $("flags-btn").onclick = async () => {
    const flags = await review.openFlags();
    const list = $("review-list");
    list.innerHTML = "";
    for (const flag of flags) {
      const item = document.createElement("li");
      item.textContent = `${flag.question_id}: ${flag.reason} `;
      for (const outcome of ["republish", "retire"] as const) {
        const btn = document.createElement("button");
        btn.textContent = outcome;
        btn.onclick = async () => {
          await review.resolve(flag.id, outcome);
          item.remove();
        };
        item.appendChild(btn);
      }
      list.appendChild(item);
    }
  };

  practice.refresh().then(renderQuestions).catch(() => appendLog("offline: using cached questions"));
  renderQuestions();
}

window.addEventListener("load", start);
