"""Progress events and the in-process bus that fans them out.

Upload sessions and pipeline jobs both emit ProgressEvents keyed by their id.
Subscribers (the message channel, tests) receive events synchronously in
emission order; per-target ordering is guaranteed by the emitters, which hold
their own locks while publishing.
"""

from __future__ import annotations

import threading
from dataclasses import asdict, dataclass
from typing import Callable

STAGE_UPLOADING = "uploading"
STAGE_OCR = "ocr"
STAGE_GENERATING = "generating"
STAGE_INSERTING = "inserting"
STAGE_DONE = "done"
STAGE_FAILED = "failed"
TERMINAL_STAGES = (STAGE_DONE, STAGE_FAILED)


@dataclass
class ProgressEvent:
    target_id: str
    stage: str
    percent: float
    log: str
    at: str

    def to_dict(self) -> dict:
        return asdict(self)


class EventBus:
    def __init__(self):
        self._lock = threading.Lock()
        self._subs: dict[str, list[Callable[[ProgressEvent], None]]] = {}

    def subscribe(self, target_id: str, callback: Callable[[ProgressEvent], None]) -> Callable[[], None]:
        with self._lock:
            self._subs.setdefault(target_id, []).append(callback)

        def unsubscribe():
            with self._lock:
                callbacks = self._subs.get(target_id, [])
                if callback in callbacks:
                    callbacks.remove(callback)
                if not callbacks:
                    self._subs.pop(target_id, None)

        return unsubscribe

    def publish(self, event: ProgressEvent) -> None:
        with self._lock:
            callbacks = list(self._subs.get(event.target_id, ()))
        for cb in callbacks:
            cb(event)
