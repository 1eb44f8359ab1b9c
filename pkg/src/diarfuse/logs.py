"""Line-delimited JSON logging with per-stage timing."""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager

STAGE_FIELDS = ("session", "channel", "stage", "wall_ms")


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload = {"level": record.levelname, "logger": record.name, "msg": record.getMessage()}
        for key in STAGE_FIELDS:
            if hasattr(record, key):
                payload[key] = getattr(record, key)
        if record.exc_info:
            payload["exc"] = self.formatException(record.exc_info)
        return json.dumps(payload, sort_keys=True)


def configure(level: int = logging.INFO, stream=None) -> None:
    handler = logging.StreamHandler(stream)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger("diarfuse")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


@contextmanager
def stage(logger: logging.Logger, name: str, session: str = "", channel: str = ""):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        wall_ms = round(1000.0 * (time.perf_counter() - t0), 3)
        logger.info(
            "stage done", extra={"session": session, "channel": channel, "stage": name, "wall_ms": wall_ms}
        )
