import hashlib
import json
import logging
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator, Optional

from gmfg import __version__
from gmfg.exceptions import GmfgError

logger = logging.getLogger(__name__)


def config_hash(config) -> str:
    """sha256 of the canonical JSON dump of a validated config."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class RunSession:
    """An append-only run directory plus the metadata finalized into meta.json."""

    def __init__(self, command: str, root: Path, config=None):
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%f")
        self.command = command
        self.path = Path(root) / f"{command}-{stamp}"
        self.status = "ok"
        self.meta: dict[str, Any] = {
            "command": command,
            "started_at": datetime.now(timezone.utc).isoformat(),
            "version": __version__,
            "config_hash": config_hash(config) if config is not None else None,
            "config": config.model_dump(mode="json") if config is not None else None,
            "seeds": {},
        }

    def open(self) -> "RunSession":
        suffix = 0
        base = self.path
        while True:
            try:
                self.path.mkdir(parents=True, exist_ok=False)
                break
            except FileExistsError:
                suffix += 1
                self.path = base.with_name(f"{base.name}-{suffix}")
        logger.info(f"Run directory {self.path}")
        return self

    def file(self, name: str) -> Path:
        return self.path / name

    def record_seed(self, name: str, value: int) -> None:
        self.meta["seeds"][name] = int(value)

    def finalize(self, wall_seconds: float, error: Optional[BaseException] = None) -> Path:
        self.meta["status"] = "failed" if error is not None else self.status
        self.meta["wall_seconds"] = wall_seconds
        if error is not None:
            self.meta["error"] = str(error)
            if isinstance(error, GmfgError):
                self.meta["error_payload"] = {k: str(v) for k, v in error.payload.items()}
        path = self.file("meta.json")
        path.write_text(json.dumps(self.meta, indent=2, sort_keys=True, default=str), encoding="utf-8")
        return path


@contextmanager
def run_session(command: str, root: Path, config=None) -> Iterator[RunSession]:
    """Open a run directory; meta.json is written whether the command succeeds or fails."""
    session = RunSession(command, root, config).open()
    started = time.perf_counter()
    try:
        yield session
    except BaseException as exc:
        session.finalize(time.perf_counter() - started, exc)
        raise
    session.finalize(time.perf_counter() - started)
