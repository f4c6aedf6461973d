"""Content-addressed, write-once file cache for backend outputs.

Entries live at ``<root>/<d[0:2]>/<d[2:4]>/<digest>``. Writes go through a
temp file and a no-clobber hard link, so concurrent writers of the same key
never expose partial data.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .errors import CacheCorruptionError, InputError

NAMESPACES = ("qgen", "detect", "vqa")


def cache_key(namespace: str, backend_id: str, model_version: str, *parts: bytes | str) -> str:
    """Hex digest over (namespace, backend id, model version, canonical input bytes).

    Every component is length-prefixed so distinct tuples can never collide
    by concatenation.
    """
    if namespace not in NAMESPACES:
        raise InputError(f"unknown cache namespace {namespace!r}; expected one of {NAMESPACES}")
    h = hashlib.sha256()
    for part in (namespace, backend_id, model_version, *parts):
        data = part.encode("utf-8") if isinstance(part, str) else bytes(part)
        h.update(len(data).to_bytes(8, "big"))
        h.update(data)
    return h.hexdigest()


def _check_key(key: str) -> None:
    if len(key) != 64 or any(c not in "0123456789abcdef" for c in key):
        raise InputError(f"malformed cache key {key!r}")


@dataclass(frozen=True)
class CacheEntry:
    key: str
    value: bytes
    created_at: datetime

    def json(self) -> Any:
        return json.loads(self.value)


class CacheStore:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()
        self.locks = KeyedLock()

    def path_for(self, key: str) -> Path:
        _check_key(key)
        return self.root / key[:2] / key[2:4] / key

    def get(self, key: str) -> bytes | None:
        """Return stored bytes, or None on a miss."""
        path = self.path_for(key)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            with self._lock:
                self.misses += 1
            return None
        with self._lock:
            self.hits += 1
        return data

    def entry(self, key: str) -> CacheEntry | None:
        path = self.path_for(key)
        try:
            data = path.read_bytes()
            mtime = path.stat().st_mtime
        except FileNotFoundError:
            return None
        return CacheEntry(key, data, datetime.fromtimestamp(mtime, tz=timezone.utc))

    def put(self, key: str, payload: bytes) -> None:
        path = self.path_for(key)
        payload = bytes(payload)
        if path.exists():
            self._verify(path, payload)
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            try:
                os.link(tmp, path)
            except FileExistsError:
                self._verify(path, payload)
            except OSError:
                # filesystems without hard links
                if path.exists():
                    self._verify(path, payload)
                else:
                    os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)

    def _verify(self, path: Path, payload: bytes) -> None:
        existing = path.read_bytes()
        if existing != payload:
            raise CacheCorruptionError(
                f"cache key {path.name} already holds different bytes; backend is nondeterministic"
            )

    # JSON convenience layer

    def get_json(self, key: str) -> Any | None:
        data = self.get(key)
        return None if data is None else json.loads(data)

    def put_json(self, key: str, value: Any) -> None:
        self.put(key, json.dumps(value, sort_keys=True, separators=(",", ":")).encode("utf-8"))

    def count(self) -> int:
        return sum(1 for p in self.root.glob("??/??/*") if not p.name.startswith(".tmp-"))


class KeyedLock:
    """Hands out one lock per key so concurrent workers compute each entry once."""

    def __init__(self) -> None:
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}

    def __call__(self, key: str) -> threading.Lock:
        with self._guard:
            lock = self._locks.get(key)
            if lock is None:
                lock = self._locks[key] = threading.Lock()
            return lock
