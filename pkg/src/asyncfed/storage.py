"""Bucket/key object storage for model exchange.

Two backends share one interface: an in-memory store used by tests and
the simulator, and a filesystem store (``<root>/<bucket>/<path>``) for
post-mortem inspection of runs.  A real S3/Minio client would implement
the same ``ObjectStore`` surface.

Byte counters feed the communication-cost metric.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

from .errors import ObjectNotFoundError, StorageError


@dataclass(frozen=True)
class ObjectKey:
    bucket: str
    path: str

    def __post_init__(self):
        if not self.bucket or not self.path:
            raise StorageError(f"bucket and path must be nonempty, got {self!r}")

    def __str__(self) -> str:
        return f"{self.bucket}/{self.path}"


class ObjectStore(ABC):
    def __init__(self):
        self.bytes_uploaded = 0
        self.bytes_downloaded = 0
        # every payload ever written, including later-deleted ones (for audits)
        self.put_history: list[tuple[str, bytes]] = []

    @abstractmethod
    def create_bucket(self, name: str) -> str:
        """Idempotent; returns "ok" on creation, "exists" otherwise."""

    @abstractmethod
    def list_buckets(self) -> list[str]: ...

    @abstractmethod
    def put(self, key: ObjectKey, payload: bytes) -> int:
        """Store (overwrite allowed); returns a per-key version token."""

    @abstractmethod
    def get(self, key: ObjectKey) -> bytes: ...

    @abstractmethod
    def delete(self, key: ObjectKey) -> None:
        """Idempotent removal."""

    @abstractmethod
    def list_keys(self, bucket: str, prefix: str = "") -> list[str]: ...

    def all_objects(self) -> list[tuple[ObjectKey, bytes]]:
        out = []
        for bucket in self.list_buckets():
            for path in self.list_keys(bucket):
                key = ObjectKey(bucket, path)
                out.append((key, self._peek(key)))
        return out

    @abstractmethod
    def _peek(self, key: ObjectKey) -> bytes:
        """Read without touching the download counter (for scanners)."""


class InMemoryObjectStore(ObjectStore):
    def __init__(self):
        super().__init__()
        self._buckets: dict[str, dict[str, bytes]] = {}
        self._versions: dict[tuple[str, str], int] = {}

    def create_bucket(self, name):
        if name in self._buckets:
            return "exists"
        self._buckets[name] = {}
        return "ok"

    def list_buckets(self):
        return sorted(self._buckets)

    def put(self, key, payload):
        if key.bucket not in self._buckets:
            raise StorageError(f"bucket {key.bucket!r} does not exist")
        self._buckets[key.bucket][key.path] = bytes(payload)
        token = self._versions.get((key.bucket, key.path), 0) + 1
        self._versions[(key.bucket, key.path)] = token
        self.bytes_uploaded += len(payload)
        self.put_history.append((str(key), bytes(payload)))
        return token

    def get(self, key):
        payload = self._peek(key)
        self.bytes_downloaded += len(payload)
        return payload

    def _peek(self, key):
        bucket = self._buckets.get(key.bucket)
        if bucket is None or key.path not in bucket:
            raise ObjectNotFoundError(f"no object at {key}")
        return bucket[key.path]

    def delete(self, key):
        bucket = self._buckets.get(key.bucket)
        if bucket is not None:
            bucket.pop(key.path, None)

    def list_keys(self, bucket, prefix=""):
        objects = self._buckets.get(bucket)
        if objects is None:
            raise StorageError(f"bucket {bucket!r} does not exist")
        return sorted(p for p in objects if p.startswith(prefix))


class FilesystemObjectStore(ObjectStore):
    """Maps bucket/path to directories/files under ``root``."""

    def __init__(self, root):
        super().__init__()
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._versions: dict[tuple[str, str], int] = {}

    def _bucket_dir(self, name: str) -> Path:
        return self.root / name

    def _object_path(self, key: ObjectKey) -> Path:
        p = (self._bucket_dir(key.bucket) / key.path).resolve()
        if self._bucket_dir(key.bucket).resolve() not in p.parents:
            raise StorageError(f"path escapes its bucket: {key}")
        return p

    def create_bucket(self, name):
        bucket = self._bucket_dir(name)
        if bucket.exists():
            return "exists"
        bucket.mkdir(parents=True)
        return "ok"

    def list_buckets(self):
        return sorted(p.name for p in self.root.iterdir() if p.is_dir())

    def put(self, key, payload):
        if not self._bucket_dir(key.bucket).is_dir():
            raise StorageError(f"bucket {key.bucket!r} does not exist")
        path = self._object_path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(payload)
        tmp.replace(path)
        token = self._versions.get((key.bucket, key.path), 0) + 1
        self._versions[(key.bucket, key.path)] = token
        self.bytes_uploaded += len(payload)
        self.put_history.append((str(key), bytes(payload)))
        return token

    def get(self, key):
        payload = self._peek(key)
        self.bytes_downloaded += len(payload)
        return payload

    def _peek(self, key):
        path = self._object_path(key)
        if not path.is_file():
            raise ObjectNotFoundError(f"no object at {key}")
        return path.read_bytes()

    def delete(self, key):
        path = self._object_path(key)
        if path.is_file():
            path.unlink()

    def list_keys(self, bucket, prefix=""):
        bucket_dir = self._bucket_dir(bucket)
        if not bucket_dir.is_dir():
            raise StorageError(f"bucket {bucket!r} does not exist")
        keys = []
        for path in bucket_dir.rglob("*"):
            if path.is_file():
                rel = path.relative_to(bucket_dir).as_posix()
                if rel.startswith(prefix):
                    keys.append(rel)
        return sorted(keys)
