"""Manifest-driven corpus ingestion and embedding-cache persistence.

Manifests are JSON lines, one record per line:
    {"path": str, "category": str, "kind": "image"|"sketch"|"pictograph",
     "sketchability": int?, "system": str?, "sign_name": str?}
Unknown fields are ignored with a warning.

Embedding caches are a flat binary container (little-endian):
    magic "EMB1" | count u32 | dim u32 |
    per record: id_len u32 | UTF-8 id | dim x float32
The encoder name lives on the in-memory object only; the byte layout
carries no name field. Raw tensors (activation maps, RDMs, images) are
exchanged as .npy float32 files.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CacheFormatError, CacheLengthError, ManifestError

log = logging.getLogger(__name__)

CACHE_MAGIC = b"EMB1"

KINDS = ("image", "sketch", "pictograph")
SYSTEMS = ("hieroglyph", "oracle", "protocuneiform")

_KNOWN_FIELDS = {"path", "category", "kind", "sketchability", "system", "sign_name"}


@dataclass(frozen=True)
class CorpusRecord:
    path: str
    category: str
    kind: str
    sketchability: int | None = None
    system: str | None = None
    sign_name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ManifestError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.system is not None and self.system not in SYSTEMS:
            raise ManifestError(f"system must be one of {SYSTEMS}, got {self.system!r}")
        if self.sketchability is not None and not 1 <= self.sketchability <= 5:
            raise ManifestError(
                f"sketchability must be in [1, 5], got {self.sketchability}"
            )
        if self.kind == "pictograph" and self.system == "protocuneiform" and not self.sign_name:
            raise ManifestError("protocuneiform pictographs require a sign_name")


def load_manifest(path) -> list[CorpusRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"invalid JSON: {e.msg}", line_number=lineno) from e
            if not isinstance(obj, dict):
                raise ManifestError("record must be a JSON object", line_number=lineno)
            unknown = set(obj) - _KNOWN_FIELDS
            if unknown:
                log.warning("manifest line %d: ignoring unknown fields %s", lineno, sorted(unknown))
            try:
                records.append(
                    CorpusRecord(
                        path=obj["path"],
                        category=obj["category"],
                        kind=obj["kind"],
                        sketchability=obj.get("sketchability"),
                        system=obj.get("system"),
                        sign_name=obj.get("sign_name"),
                    )
                )
            except KeyError as e:
                raise ManifestError(f"missing required field {e.args[0]!r}", line_number=lineno) from e
            except ManifestError as e:
                raise ManifestError(str(e), line_number=lineno) from e
    return records


def filter_records(
    records: list[CorpusRecord],
    *,
    kinds: tuple[str, ...] | None = None,
    categories: tuple[str, ...] | None = None,
    systems: tuple[str, ...] | None = None,
    max_sketchability: int | None = None,
    exclude_sign_prefixes: tuple[str, ...] = (),
) -> list[CorpusRecord]:
    """Stable-order subset; all criteria are conjunctive."""
    out = []
    for r in records:
        if kinds is not None and r.kind not in kinds:
            continue
        if categories is not None and r.category not in categories:
            continue
        if systems is not None and r.system not in systems:
            continue
        if max_sketchability is not None and r.sketchability is not None and r.sketchability > max_sketchability:
            continue
        if r.sign_name and any(r.sign_name.startswith(p) for p in exclude_sign_prefixes):
            continue
        out.append(r)
    return out


@dataclass
class EmbeddingCache:
    encoder_name: str
    dimension: int
    records: list[tuple[str, np.ndarray]]

    def __post_init__(self):
        ids = [i for i, _ in self.records]
        if len(set(ids)) != len(ids):
            raise CacheFormatError("cache ids must be unique")
        for i, v in self.records:
            if v.shape != (self.dimension,):
                raise CacheFormatError(
                    f"vector for {i!r} has shape {v.shape}, expected ({self.dimension},)"
                )

    def ids(self) -> list[str]:
        return [i for i, _ in self.records]

    def vector(self, record_id: str) -> np.ndarray:
        for i, v in self.records:
            if i == record_id:
                return v
        raise KeyError(record_id)


def save_cache(cache: EmbeddingCache, path) -> None:
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<II", len(cache.records), cache.dimension))
        for record_id, values in cache.records:
            raw = record_id.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def load_cache(path, encoder_name: str = "") -> EmbeddingCache:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CACHE_MAGIC:
        raise CacheFormatError(f"bad cache magic {data[:4]!r}")
    if len(data) < 12:
        raise CacheLengthError("cache header truncated")
    count, dim = struct.unpack_from("<II", data, 4)
    offset = 12
    records = []
    for _ in range(count):
        if len(data) < offset + 4:
            raise CacheLengthError("cache ended before a record id length")
        (id_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if len(data) < offset + id_len + 4 * dim:
            raise CacheLengthError("cache ended inside a record")
        record_id = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(np.float32)
        offset += 4 * dim
        records.append((record_id, values))
    if offset != len(data):
        raise CacheLengthError(f"{len(data) - offset} trailing bytes after declared records")
    return EmbeddingCache(encoder_name=encoder_name, dimension=dim, records=records)


def save_tensor(arr: np.ndarray, path) -> None:
    np.save(path, np.asarray(arr, dtype=np.float32))


def load_tensor(path) -> np.ndarray:
    return np.load(path).astype(np.float64)
