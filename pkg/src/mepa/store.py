"""Knowledge base and query set: domain types and on-disk formats.

Three file formats live here:

* KB manifest: UTF-8 JSONL, one entry per line with keys
  ``{"id", "image_ref", "metadata_text", "poisoned", "payload_answer"?}``.
* Query manifest: UTF-8 JSONL with keys ``{"id", "question", "paraphrase"?,
  "image_context"?, "gold_entry_ids", "gold_answers", "target_answer"?,
  "scope_entry_ids"?}``.
* Embedding file: magic bytes ``MEPAEMB1``, little-endian u32 dim,
  little-endian u64 count, then ``count`` records of (u32 id byte-length,
  UTF-8 id bytes, dim little-endian float32 values). Image and metadata
  vectors go in separate files.

Embeddings are kept out of the manifest on purpose: corpora get re-embedded
under different retrievers without touching the text metadata. Save/load is
byte-identical in both directions for files this module wrote.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .embedding import Embedding, normalize
from .errors import (
    BadMagic,
    DataError,
    DimMismatch,
    DimZero,
    DuplicateId,
    MissingVector,
    ParseError,
    TruncatedFile,
    UnresolvedKb,
)
from . import _kernels

EMBEDDING_MAGIC = b"MEPAEMB1"


@dataclass(frozen=True)
class KbEntry:
    """One image/metadata pair. The image is opaque: only its locator and
    embedding are carried, pixels are never touched."""

    id: str
    image_ref: str
    metadata_text: str
    image_embedding: Embedding | None = None
    metadata_embedding: Embedding | None = None
    poisoned: bool = False
    payload_answer: str | None = None

    def __post_init__(self):
        if not self.poisoned and self.payload_answer is not None:
            raise ValueError(f"entry {self.id!r}: payload_answer on a clean entry")
        if (
            self.image_embedding is not None
            and self.metadata_embedding is not None
            and self.image_embedding.dim != self.metadata_embedding.dim
        ):
            raise DimMismatch(
                f"entry {self.id!r}: image dim {self.image_embedding.dim} "
                f"!= metadata dim {self.metadata_embedding.dim}"
            )

    @property
    def resolved(self) -> bool:
        return self.image_embedding is not None and self.metadata_embedding is not None


class KnowledgeBase:
    """Ordered, immutable collection of entries with unique ids.

    Treat instances as read-only; mutation goes through ``inject_entry``,
    which returns a new view. Score matrices are built lazily and cached,
    so concurrent readers need no coordination.
    """

    def __init__(self, entries: Iterable[KbEntry]):
        entries = tuple(entries)
        index: dict[str, int] = {}
        for i, e in enumerate(entries):
            if e.id in index:
                raise DuplicateId(e.id)
            index[e.id] = i
        self.entries = entries
        self._index = index
        dims = {e.image_embedding.dim for e in entries if e.image_embedding is not None}
        if len(dims) > 1:
            raise DimMismatch(f"mixed embedding dims in knowledge base: {sorted(dims)}")
        self._dim = dims.pop() if dims else None
        self._matrices: tuple | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._index

    def entry(self, entry_id: str) -> KbEntry:
        try:
            return self.entries[self._index[entry_id]]
        except KeyError:
            raise DataError(f"unknown entry id {entry_id!r}") from None

    def index_of(self, entry_id: str) -> int:
        return self._index[entry_id]

    @property
    def dim(self) -> int | None:
        return self._dim

    @property
    def resolved(self) -> bool:
        return len(self.entries) > 0 and all(e.resolved for e in self.entries)

    def matrices(self):
        """Return (ids, image matrix, metadata matrix, id ranks) for scoring.

        ``id ranks`` gives each entry's position in ascending lexicographic
        id order, used as the deterministic tie-break key.
        """
        if not self.resolved:
            raise UnresolvedKb("knowledge base has entries without embeddings")
        if self._matrices is None:
            ids = tuple(e.id for e in self.entries)
            img = _kernels.as_kernel_matrix(
                np.stack([e.image_embedding.values for e in self.entries])
            )
            meta = _kernels.as_kernel_matrix(
                np.stack([e.metadata_embedding.values for e in self.entries])
            )
            order = sorted(range(len(ids)), key=lambda i: ids[i])
            rank = np.empty(len(ids), dtype=np.int64)
            for r, i in enumerate(order):
                rank[i] = r
            self._matrices = (ids, img, meta, rank)
        return self._matrices


@dataclass(frozen=True)
class QueryCase:
    """One evaluation query with its gold evidence and attacker payload."""

    id: str
    question: str
    gold_entry_ids: frozenset[str]
    gold_answers: tuple[str, ...]
    paraphrase: str | None = None
    image_context: str | None = None
    target_answer: str | None = None
    scope_entry_ids: frozenset[str] | None = None
    query_embedding: Embedding | None = None
    paraphrase_embedding: Embedding | None = None

    def __post_init__(self):
        if not self.gold_entry_ids:
            raise ValueError(f"query {self.id!r}: gold_entry_ids empty")
        if not self.gold_answers:
            raise ValueError(f"query {self.id!r}: gold_answers empty")


# -- manifest I/O -------------------------------------------------------------

def load_manifest(path) -> KnowledgeBase:
    """Parse a KB manifest; embeddings stay unresolved until attached."""
    entries = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise ParseError(str(path), lineno, "expected a JSON object")
            try:
                entry_id = obj["id"]
                image_ref = obj["image_ref"]
                metadata_text = obj["metadata_text"]
                poisoned = obj["poisoned"]
            except KeyError as exc:
                raise ParseError(str(path), lineno, f"missing key {exc.args[0]!r}") from exc
            payload = obj.get("payload_answer")
            if not isinstance(entry_id, str) or not entry_id:
                raise ParseError(str(path), lineno, "id must be a non-empty string")
            if not isinstance(poisoned, bool):
                raise ParseError(str(path), lineno, "poisoned must be a boolean")
            if entry_id in seen:
                raise DuplicateId(entry_id)
            seen.add(entry_id)
            try:
                entries.append(
                    KbEntry(
                        id=entry_id,
                        image_ref=str(image_ref),
                        metadata_text=str(metadata_text),
                        poisoned=poisoned,
                        payload_answer=payload,
                    )
                )
            except ValueError as exc:
                raise ParseError(str(path), lineno, str(exc)) from exc
    return KnowledgeBase(entries)


def save_manifest(kb: KnowledgeBase, path) -> None:
    """Write a KB manifest in canonical key order (round-trip stable)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in kb.entries:
            rec: dict = {
                "id": e.id,
                "image_ref": e.image_ref,
                "metadata_text": e.metadata_text,
                "poisoned": e.poisoned,
            }
            if e.payload_answer is not None:
                rec["payload_answer"] = e.payload_answer
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_queries(path) -> list[QueryCase]:
    cases = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), lineno, f"invalid JSON: {exc.msg}") from exc
            try:
                qid = obj["id"]
                question = obj["question"]
                gold_ids = obj["gold_entry_ids"]
                gold_answers = obj["gold_answers"]
            except KeyError as exc:
                raise ParseError(str(path), lineno, f"missing key {exc.args[0]!r}") from exc
            if qid in seen:
                raise DuplicateId(qid)
            seen.add(qid)
            if not isinstance(gold_ids, list) or not gold_ids:
                raise ParseError(str(path), lineno, "gold_entry_ids must be a non-empty list")
            if not isinstance(gold_answers, list) or not gold_answers:
                raise ParseError(str(path), lineno, "gold_answers must be a non-empty list")
            scope = obj.get("scope_entry_ids")
            try:
                cases.append(
                    QueryCase(
                        id=str(qid),
                        question=str(question),
                        paraphrase=obj.get("paraphrase"),
                        image_context=obj.get("image_context"),
                        gold_entry_ids=frozenset(str(g) for g in gold_ids),
                        gold_answers=tuple(str(a) for a in gold_answers),
                        target_answer=obj.get("target_answer"),
                        scope_entry_ids=(
                            frozenset(str(s) for s in scope) if scope is not None else None
                        ),
                    )
                )
            except ValueError as exc:
                raise ParseError(str(path), lineno, str(exc)) from exc
    return cases


def save_queries(cases: Iterable[QueryCase], path) -> None:
    """Write a query manifest; set-valued fields are sorted for stable bytes."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q in cases:
            rec: dict = {"id": q.id, "question": q.question}
            if q.paraphrase is not None:
                rec["paraphrase"] = q.paraphrase
            if q.image_context is not None:
                rec["image_context"] = q.image_context
            rec["gold_entry_ids"] = sorted(q.gold_entry_ids)
            rec["gold_answers"] = list(q.gold_answers)
            if q.target_answer is not None:
                rec["target_answer"] = q.target_answer
            if q.scope_entry_ids is not None:
                rec["scope_entry_ids"] = sorted(q.scope_entry_ids)
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


# -- embedding file I/O -------------------------------------------------------

def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFile(f"file ended reading {what}")
    return buf


def load_embeddings(path) -> dict[str, np.ndarray]:
    """Read an embedding file into an id -> float32 vector mapping.

    Record order is preserved, so write_embeddings(load_embeddings(f))
    reproduces f byte for byte.
    """
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(EMBEDDING_MAGIC))
        if magic != EMBEDDING_MAGIC:
            raise BadMagic(f"{path}: bad magic {magic!r}")
        header = _read_exact(fh, 12, "header")
        dim, count = struct.unpack("<IQ", header)
        if dim == 0:
            raise DimZero(f"{path}: declared dimension is 0")
        for i in range(count):
            (id_len,) = struct.unpack("<I", _read_exact(fh, 4, f"record {i} id length"))
            entry_id = _read_exact(fh, id_len, f"record {i} id").decode("utf-8")
            vec_bytes = _read_exact(fh, 4 * dim, f"record {i} vector")
            if entry_id in out:
                raise DuplicateId(entry_id)
            out[entry_id] = np.frombuffer(vec_bytes, dtype="<f4").copy()
        trailing = fh.read(1)
        if trailing:
            raise TruncatedFile(f"{path}: trailing bytes after {count} records")
    return out


def write_embeddings(path, vectors: Mapping[str, np.ndarray], dim: int | None = None) -> None:
    """Write vectors in mapping order as little-endian float32 records."""
    items = list(vectors.items())
    if dim is None:
        if not items:
            raise DataError("cannot infer dimension from an empty mapping")
        dim = int(np.asarray(items[0][1]).shape[0])
    if dim == 0:
        raise DimZero("refusing to write dimension-0 vectors")
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<IQ", dim, len(items)))
        for entry_id, vec in items:
            arr = np.asarray(vec, dtype="<f4")
            if arr.ndim != 1 or arr.shape[0] != dim:
                raise DimMismatch(
                    f"vector for {entry_id!r} has shape {arr.shape}, expected ({dim},)"
                )
            id_bytes = entry_id.encode("utf-8")
            fh.write(struct.pack("<I", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(arr.tobytes())


# -- resolution and mutation --------------------------------------------------

def attach_embeddings(
    kb: KnowledgeBase,
    images: Mapping[str, np.ndarray],
    metas: Mapping[str, np.ndarray],
) -> KnowledgeBase:
    """Normalize and attach raw vectors to every entry; returns a new KB."""
    resolved = []
    dim: int | None = None
    for e in kb.entries:
        if e.id not in images:
            raise MissingVector(e.id, "image")
        if e.id not in metas:
            raise MissingVector(e.id, "metadata")
        img = normalize(images[e.id])
        meta = normalize(metas[e.id])
        if img.dim != meta.dim:
            raise DimMismatch(
                f"entry {e.id!r}: image dim {img.dim} != metadata dim {meta.dim}"
            )
        if dim is None:
            dim = img.dim
        elif img.dim != dim:
            raise DimMismatch(f"entry {e.id!r}: dim {img.dim} != expected {dim}")
        resolved.append(replace(e, image_embedding=img, metadata_embedding=meta))
    return KnowledgeBase(resolved)


def attach_query_embeddings(
    cases: Iterable[QueryCase],
    queries: Mapping[str, np.ndarray],
    paraphrases: Mapping[str, np.ndarray] | None = None,
) -> list[QueryCase]:
    out = []
    for q in cases:
        if q.id not in queries:
            raise MissingVector(q.id, "query")
        q_emb = normalize(queries[q.id])
        p_emb = None
        if paraphrases is not None and q.id in paraphrases:
            p_emb = normalize(paraphrases[q.id])
        out.append(replace(q, query_embedding=q_emb, paraphrase_embedding=p_emb))
    return out


def inject_entry(kb: KnowledgeBase, entry: KbEntry) -> KnowledgeBase:
    """Add one entry, leaving every existing entry untouched.

    Existing image embeddings are never modified: the metadata-only threat
    model forbids it, and the new KB shares the old entry objects.
    """
    if entry.id in kb:
        raise DuplicateId(entry.id)
    if not entry.resolved:
        raise UnresolvedKb(f"entry {entry.id!r} must carry both embeddings")
    if kb.dim is not None and entry.image_embedding.dim != kb.dim:
        raise DimMismatch(
            f"entry {entry.id!r} dim {entry.image_embedding.dim} != KB dim {kb.dim}"
        )
    return KnowledgeBase(kb.entries + (entry,))
