"""Knowledge base: corpus chunking, embedded store, and exhaustive cosine search.

The store is immutable after build and safe for concurrent searches. At the
scale this runs at (thousands of chunks) an exhaustive scan beats any index
for simplicity and is exactly reproducible: equal scores break ties by
ascending chunk id.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels, embed
from .errors import (
    CorruptStore,
    DegenerateVector,
    DimensionMismatch,
    FormatError,
    IngestError,
    InvalidInput,
)

STORE_FORMAT_VERSION = 1

# File suffix for pre-chunked corpus files: one JSON record {text, tags?} per
# line, ingested verbatim instead of going through the chunker.
PRECHUNKED_SUFFIX = ".chunks.jsonl"

_PARAGRAPH_BREAK = re.compile(r"\n\s*\n")
_SENTENCE_END = re.compile(r"[.!?]['\")\]]*\s+")


@dataclass(frozen=True)
class ChunkingParams:
    target_len: int = 1000
    overlap: int = 100
    boundary_mode: str = "paragraph"  # paragraph | sentence | fixed

    def __post_init__(self):
        if self.target_len < 64:
            raise InvalidInput(f"target_len must be >= 64, got {self.target_len}")
        if self.overlap < 0 or self.overlap >= self.target_len:
            raise InvalidInput("overlap must satisfy 0 <= overlap < target_len")
        if self.boundary_mode not in ("paragraph", "sentence", "fixed"):
            raise InvalidInput(f"unknown boundary_mode {self.boundary_mode!r}")


@dataclass(frozen=True)
class Chunk:
    id: str
    source: str
    offset: int
    text: str
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class RetrievalResult:
    chunk_id: str
    score: float


def _boundaries(text: str, mode: str) -> list[int]:
    """Candidate cut positions (end-exclusive), always including len(text)."""
    cuts = []
    if mode == "paragraph":
        cuts = [m.end() for m in _PARAGRAPH_BREAK.finditer(text)]
    elif mode == "sentence":
        cuts = [m.end() for m in _SENTENCE_END.finditer(text)]
    if not cuts or cuts[-1] != len(text):
        cuts.append(len(text))
    return cuts


def chunk_text(text: str, params: ChunkingParams, source: str = "doc") -> list[Chunk]:
    """Split text into overlapping chunks along boundary-mode cut points.

    Every chunk is a contiguous slice of the source, so concatenating chunk
    texts minus the overlaps reconstructs the input and every character is
    covered. A unit (paragraph/sentence) longer than target_len is kept whole
    up to 2*target_len, then hard-cut.
    """
    if not text:
        raise InvalidInput("cannot chunk empty text")
    cuts = _boundaries(text, params.boundary_mode) if params.boundary_mode != "fixed" else []
    chunks: list[Chunk] = []
    start = 0
    while start < len(text):
        limit = start + params.target_len
        if params.boundary_mode == "fixed":
            end = min(limit, len(text))
        else:
            fitting = [c for c in cuts if start < c <= limit]
            if fitting:
                end = fitting[-1]
            else:
                nxt = next((c for c in cuts if c > start), len(text))
                # Keep the unit whole if it fits the 2x bound, else hard cut.
                end = nxt if nxt <= start + 2 * params.target_len else limit
        end = min(end, len(text))
        chunks.append(Chunk(
            id=f"{source}:{len(chunks):04d}",
            source=source,
            offset=start,
            text=text[start:end],
        ))
        if end >= len(text):
            break
        start = max(end - params.overlap, start + 1)
    return chunks


@dataclass
class KnowledgeBase:
    """Embedded chunk store; entries are (Chunk, float32 vector), sorted by id."""

    kb_id: str
    embedder_id: str
    dim: int
    entries: list[tuple[Chunk, np.ndarray]]
    created_at: int = field(default_factory=lambda: int(time.time() * 1000))

    def __post_init__(self):
        if not self.entries:
            raise InvalidInput("a knowledge base must have at least one entry")
        seen = set()
        for chunk, vec in self.entries:
            if chunk.id in seen:
                raise InvalidInput(f"duplicate chunk id {chunk.id!r}")
            seen.add(chunk.id)
            if vec.shape != (self.dim,):
                raise DimensionMismatch(
                    f"entry {chunk.id} has shape {vec.shape}, kb dim is {self.dim}")
        self.entries.sort(key=lambda e: e[0].id)
        self._ids = [c.id for c, _ in self.entries]
        self._matrix = np.ascontiguousarray(
            np.stack([v for _, v in self.entries]).astype(np.float32))
        self._norms = np.linalg.norm(self._matrix.astype(np.float64), axis=1)
        if np.any(self._norms == 0.0):
            raise DegenerateVector("knowledge base contains a zero vector")

    def __len__(self) -> int:
        return len(self.entries)

    def chunk(self, chunk_id: str) -> Chunk:
        for c, _ in self.entries:
            if c.id == chunk_id:
                return c
        raise InvalidInput(f"no chunk {chunk_id!r} in kb {self.kb_id}")

    def chunk_texts(self) -> dict[str, str]:
        return {c.id: c.text for c, _ in self.entries}


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """dot(a,b)/(|a||b|), accumulated in float64; result in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dims differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVector("cosine similarity undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def search(kb: KnowledgeBase, query: np.ndarray, k: int) -> list[RetrievalResult]:
    """Exhaustive top-k by cosine score, ties broken by ascending chunk id."""
    if k < 1:
        raise InvalidInput(f"k must be >= 1, got {k}")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (kb.dim,):
        raise DimensionMismatch(f"query shape {query.shape} vs kb dim {kb.dim}")
    qnorm = float(np.linalg.norm(query))
    if qnorm == 0.0:
        raise DegenerateVector("query vector is zero")
    scores = _kernels.dot_scan(kb._matrix, query) / (kb._norms * qnorm)
    # Entries are id-sorted, so a stable sort on -score breaks ties by id.
    order = np.argsort(-scores, kind="stable")[: min(k, len(kb))]
    return [RetrievalResult(kb._ids[i], float(scores[i])) for i in order]


def _corpus_files(dir: Path) -> list[Path]:
    return sorted(
        p for p in dir.iterdir()
        if p.is_file() and (p.suffix in (".txt", ".md") or p.name.endswith(PRECHUNKED_SUFFIX))
    )


def _read_prechunked(path: Path) -> list[Chunk]:
    source = path.name[: -len(PRECHUNKED_SUFFIX)]
    chunks = []
    offset = 0
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestError(f"{path}: bad chunk record on line {i + 1}: {exc}")
        text = rec.get("text", "")
        if not text:
            raise IngestError(f"{path}: empty chunk text on line {i + 1}")
        chunks.append(Chunk(
            id=f"{source}:{len(chunks):04d}",
            source=source,
            offset=offset,
            text=text,
            tags=tuple(rec.get("tags", [])),
        ))
        offset += len(text)
    return chunks


def chunk_corpus(dir: str | Path, params: ChunkingParams) -> list[Chunk]:
    """Chunk every document in a directory (pre-chunked files pass through)."""
    dir = Path(dir)
    if not dir.is_dir():
        raise IngestError(f"corpus directory {dir} does not exist")
    files = _corpus_files(dir)
    if not files:
        raise IngestError(f"no corpus documents found in {dir}")
    chunks: list[Chunk] = []
    for path in files:
        if path.name.endswith(PRECHUNKED_SUFFIX):
            chunks.extend(_read_prechunked(path))
            continue
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise IngestError(f"unreadable corpus file {path}: {exc}")
        if not text.strip():
            raise IngestError(f"corpus file {path} is empty")
        chunks.extend(chunk_text(text, params, source=path.stem))
    return chunks


def _kb_id(chunks: list[Chunk], params: ChunkingParams, embedder_id: str) -> str:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c.id.encode())
        h.update(c.text.encode())
    h.update(f"{params.target_len}:{params.overlap}:{params.boundary_mode}".encode())
    h.update(embedder_id.encode())
    return f"kb-{h.hexdigest()[:12]}"


def ingest_corpus(dir: str | Path, params: ChunkingParams,
                  embedder: embed.EmbedderSpec | str) -> KnowledgeBase:
    """Chunk and embed a corpus directory into a searchable knowledge base."""
    spec = embed.get_spec(embedder) if isinstance(embedder, str) else embedder
    chunks = chunk_corpus(dir, params)
    vectors = embed.embed_batch(spec, [c.text for c in chunks])
    return KnowledgeBase(
        kb_id=_kb_id(chunks, params, spec.embedder_id),
        embedder_id=spec.embedder_id,
        dim=spec.dim,
        entries=list(zip(chunks, vectors)),
    )


def _entry_line(chunk: Chunk, vec: np.ndarray) -> str:
    return json.dumps({
        "id": chunk.id,
        "source": chunk.source,
        "offset": chunk.offset,
        "text": chunk.text,
        "tags": list(chunk.tags),
        "vector": [float(x) for x in vec],
    }, ensure_ascii=False, sort_keys=True)


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    """Write the store: line 1 manifest, one entry record per following line."""
    path = Path(path)
    entry_lines = [_entry_line(c, v) for c, v in kb.entries]
    checksum = hashlib.sha256("\n".join(entry_lines).encode("utf-8")).hexdigest()
    manifest = json.dumps({
        "format_version": STORE_FORMAT_VERSION,
        "kb_id": kb.kb_id,
        "embedder_id": kb.embedder_id,
        "dim": kb.dim,
        "count": len(kb.entries),
        "created_at": kb.created_at,
        "checksum": checksum,
    }, sort_keys=True)
    path.write_text(manifest + "\n" + "\n".join(entry_lines) + "\n", encoding="utf-8")


def load_kb(path: str | Path) -> KnowledgeBase:
    """Load a store written by save_kb; vectors round-trip bit-exact."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorruptStore(f"cannot read kb store {path}: {exc}")
    if not lines:
        raise FormatError(f"{path} is empty")
    try:
        manifest = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad manifest line: {exc}")
    if manifest.get("format_version") != STORE_FORMAT_VERSION:
        raise FormatError(
            f"{path}: store format version {manifest.get('format_version')!r} "
            f"is not {STORE_FORMAT_VERSION}")
    entry_lines = [ln for ln in lines[1:] if ln]
    if len(entry_lines) != manifest["count"]:
        raise CorruptStore(
            f"{path}: manifest says {manifest['count']} entries, found {len(entry_lines)}")
    checksum = hashlib.sha256("\n".join(entry_lines).encode("utf-8")).hexdigest()
    if checksum != manifest["checksum"]:
        raise CorruptStore(f"{path}: checksum mismatch")
    entries = []
    for ln in entry_lines:
        rec = json.loads(ln)
        chunk = Chunk(
            id=rec["id"], source=rec["source"], offset=rec["offset"],
            text=rec["text"], tags=tuple(rec["tags"]),
        )
        entries.append((chunk, np.asarray(rec["vector"], dtype=np.float32)))
    return KnowledgeBase(
        kb_id=manifest["kb_id"],
        embedder_id=manifest["embedder_id"],
        dim=manifest["dim"],
        entries=entries,
        created_at=manifest["created_at"],
    )
