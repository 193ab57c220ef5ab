"""The two retrieval arms and the embedder-matrix evaluation run.

Each (segment, embedder) cell retrieves once with raw discourse (baseline)
and once with the log-contextualized summary. Cells append to a results log
as they finish, so an interrupted matrix run resumes without recomputing or
duplicating completed cells.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import embed, kb as kb_mod
from .errors import InvalidInput, MissingInput
from .kb import KnowledgeBase, RetrievalResult
from .seglog import Segment
from .summarize import Summary


@dataclass(frozen=True)
class RetrievalPair:
    segment_id: str
    embedder_id: str
    baseline: RetrievalResult
    lcrag: RetrievalResult
    baseline_query_text: str
    lcrag_query_text: str


def retrieve_baseline(segment: Segment, kb: KnowledgeBase,
                      embedder: embed.EmbedderSpec) -> RetrievalResult:
    """Top-1 retrieval with the raw segment discourse as the query."""
    discourse = segment.discourse_text
    if not discourse.strip():
        raise InvalidInput(f"segment {segment.id} has empty discourse")
    if kb.embedder_id != embedder.embedder_id:
        raise InvalidInput(
            f"kb was embedded with {kb.embedder_id}, not {embedder.embedder_id}")
    query = embed.embed_text(embedder, discourse)
    return kb_mod.search(kb, query, k=1)[0]


def retrieve_lcrag(summary: Summary, kb: KnowledgeBase,
                   embedder: embed.EmbedderSpec) -> RetrievalResult:
    """Top-1 retrieval with the context-fused summary as the query."""
    if not summary.text.strip():
        raise InvalidInput(f"summary for {summary.segment_id} is empty")
    if kb.embedder_id != embedder.embedder_id:
        raise InvalidInput(
            f"kb was embedded with {kb.embedder_id}, not {embedder.embedder_id}")
    query = embed.embed_text(embedder, summary.text)
    return kb_mod.search(kb, query, k=1)[0]


def pair_to_record(pair: RetrievalPair) -> dict:
    return {
        "segment_id": pair.segment_id,
        "embedder_id": pair.embedder_id,
        "baseline": {"chunk_id": pair.baseline.chunk_id, "score": pair.baseline.score},
        "lcrag": {"chunk_id": pair.lcrag.chunk_id, "score": pair.lcrag.score},
        "baseline_query_text": pair.baseline_query_text,
        "lcrag_query_text": pair.lcrag_query_text,
    }


def pair_from_record(rec: dict) -> RetrievalPair:
    return RetrievalPair(
        segment_id=rec["segment_id"],
        embedder_id=rec["embedder_id"],
        baseline=RetrievalResult(rec["baseline"]["chunk_id"], rec["baseline"]["score"]),
        lcrag=RetrievalResult(rec["lcrag"]["chunk_id"], rec["lcrag"]["score"]),
        baseline_query_text=rec["baseline_query_text"],
        lcrag_query_text=rec["lcrag_query_text"],
    )


def load_pairs(path: str | Path) -> list[RetrievalPair]:
    path = Path(path)
    if not path.exists():
        return []
    pairs = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            pairs.append(pair_from_record(json.loads(line)))
    return pairs


def run_matrix(segments: list[Segment], embedder_specs: list[embed.EmbedderSpec],
               kb_per_embedder: dict[str, KnowledgeBase],
               summaries: dict[str, Summary],
               out_path: str | Path | None = None,
               on_cell=None) -> list[RetrievalPair]:
    """Run both retrieval arms for every (embedder, segment) cell.

    With an out_path, finished cells are appended immediately and already
    recorded cells are skipped on rerun, making the run crash-resumable.
    `on_cell(pair)` fires only for freshly computed cells.
    """
    for seg in segments:
        if seg.id not in summaries:
            raise MissingInput(f"no summary for segment {seg.id}")
    for spec in embedder_specs:
        if spec.embedder_id not in kb_per_embedder:
            raise MissingInput(f"no knowledge base for embedder {spec.embedder_id}")

    done: dict[tuple[str, str], RetrievalPair] = {}
    out_file = None
    if out_path is not None:
        for pair in load_pairs(out_path):
            done[(pair.segment_id, pair.embedder_id)] = pair
        out_file = open(out_path, "a", encoding="utf-8")

    pairs: list[RetrievalPair] = []
    try:
        for spec in embedder_specs:
            kb = kb_per_embedder[spec.embedder_id]
            for seg in segments:
                key = (seg.id, spec.embedder_id)
                if key in done:
                    pairs.append(done[key])
                    continue
                summary = summaries[seg.id]
                pair = RetrievalPair(
                    segment_id=seg.id,
                    embedder_id=spec.embedder_id,
                    baseline=retrieve_baseline(seg, kb, spec),
                    lcrag=retrieve_lcrag(summary, kb, spec),
                    baseline_query_text=seg.discourse_text,
                    lcrag_query_text=summary.text,
                )
                if out_file is not None:
                    out_file.write(json.dumps(pair_to_record(pair), ensure_ascii=False) + "\n")
                    out_file.flush()
                pairs.append(pair)
                if on_cell is not None:
                    on_cell(pair)
    finally:
        if out_file is not None:
            out_file.close()
    return pairs


def unique_chunk_report(pairs: list[RetrievalPair]) -> dict[str, int]:
    """Distinct retrieved chunk counts per arm (retrieval precision proxy)."""
    if not pairs:
        raise InvalidInput("unique_chunk_report requires at least one pair")
    return {
        "lcrag_unique": len({p.lcrag.chunk_id for p in pairs}),
        "baseline_unique": len({p.baseline.chunk_id for p in pairs}),
    }
