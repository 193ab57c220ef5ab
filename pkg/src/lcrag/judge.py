"""Pairwise LLM-as-a-Judge evaluation with majority voting and QWK agreement.

Three prompt templates vote on every retrieval pair; chunk order is
randomized per (trial, template) from a recorded seed, and the raw A/B/TIE
verdict is mapped back through that assignment before aggregation. Win rates
are reported per embedding model and broken down by task context.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import embed
from ._data import data_ref
from .errors import (
    DegenerateAgreement,
    InvalidInput,
    MissingInput,
    ProviderError,
    TemplateError,
    TrialError,
    VerdictParseError,
)
from .retrieve import RetrievalPair
from .seglog import TaskContext
from .summarize import LlmSpec, complete, get_llm_provider, render_prompt
from .summarize import TASK_DESCRIPTION

logger = logging.getLogger(__name__)

VERDICT_PROTOCOL = "final line VERDICT: A|B|TIE"
REQUIRED_PLACEHOLDERS = ("task", "discourse", "chunk_a", "chunk_b")

_VERDICT_RE = re.compile(r"^\s*VERDICT\s*:\s*(A|B|TIE)\b", re.IGNORECASE)

BUNDLED_TEMPLATE_IDS = ("judge_relevance_v1", "judge_accuracy_v1", "judge_helpfulness_v1")


@dataclass(frozen=True)
class JudgeTemplate:
    template_id: str
    text: str
    verdict_protocol: str = VERDICT_PROTOCOL

    def __post_init__(self):
        for name in REQUIRED_PLACEHOLDERS:
            if f"{{{name}}}" not in self.text:
                raise TemplateError(
                    f"judge template {self.template_id!r} lacks {{{name}}}")


def load_judge_templates(template_dir: str | Path | None = None) -> list[JudgeTemplate]:
    """Load the three judge templates (bundled set by default)."""
    if template_dir is None:
        return [
            JudgeTemplate(
                tid, data_ref("templates", f"{tid}.txt").read_text(encoding="utf-8"))
            for tid in BUNDLED_TEMPLATE_IDS
        ]
    paths = sorted(Path(template_dir).glob("*.txt"))
    return [JudgeTemplate(p.stem, p.read_text(encoding="utf-8")) for p in paths]


def render_judge_prompt(template: JudgeTemplate, task_desc: str, discourse: str,
                        chunk_a_text: str, chunk_b_text: str) -> str:
    return render_prompt(
        template.text, task=task_desc, discourse=discourse,
        chunk_a=chunk_a_text, chunk_b=chunk_b_text)


def parse_verdict(response: str) -> str:
    """Find the verdict by scanning lines from the end; case-insensitive."""
    if not response.strip():
        raise VerdictParseError("empty judge response")
    for line in reversed(response.splitlines()):
        m = _VERDICT_RE.match(line)
        if m:
            return m.group(1).upper()
    raise VerdictParseError(f"no VERDICT line in response: {response[-120:]!r}")


@dataclass
class TemplateVote:
    template_id: str
    assignment: str  # which arm was presented as chunk A: "lcrag" | "baseline"
    raw_verdict: str  # A | B | TIE
    mapped: str  # win | loss | tie (from LC-RAG's perspective)
    rationale_text: str
    anomalous: bool = False


@dataclass
class TrialOutcome:
    segment_id: str
    embedder_id: str
    per_template: list[TemplateVote]
    majority: str  # win | loss | tie
    context: TaskContext
    seed: int


def majority_outcome(mapped_votes: list[str]) -> str:
    """Strict majority of mapped votes; anything else resolves to tie."""
    for outcome in ("win", "loss"):
        if mapped_votes.count(outcome) >= 2:
            return outcome
    if mapped_votes.count("tie") >= 2:
        return "tie"
    return "tie"


def _assignment_rng(seed: int, segment_id: str, embedder_id: str,
                    template_id: str) -> random.Random:
    # Per-trial derivation keeps cells order-independent and replayable.
    material = f"{seed}|{segment_id}|{embedder_id}|{template_id}".encode()
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "little"))


def _map_verdict(raw: str, lcrag_is_a: bool) -> str:
    if raw == "TIE":
        return "tie"
    preferred_lcrag = (raw == "A") == lcrag_is_a
    return "win" if preferred_lcrag else "loss"


def judge_pair(pair: RetrievalPair, templates: list[JudgeTemplate], spec: LlmSpec,
               seed: int, chunk_texts: dict[str, str],
               context: TaskContext = TaskContext.UNCLASSIFIED,
               task_desc: str = TASK_DESCRIPTION,
               provider=None) -> TrialOutcome:
    """Judge one retrieval pair under all three templates and vote."""
    if len(templates) != 3:
        raise InvalidInput(f"judge_pair requires exactly 3 templates, got {len(templates)}")
    for result in (pair.baseline, pair.lcrag):
        if result.chunk_id not in chunk_texts:
            raise MissingInput(f"no chunk text for {result.chunk_id}")
    provider = provider or get_llm_provider(spec)

    votes: list[TemplateVote] = []
    for template in templates:
        rng = _assignment_rng(seed, pair.segment_id, pair.embedder_id,
                              template.template_id)
        lcrag_is_a = rng.random() < 0.5
        a_id, b_id = ((pair.lcrag.chunk_id, pair.baseline.chunk_id) if lcrag_is_a
                      else (pair.baseline.chunk_id, pair.lcrag.chunk_id))
        prompt = render_judge_prompt(
            template, task_desc, pair.baseline_query_text,
            chunk_texts[a_id], chunk_texts[b_id])

        raw, rationale, anomalous = "TIE", "", False
        try:
            for attempt in range(2):
                try:
                    rationale = complete(spec, system="", messages=[("user", prompt)],
                                         provider=provider)
                    raw = parse_verdict(rationale)
                    break
                except VerdictParseError:
                    if attempt == 1:
                        # Keep n intact: an unparseable trial records as a
                        # flagged tie instead of being dropped.
                        raw, anomalous = "TIE", True
        except ProviderError as exc:
            raise TrialError(
                f"provider failed judging {pair.segment_id}/{pair.embedder_id}: {exc}")

        votes.append(TemplateVote(
            template_id=template.template_id,
            assignment="lcrag" if lcrag_is_a else "baseline",
            raw_verdict=raw,
            mapped=_map_verdict(raw, lcrag_is_a),
            rationale_text=rationale,
            anomalous=anomalous,
        ))

    return TrialOutcome(
        segment_id=pair.segment_id,
        embedder_id=pair.embedder_id,
        per_template=votes,
        majority=majority_outcome([v.mapped for v in votes]),
        context=context,
        seed=seed,
    )


def outcome_to_record(outcome: TrialOutcome) -> dict:
    return {
        "segment_id": outcome.segment_id,
        "embedder_id": outcome.embedder_id,
        "per_template": [vars(v) for v in outcome.per_template],
        "majority": outcome.majority,
        "context": outcome.context.value,
        "seed": outcome.seed,
    }


def outcome_from_record(rec: dict) -> TrialOutcome:
    return TrialOutcome(
        segment_id=rec["segment_id"],
        embedder_id=rec["embedder_id"],
        per_template=[TemplateVote(**v) for v in rec["per_template"]],
        majority=rec["majority"],
        context=TaskContext(rec["context"]),
        seed=rec["seed"],
    )


def save_outcomes(outcomes: list[TrialOutcome], path: str | Path) -> None:
    lines = [json.dumps(outcome_to_record(o), ensure_ascii=False) for o in outcomes]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_outcomes(path: str | Path) -> list[TrialOutcome]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(outcome_from_record(json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# Aggregation


@dataclass
class EmbedderRates:
    embedder_id: str
    n: int
    win_rate: float
    loss_rate: float
    tie_rate: float


@dataclass
class WinRateReport:
    rows: list[EmbedderRates]
    per_context: dict[str, dict[str, float]] = field(default_factory=dict)


def _group_by_embedder(outcomes: list[TrialOutcome]) -> dict[str, list[TrialOutcome]]:
    groups: dict[str, list[TrialOutcome]] = {}
    for o in outcomes:
        groups.setdefault(o.embedder_id, []).append(o)
    return groups


def win_rates(outcomes: list[TrialOutcome], n_segments: int) -> WinRateReport:
    """Win/loss/tie rates per embedder (counts / n_segments; sums to 1)."""
    if n_segments < 1:
        raise InvalidInput("n_segments must be >= 1")
    groups = _group_by_embedder(outcomes)
    if not groups:
        raise InvalidInput("no outcomes to aggregate")
    rows = []
    for embedder_id in sorted(groups):
        group = groups[embedder_id]
        if len(group) != n_segments:
            raise InvalidInput(
                f"embedder {embedder_id} has {len(group)} outcomes, expected {n_segments}")
        counts = {"win": 0, "loss": 0, "tie": 0}
        for o in group:
            counts[o.majority] += 1
        rows.append(EmbedderRates(
            embedder_id=embedder_id,
            n=n_segments,
            win_rate=counts["win"] / n_segments,
            loss_rate=counts["loss"] / n_segments,
            tie_rate=counts["tie"] / n_segments,
        ))
    return WinRateReport(rows=rows, per_context=context_breakdown(outcomes))


def context_breakdown(outcomes: list[TrialOutcome]) -> dict[str, dict[str, float]]:
    """Per-context LC-RAG vs baseline win shares, averaged across embedders.

    Per embedder and context, the LC-RAG share is its wins over the context's
    trials and the baseline share is LC-RAG's losses; shares are then averaged
    arithmetically over the embedders that saw that context. "Overall" pools
    every context.
    """
    groups = _group_by_embedder(outcomes)
    if not groups:
        raise InvalidInput("no outcomes to aggregate")
    contexts = [ctx for ctx in TaskContext if ctx is not TaskContext.UNCLASSIFIED]
    breakdown: dict[str, dict[str, float]] = {}
    for ctx in list(contexts) + ["Overall"]:
        lcrag_shares, baseline_shares = [], []
        for group in groups.values():
            trials = group if ctx == "Overall" else [o for o in group if o.context is ctx]
            if not trials:
                continue
            lcrag_shares.append(
                sum(1 for o in trials if o.majority == "win") / len(trials))
            baseline_shares.append(
                sum(1 for o in trials if o.majority == "loss") / len(trials))
        label = ctx if ctx == "Overall" else ctx.label
        if not lcrag_shares:
            logger.warning("context %s has zero trials; omitted from breakdown", label)
            continue
        breakdown[label] = {
            "lcrag": sum(lcrag_shares) / len(lcrag_shares),
            "baseline": sum(baseline_shares) / len(baseline_shares),
        }
    return breakdown


def _embedder_display(embedder_id: str) -> tuple[str, str]:
    try:
        spec = embed.get_spec(embedder_id)
        return (spec.display_name or spec.embedder_id, str(spec.dim))
    except InvalidInput:
        return (embedder_id, "?")


def render_report(report: WinRateReport) -> str:
    """Aligned text table: Model, Emb. Size, Loss, Tie, Win; then contexts."""
    rows = [("Model", "Emb. Size", "Loss Rate", "Tie Rate", "Win Rate")]
    for r in report.rows:
        name, dim = _embedder_display(r.embedder_id)
        rows.append((name, dim, f"{r.loss_rate:.3f}", f"{r.tie_rate:.3f}",
                     f"{r.win_rate:.3f}"))
    widths = [max(len(row[i]) for row in rows) for i in range(5)]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
             for row in rows]
    if report.per_context:
        lines.append("")
        lines.append("Win rates by task context (averaged over embedders):")
        for label, shares in report.per_context.items():
            lines.append(
                f"  {label}: LC-RAG {shares['lcrag']:.1%} vs baseline "
                f"{shares['baseline']:.1%}")
    return "\n".join(lines)


def report_to_record(report: WinRateReport) -> dict:
    return {
        "rows": [vars(r) for r in report.rows],
        "per_context": report.per_context,
    }


# ---------------------------------------------------------------------------
# Agreement


def qwk(r1: list[int], r2: list[int], k: int) -> float:
    """Cohen's quadratic weighted kappa over ordinal ratings in [0, k)."""
    r1, r2 = list(r1), list(r2)
    if len(r1) != len(r2) or len(r1) < 2:
        raise InvalidInput("qwk needs two equal-length rating lists (>= 2 items)")
    if k < 2:
        raise InvalidInput("qwk needs at least 2 categories")
    for r in (*r1, *r2):
        if not isinstance(r, (int, np.integer)) or not 0 <= r < k:
            raise InvalidInput(f"rating {r!r} outside [0, {k})")
    n = len(r1)
    observed = np.zeros((k, k), dtype=np.float64)
    for a, b in zip(r1, r2):
        observed[a, b] += 1.0
    idx = np.arange(k, dtype=np.float64)
    weights = (idx[:, None] - idx[None, :]) ** 2 / (k - 1) ** 2
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / n
    denom = float((weights * expected).sum())
    if denom == 0.0:
        if r1 == r2:
            return 1.0
        raise DegenerateAgreement("marginals admit zero expected disagreement")
    return 1.0 - float((weights * observed).sum()) / denom


# ---------------------------------------------------------------------------
# Human-validation sampling


def sample_for_validation(pairs: list[RetrievalPair], n: int,
                          seed: int) -> list[RetrievalPair]:
    """Uniform sample without replacement over the pooled pairs; seeded."""
    if n > len(pairs):
        raise InvalidInput(f"cannot sample {n} of {len(pairs)} pairs")
    return random.Random(seed).sample(pairs, n)


def write_validation_sheet(sample: list[RetrievalPair], path: str | Path,
                           chunk_texts: dict[str, str] | None = None) -> None:
    """CSV scoring sheet with a blank human_score column (loss=0 tie=1 win=2)."""
    chunk_texts = chunk_texts or {}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "segment_id", "embedder_id", "discourse", "lcrag_summary",
            "baseline_chunk_id", "baseline_chunk_text",
            "lcrag_chunk_id", "lcrag_chunk_text", "human_score",
        ])
        for p in sample:
            writer.writerow([
                p.segment_id, p.embedder_id, p.baseline_query_text,
                p.lcrag_query_text,
                p.baseline.chunk_id, chunk_texts.get(p.baseline.chunk_id, ""),
                p.lcrag.chunk_id, chunk_texts.get(p.lcrag.chunk_id, ""),
                "",
            ])
