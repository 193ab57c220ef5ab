"""Environment-log parsing, task-context classification, and segmentation.

Actions from the block-programming environment carry their ancestor chain in
the program tree; the chain is what determines the task context. Segments are
maximal runs of same-context actions, with transcript utterances attached by
time interval.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import EmptySegmentation, FormatError, InvalidInput, IoError

HAT_GREEN_FLAG = "when_green_flag_clicked"
HAT_SIMULATION_STEP = "simulation_step"
HAT_BLOCKS = {HAT_GREEN_FLAG, HAT_SIMULATION_STEP}

CONDITIONAL_BLOCKS = {"if", "if_else"}
# Reporter blocks that can only sit in a condition slot.
CONDITION_SLOT_BLOCKS = {
    "equals", "not_equals", "greater_than", "greater_or_equal",
    "less_than", "less_or_equal", "and", "or", "not",
}

VERBS = {"create", "move", "change_value", "delete", "run"}

_MAX_MODEL_DEPTH = 100


class TaskContext(str, Enum):
    INITIALIZING_VARIABLES = "InitializingVariables"
    UPDATING_VARIABLES_EACH_STEP = "UpdatingVariablesEachStep"
    CONDITIONAL_STATEMENTS = "ConditionalStatements"
    UPDATING_VARIABLES_UNDER_CONDITIONS = "UpdatingVariablesUnderConditions"
    UNCLASSIFIED = "Unclassified"

    @property
    def label(self) -> str:
        return {
            TaskContext.INITIALIZING_VARIABLES: "Initializing Variables",
            TaskContext.UPDATING_VARIABLES_EACH_STEP:
                "Updating Variables, Each Simulation Step",
            TaskContext.CONDITIONAL_STATEMENTS: "Conditional Statements",
            TaskContext.UPDATING_VARIABLES_UNDER_CONDITIONS:
                "Updating Variables, Under Conditions",
            TaskContext.UNCLASSIFIED: "Unclassified",
        }[self]


@dataclass(frozen=True)
class LogAction:
    ts: int
    user: str
    verb: str
    block_type: str
    block_id: str
    ancestor_chain: tuple[str, ...] = ()  # immediate parent first, hat block last


@dataclass(frozen=True)
class Utterance:
    ts: int
    speaker: str
    text: str


@dataclass
class Segment:
    id: str
    context: TaskContext
    t_start: int
    t_end: int
    actions: list[LogAction]
    utterances: list[Utterance]

    @property
    def discourse_text(self) -> str:
        return "\n".join(f"{u.speaker}: {u.text}" for u in self.utterances)


@dataclass
class LogParseResult:
    actions: list[LogAction]
    warnings: list[str]


def _parse_action_record(rec: dict) -> LogAction:
    ts = rec["ts"]
    if not isinstance(ts, int):
        raise ValueError("ts must be an integer (ms epoch)")
    verb = rec["verb"]
    if verb not in VERBS:
        raise ValueError(f"unknown verb {verb!r}")
    return LogAction(
        ts=ts,
        user=rec.get("user", ""),
        verb=verb,
        block_type=rec.get("block_type", ""),
        block_id=rec.get("block_id", ""),
        ancestor_chain=tuple(rec.get("ancestor_chain", [])),
    )


def parse_log(path: str | Path) -> LogParseResult:
    """Parse a line-delimited action log, sorted by ts.

    Malformed lines become warnings rather than being silently dropped; more
    than 10% malformed lines fails the whole file.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read action log {path}: {exc}")
    actions, warnings = [], []
    considered = 0
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        considered += 1
        try:
            actions.append(_parse_action_record(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            warnings.append(f"line {i + 1}: {exc}")
    if considered and len(warnings) > 0.10 * considered:
        raise FormatError(
            f"{path}: {len(warnings)} of {considered} lines malformed (>10%)")
    actions.sort(key=lambda a: a.ts)
    return LogParseResult(actions=actions, warnings=warnings)


def parse_transcript(path: str | Path) -> list[Utterance]:
    """Parse a line-delimited transcript {ts, speaker, text}, sorted by ts."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read transcript {path}: {exc}")
    utterances = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            text = rec["text"].strip()
            if not text:
                raise ValueError("empty text")
            utterances.append(Utterance(ts=int(rec["ts"]), speaker=rec["speaker"], text=text))
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"{path}: bad utterance on line {i + 1}: {exc}")
    utterances.sort(key=lambda u: u.ts)
    return utterances


def classify_action(action: LogAction) -> TaskContext:
    """Deterministic rule cascade from block type and ancestor chain."""
    if action.block_type in CONDITIONAL_BLOCKS or action.block_type in CONDITION_SLOT_BLOCKS:
        return TaskContext.CONDITIONAL_STATEMENTS
    if any(a in CONDITIONAL_BLOCKS for a in action.ancestor_chain):
        return TaskContext.UPDATING_VARIABLES_UNDER_CONDITIONS
    root = action.ancestor_chain[-1] if action.ancestor_chain else None
    if root == HAT_GREEN_FLAG:
        return TaskContext.INITIALIZING_VARIABLES
    if root == HAT_SIMULATION_STEP:
        return TaskContext.UPDATING_VARIABLES_EACH_STEP
    return TaskContext.UNCLASSIFIED


def segment(actions: list[LogAction], utterances: list[Utterance]) -> list[Segment]:
    """Segment the fused stream into maximal same-context runs.

    Unclassified actions neither close a run nor join one. Each utterance
    attaches to the run whose [run start, next run start) interval contains
    its timestamp; utterances before the first run attach to the first
    segment.
    """
    classified = [(a, classify_action(a)) for a in actions]
    classified = [(a, c) for a, c in classified if c is not TaskContext.UNCLASSIFIED]
    if not classified:
        raise EmptySegmentation("no classifiable actions in the stream")

    runs: list[tuple[TaskContext, list[LogAction]]] = []
    for action, ctx in classified:
        if runs and runs[-1][0] is ctx:
            runs[-1][1].append(action)
        else:
            runs.append((ctx, [action]))

    starts = [run[1][0].ts for run in runs]
    bounds = starts[1:] + [math.inf]
    assigned: list[list[Utterance]] = [[] for _ in runs]
    for u in utterances:
        if u.ts < starts[0]:
            assigned[0].append(u)
            continue
        for i, (lo, hi) in enumerate(zip(starts, bounds)):
            if lo <= u.ts < hi:
                assigned[i].append(u)
                break

    segments = []
    for i, ((ctx, acts), utts) in enumerate(zip(runs, assigned)):
        member_ts = [a.ts for a in acts] + [u.ts for u in utts]
        segments.append(Segment(
            id=f"seg-{i + 1:04d}",
            context=ctx,
            t_start=min(member_ts),
            t_end=max(member_ts),
            actions=acts,
            utterances=utts,
        ))
    return segments


def segment_stats(segments: list[Segment]) -> dict[str, dict]:
    """Per-context segment counts and mean discourse length in characters."""
    if not segments:
        raise InvalidInput("segment_stats requires at least one segment")
    stats: dict[str, dict] = {}
    for ctx in TaskContext:
        lengths = [len(s.discourse_text) for s in segments if s.context is ctx]
        if lengths:
            stats[ctx.value] = {
                "count": len(lengths),
                "mean_discourse_chars": sum(lengths) / len(lengths),
            }
    return stats


def segment_to_record(seg: Segment) -> dict:
    return {
        "id": seg.id,
        "context": seg.context.value,
        "t_start": seg.t_start,
        "t_end": seg.t_end,
        "actions": [{
            "ts": a.ts, "user": a.user, "verb": a.verb,
            "block_type": a.block_type, "block_id": a.block_id,
            "ancestor_chain": list(a.ancestor_chain),
        } for a in seg.actions],
        "utterances": [
            {"ts": u.ts, "speaker": u.speaker, "text": u.text} for u in seg.utterances
        ],
        "discourse_text": seg.discourse_text,
    }


def segment_from_record(rec: dict) -> Segment:
    return Segment(
        id=rec["id"],
        context=TaskContext(rec["context"]),
        t_start=rec["t_start"],
        t_end=rec["t_end"],
        actions=[_parse_action_record(a) for a in rec["actions"]],
        utterances=[
            Utterance(ts=u["ts"], speaker=u["speaker"], text=u["text"])
            for u in rec["utterances"]
        ],
    )


def save_segments(segments: list[Segment], path: str | Path) -> None:
    lines = [json.dumps(segment_to_record(s), ensure_ascii=False) for s in segments]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_segments(path: str | Path) -> list[Segment]:
    segments = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            segments.append(segment_from_record(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise FormatError(f"{path}: bad segment record on line {i + 1}: {exc}")
    return segments


# ---------------------------------------------------------------------------
# Block-program model representation


@dataclass
class Node:
    block_type: str
    params: dict = field(default_factory=dict)
    children: list["Node"] = field(default_factory=list)


@dataclass
class Script:
    hat: str
    body: list[Node] = field(default_factory=list)


@dataclass
class ModelAST:
    scripts: list[Script] = field(default_factory=list)


def _node_from_record(rec: dict, depth: int) -> Node:
    if depth > _MAX_MODEL_DEPTH:
        raise FormatError("model tree exceeds maximum depth (cyclic reference?)")
    if not isinstance(rec, dict) or "block_type" not in rec:
        raise FormatError(f"bad model node record: {rec!r}")
    params = rec.get("params", {})
    for key, value in params.items():
        if isinstance(value, float) and not math.isfinite(value):
            raise FormatError(f"non-finite param {key!r} on {rec['block_type']}")
    return Node(
        block_type=rec["block_type"],
        params=dict(params),
        children=[_node_from_record(ch, depth + 1) for ch in rec.get("children", [])],
    )


def _reject_nonfinite(_):
    raise FormatError("model file contains a non-finite number")


def model_from_json(text: str) -> ModelAST:
    """Parse raw model JSON into a canonical AST."""
    try:
        doc = json.loads(text, parse_constant=_reject_nonfinite)
    except json.JSONDecodeError as exc:
        raise FormatError(f"model is not valid JSON: {exc}")
    if not isinstance(doc, dict) or not isinstance(doc.get("scripts", []), list):
        raise FormatError("model must be an object with a 'scripts' list")
    scripts = []
    for s in doc.get("scripts", []):
        if not isinstance(s, dict) or "hat" not in s:
            raise FormatError(f"script record missing 'hat': {s!r}")
        scripts.append(Script(
            hat=s["hat"],
            body=[_node_from_record(n, 1) for n in s.get("body", [])],
        ))
    return ModelAST(scripts=scripts)


def parse_model(path: str | Path) -> ModelAST:
    """Parse a model file into a canonical AST."""
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read model file {path}: {exc}")
    return model_from_json(raw)


def _node_to_record(node: Node, seen: set[int]) -> dict:
    if id(node) in seen:
        raise FormatError(f"cyclic reference at node {node.block_type!r}")
    seen.add(id(node))
    rec: dict = {"block_type": node.block_type}
    if node.params:
        rec["params"] = dict(node.params)
    if node.children:
        rec["children"] = [_node_to_record(ch, seen) for ch in node.children]
    seen.discard(id(node))
    return rec


def serialize_model(ast: ModelAST) -> str:
    """Canonical JSON for a model AST; parse(serialize(x)) == x."""
    seen: set[int] = set()
    doc = {"scripts": [
        {"hat": s.hat, "body": [_node_to_record(n, seen) for n in s.body]}
        for s in ast.scripts
    ]}
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False)


def model_outline(ast: ModelAST) -> str:
    """Indented text rendering of a model, for inclusion in prompts."""
    lines = []

    def walk(node: Node, depth: int):
        params = " ".join(f"{k}={v}" for k, v in sorted(node.params.items()))
        lines.append("  " * depth + node.block_type + (f" [{params}]" if params else ""))
        for ch in node.children:
            walk(ch, depth + 1)

    for script in ast.scripts:
        lines.append(f"{script.hat}:")
        for node in script.body:
            walk(node, 1)
    return "\n".join(lines) if lines else "(empty model)"


def actions_from_model(ast: ModelAST, user: str = "model") -> list[LogAction]:
    """Flatten a model into create-actions with ancestor chains, for classification."""
    actions: list[LogAction] = []

    def walk(node: Node, chain: tuple[str, ...]):
        actions.append(LogAction(
            ts=len(actions),
            user=user,
            verb="create",
            block_type=node.block_type,
            block_id=f"b{len(actions):04d}",
            ancestor_chain=chain,
        ))
        for ch in node.children:
            walk(ch, (node.block_type,) + chain)

    for script in ast.scripts:
        for node in script.body:
            walk(node, (script.hat,))
    return actions
