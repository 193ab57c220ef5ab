"""Chat-LLM providers and the two summarization strategies.

The scripted provider is a first-class provider: it answers from a table of
matcher rules over the last user message, which makes every pipeline in this
package runnable hermetically. Summarization fuses a segment's discourse with
its task context; the agentic path instead diagnoses the student's problem
against an expert model diff and recommends what knowledge to retrieve.
"""

from __future__ import annotations

import json
import os
import re
import string
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from ._data import data_ref

from .errors import (
    EmptyResponse,
    InvalidInput,
    ParseError,
    ProviderError,
    TemplateError,
)
from .seglog import ModelAST, Node, Script, Segment, model_outline

FALLBACK_RESPONSE = (
    "I'm not sure yet. Could you say more about the part of the model you are "
    "working on?"
)

# Default task framing injected into {task} placeholders.
TASK_DESCRIPTION = (
    "The students are building a one-dimensional computational model of a "
    "truck that accelerates from rest, cruises at a constant speed, and then "
    "decelerates to stop at a stop sign. They work in a block-based modeling "
    "environment with an initialization script and a per-step simulation "
    "script, combining physics (kinematics) and computing concepts."
)

_SECTION_RE = re.compile(
    r"^\s*(PROBLEM|DIAGNOSIS|RECOMMEND)\s*:\s*(.*)$", re.IGNORECASE)


@dataclass(frozen=True)
class LlmSpec:
    """Identity and transport for a chat model ("scripted" runs locally)."""

    model_id: str
    endpoint: str = "scripted"
    temperature: float = 0.0
    max_tokens: int = 1024
    credentials_env: str = ""
    script_path: str = ""

    def __post_init__(self):
        if not (self.temperature >= 0 and self.temperature == self.temperature):
            raise InvalidInput("temperature must be finite and >= 0")
        if self.endpoint == "scripted" and not self.script_path:
            raise InvalidInput("a scripted LlmSpec requires script_path")


def load_llm_spec(path: str | Path) -> LlmSpec:
    rec = json.loads(Path(path).read_text(encoding="utf-8"))
    spec = LlmSpec(
        model_id=rec["model_id"],
        endpoint=rec.get("endpoint", "scripted"),
        temperature=rec.get("temperature", 0.0),
        max_tokens=rec.get("max_tokens", 1024),
        credentials_env=rec.get("credentials_env", ""),
        script_path=rec.get("script_path", ""),
    )
    if spec.endpoint == "scripted" and not os.path.isabs(spec.script_path):
        # script paths in spec files resolve relative to the spec file
        spec = LlmSpec(
            model_id=spec.model_id, endpoint=spec.endpoint,
            temperature=spec.temperature, max_tokens=spec.max_tokens,
            credentials_env=spec.credentials_env,
            script_path=str((Path(path).parent / spec.script_path).resolve()),
        )
    return spec


@dataclass
class Summary:
    segment_id: str
    text: str
    prompt_id: str
    model_id: str


class ScriptedLlm:
    """Deterministic provider: canned responses keyed by matchers.

    Script file: JSON list of {"matcher": {"kind": "keyword"|"exact"|"any",
    "value": ...}, "response": ...}. The first rule matching the last user
    message wins; with no match, a fixed fallback is returned.
    """

    def __init__(self, spec: LlmSpec):
        self.spec = spec
        path = Path(spec.script_path)
        if not path.exists():
            raise InvalidInput(f"scripted provider script {path} does not exist")
        self.rules = json.loads(path.read_text(encoding="utf-8"))
        for rule in self.rules:
            if "matcher" not in rule or "response" not in rule:
                raise InvalidInput(f"bad script rule: {rule!r}")

    def complete(self, system: str, messages: list[tuple[str, str]]) -> str:
        last_user = next(
            (text for role, text in reversed(messages) if role == "user"), "")
        for rule in self.rules:
            kind = rule["matcher"].get("kind", "keyword")
            value = rule["matcher"].get("value", "")
            if kind == "keyword" and value.lower() in last_user.lower():
                return rule["response"]
            if kind == "exact" and last_user.strip() == value:
                return rule["response"]
            if kind == "any":
                return rule["response"]
        return FALLBACK_RESPONSE


class RemoteLlm:
    """OpenAI-style chat-completions adapter with bounded retries."""

    def __init__(self, spec: LlmSpec, retry_base_delay: float = 0.5):
        self.spec = spec
        self._retry_base_delay = retry_base_delay
        self._gate = threading.Semaphore(4)

    def complete(self, system: str, messages: list[tuple[str, str]]) -> str:
        import requests

        key = os.environ.get(self.spec.credentials_env, "")
        if not key:
            raise ProviderError(
                f"auth: credential env {self.spec.credentials_env} is not set",
                retryable=False)
        body = {
            "model": self.spec.model_id,
            "temperature": self.spec.temperature,
            "max_tokens": self.spec.max_tokens,
            "messages": ([{"role": "system", "content": system}] if system else [])
            + [{"role": role, "content": text} for role, text in messages],
        }
        last_exc = ProviderError("no attempts made", retryable=True)
        for attempt in range(3):
            try:
                with self._gate:
                    resp = requests.post(
                        self.spec.endpoint, json=body, timeout=120,
                        headers={"Authorization": f"Bearer {key}"})
            except requests.RequestException as exc:
                last_exc = ProviderError(f"transport failure: {exc}", retryable=True)
            else:
                if resp.status_code in (429, 500, 502, 503, 504):
                    last_exc = ProviderError(
                        f"provider returned {resp.status_code}", retryable=True)
                elif resp.status_code >= 400:
                    raise ProviderError(
                        f"provider rejected request ({resp.status_code})",
                        retryable=False)
                else:
                    payload = resp.json()
                    return payload["choices"][0]["message"]["content"]
            if attempt < 2:
                time.sleep(self._retry_base_delay * (2 ** attempt))
        raise last_exc


def get_llm_provider(spec: LlmSpec):
    if spec.endpoint == "scripted":
        return ScriptedLlm(spec)
    return RemoteLlm(spec)


def complete(spec: LlmSpec, system: str, messages: list[tuple[str, str]],
             provider=None) -> str:
    """Run one chat completion; the response is always non-empty text."""
    provider = provider or get_llm_provider(spec)
    text = provider.complete(system, messages)
    if not text or not text.strip():
        raise EmptyResponse(f"model {spec.model_id} returned an empty completion")
    return text


# ---------------------------------------------------------------------------
# Prompt templates


def load_template(template_id: str, template_dir: str | Path | None = None) -> str:
    """Load a prompt template by id from a directory or the bundled set."""
    if template_dir is not None:
        path = Path(template_dir) / f"{template_id}.txt"
        if not path.exists():
            raise TemplateError(f"no template {template_id!r} in {template_dir}")
        return path.read_text(encoding="utf-8")
    ref = data_ref("templates", f"{template_id}.txt")
    if not ref.is_file():
        raise TemplateError(f"no bundled template {template_id!r}")
    return ref.read_text(encoding="utf-8")


def template_placeholders(template_text: str) -> set[str]:
    return {
        name for _, name, _, _ in string.Formatter().parse(template_text)
        if name
    }


def render_prompt(template_text: str, **values: str) -> str:
    """Deterministic placeholder substitution; empty values are template errors."""
    needed = template_placeholders(template_text)
    for name in needed:
        if name not in values:
            raise TemplateError(f"missing value for placeholder {{{name}}}")
        if not str(values[name]).strip():
            raise TemplateError(f"empty value for placeholder {{{name}}}")
    try:
        return template_text.format(**{k: str(v) for k, v in values.items()})
    except (KeyError, IndexError, ValueError) as exc:
        raise TemplateError(f"template rendering failed: {exc}")


def summarize_segment(segment: Segment, spec: LlmSpec,
                      template_id: str = "segment_v1",
                      task: str = TASK_DESCRIPTION,
                      template_dir: str | Path | None = None,
                      provider=None) -> Summary:
    """Summarize one segment from its discourse plus task-context label."""
    discourse = segment.discourse_text
    if not discourse.strip():
        raise InvalidInput(f"segment {segment.id} has empty discourse")
    prompt = render_prompt(
        load_template(template_id, template_dir),
        task=task, context=segment.context.label, discourse=discourse)
    text = complete(spec, system="", messages=[("user", prompt)], provider=provider)
    return Summary(segment_id=segment.id, text=text,
                   prompt_id=template_id, model_id=spec.model_id)


def save_summaries(summaries: list[Summary], path: str | Path) -> None:
    lines = [json.dumps(vars(s), ensure_ascii=False) for s in summaries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_summaries(path: str | Path) -> list[Summary]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(Summary(**json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# Student-vs-expert model diff


@dataclass(frozen=True)
class Discrepancy:
    kind: str  # missing_block | extra_block | wrong_param | wrong_order
    path: str
    expected: object = None
    found: object = None

    def render(self) -> str:
        parts = [f"{self.kind} at {self.path}"]
        if self.expected is not None:
            parts.append(f"expected {self.expected}")
        if self.found is not None:
            parts.append(f"found {self.found}")
        return " ".join(parts)


def _lcs_pairs(a: list, b: list) -> list[tuple[int, int]]:
    """Index pairs of one longest common subsequence of a and b.

    Items must be mutually comparable. The walk breaks dp ties by comparing
    the items themselves, which makes the chosen pairing invariant under
    swapping the arguments; diff(a, b) and diff(b, a) then align the same
    nodes, which the missing/extra anti-symmetry guarantee relies on.
    """
    n, m = len(a), len(b)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            dp[i][j] = (dp[i + 1][j + 1] + 1 if a[i] == b[j]
                        else max(dp[i + 1][j], dp[i][j + 1]))
    pairs, i, j = [], 0, 0
    while i < n and j < m:
        if a[i] == b[j]:
            pairs.append((i, j))
            i += 1
            j += 1
        elif dp[i + 1][j] > dp[i][j + 1]:
            i += 1
        elif dp[i + 1][j] < dp[i][j + 1]:
            j += 1
        elif a[i] < b[j]:
            i += 1
        else:
            j += 1
    return pairs


def _signature(node: Node) -> tuple:
    return (node.block_type,
            tuple(sorted((k, repr(v)) for k, v in node.params.items())),
            tuple(_signature(c) for c in node.children))


def _in_order_pairs(pairs: list[tuple[int, int]]) -> set[tuple[int, int]]:
    """Largest order-preserving subset (LIS over expert indices)."""
    if not pairs:
        return set()
    length = [1] * len(pairs)
    prev = [-1] * len(pairs)
    for x in range(len(pairs)):
        for y in range(x):
            if pairs[y][1] < pairs[x][1] and length[y] + 1 > length[x]:
                length[x] = length[y] + 1
                prev[x] = y
    end = max(range(len(pairs)), key=lambda x: length[x])
    keep = set()
    while end != -1:
        keep.add(pairs[end])
        end = prev[end]
    return keep


def _ordinal_path(parent: str, siblings: list[Node], index: int) -> str:
    node = siblings[index]
    nth = sum(1 for s in siblings[: index + 1] if s.block_type == node.block_type)
    return f"{parent}/{node.block_type}#{nth}"


def _diff_params(student: Node, expert: Node, path: str, out: list[Discrepancy]):
    for key in sorted(set(student.params) | set(expert.params)):
        sv, ev = student.params.get(key), expert.params.get(key)
        if sv != ev:
            # wrong_param always carries both sides; an absent param renders
            # as "(unset)" rather than omitting the field.
            out.append(Discrepancy(
                kind="wrong_param", path=f"{path}.{key}",
                expected=ev if ev is not None else "(unset)",
                found=sv if sv is not None else "(unset)"))


def _diff_bodies(student_body: list[Node], expert_body: list[Node],
                 parent_e: str, parent_s: str, out: list[Discrepancy]):
    # Pass 1 anchors identical subtrees, so an unchanged later sibling never
    # pairs with a changed earlier one of the same block type. Pass 2 aligns
    # the rest by block type (edited nodes); pass 3 pairs same-type leftovers
    # that only a reordering explains. Missing paths are built from
    # expert-side ordinals all the way down and extra paths from student-side
    # ordinals, so diff(a, b) and diff(b, a) name the same node identically.
    matched = _lcs_pairs([_signature(x) for x in student_body],
                         [_signature(x) for x in expert_body])
    left_s = [i for i in range(len(student_body)) if i not in {i for i, _ in matched}]
    left_e = [j for j in range(len(expert_body)) if j not in {j for _, j in matched}]

    rel = _lcs_pairs([student_body[i].block_type for i in left_s],
                     [expert_body[j].block_type for j in left_e])
    matched += [(left_s[ri], left_e[rj]) for ri, rj in rel]
    left_s = [i for k, i in enumerate(left_s) if k not in {ri for ri, _ in rel}]
    left_e = [j for k, j in enumerate(left_e) if k not in {rj for _, rj in rel}]

    for j in list(left_e):
        for i in list(left_s):
            if student_body[i].block_type == expert_body[j].block_type:
                matched.append((i, j))
                left_s.remove(i)
                left_e.remove(j)
                break

    matched.sort()
    in_order = _in_order_pairs(matched)
    for i, j in matched:
        if (i, j) not in in_order:
            out.append(Discrepancy(
                kind="wrong_order", path=_ordinal_path(parent_e, expert_body, j),
                expected=f"position {j + 1}", found=f"position {i + 1}"))

    for j in left_e:
        out.append(Discrepancy(
            kind="missing_block", path=_ordinal_path(parent_e, expert_body, j),
            expected=expert_body[j].block_type))
    for i in left_s:
        out.append(Discrepancy(
            kind="extra_block", path=_ordinal_path(parent_s, student_body, i),
            found=student_body[i].block_type))

    for i, j in matched:
        path_e = _ordinal_path(parent_e, expert_body, j)
        path_s = _ordinal_path(parent_s, student_body, i)
        _diff_params(student_body[i], expert_body[j], path_e, out)
        _diff_bodies(student_body[i].children, expert_body[j].children,
                     path_e, path_s, out)


def diff_models(student: ModelAST, expert: ModelAST) -> list[Discrepancy]:
    """Structural diff of two models; empty iff the trees are equivalent.

    Scripts are matched by hat block; within a script, bodies align by
    longest common subsequence over block types at each tree level.
    """
    out: list[Discrepancy] = []
    unmatched: dict[str, list[Script]] = {}
    for s in student.scripts:
        unmatched.setdefault(s.hat, []).append(s)
    for e in expert.scripts:
        candidates = unmatched.get(e.hat, [])
        if candidates:
            _diff_bodies(candidates.pop(0).body, e.body, e.hat, e.hat, out)
        else:
            out.append(Discrepancy(kind="missing_block", path=e.hat, expected=e.hat))
    for hat, leftovers in unmatched.items():
        for _ in leftovers:
            out.append(Discrepancy(kind="extra_block", path=hat, found=hat))
    return out


def render_diff(discrepancies: list[Discrepancy]) -> str:
    if not discrepancies:
        return "(no discrepancies: the student model matches the expert model)"
    return "\n".join(d.render() for d in discrepancies)


# ---------------------------------------------------------------------------
# Agentic diagnosis


@dataclass
class AgenticDiagnosis:
    problem: str
    diagnosis: str
    recommendation: str
    discrepancies: list[Discrepancy] = field(default_factory=list)


def _parse_sections(text: str) -> dict[str, str] | None:
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for line in text.splitlines():
        m = _SECTION_RE.match(line)
        if m:
            current = m.group(1).upper()
            sections[current] = [m.group(2)]
        elif current:
            sections[current].append(line)
    parsed = {k: "\n".join(v).strip() for k, v in sections.items()}
    if all(parsed.get(k) for k in ("PROBLEM", "DIAGNOSIS", "RECOMMEND")):
        return parsed
    return None


def agentic_summarize(discourse: str, student: ModelAST, expert: ModelAST,
                      spec: LlmSpec, template_id: str = "agentic_v1",
                      task: str = TASK_DESCRIPTION,
                      template_dir: str | Path | None = None,
                      provider=None) -> AgenticDiagnosis:
    """Diagnose the student-expressed problem and recommend knowledge to retrieve.

    The recommendation becomes the retrieval query, so it must be non-empty;
    an unparseable response is reprompted once, then surfaces as ParseError.
    """
    if not discourse.strip():
        raise InvalidInput("agentic summarization requires non-empty discourse")
    provider = provider or get_llm_provider(spec)
    discrepancies = diff_models(student, expert)
    prompt = render_prompt(
        load_template(template_id, template_dir),
        task=task, discourse=discourse,
        student_model=model_outline(student),
        diff=render_diff(discrepancies))
    messages = [("user", prompt)]
    text = complete(spec, system="", messages=messages, provider=provider)
    parsed = _parse_sections(text)
    if parsed is None:
        messages += [
            ("assistant", text),
            ("user", "Rewrite your answer as exactly three labeled sections: "
                     "PROBLEM:, DIAGNOSIS:, and RECOMMEND:, each non-empty."),
        ]
        text = complete(spec, system="", messages=messages, provider=provider)
        parsed = _parse_sections(text)
    if parsed is None:
        raise ParseError("response lacks PROBLEM/DIAGNOSIS/RECOMMEND sections",
                         raw_text=text)
    return AgenticDiagnosis(
        problem=parsed["PROBLEM"],
        diagnosis=parsed["DIAGNOSIS"],
        recommendation=parsed["RECOMMEND"],
        discrepancies=discrepancies,
    )
