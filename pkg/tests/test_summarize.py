from __future__ import annotations

import copy
import json

import pytest
from hypothesis import given, settings, strategies as st

from lcrag import seglog, summarize
from lcrag._data import data_ref
from lcrag.errors import (
    EmptyResponse,
    InvalidInput,
    ParseError,
    ProviderError,
    TemplateError,
)
from lcrag.seglog import ModelAST, Node, Script, Segment, TaskContext, Utterance
from lcrag.summarize import (
    LlmSpec,
    agentic_summarize,
    complete,
    diff_models,
    load_template,
    render_prompt,
    summarize_segment,
)


def seg(text_lines, context=TaskContext.INITIALIZING_VARIABLES):
    utts = [Utterance(1000 * i, f"S{(i % 2) + 1}", t)
            for i, t in enumerate(text_lines, start=1)]
    return Segment(id="seg-0001", context=context, t_start=0,
                   t_end=10_000, actions=[], utterances=utts)


def expert_ast() -> ModelAST:
    return seglog.parse_model(str(data_ref("models", "truck_expert.json")))


class TestScriptedProvider:
    def test_keyword_match(self, copa_llm_spec):
        out = complete(copa_llm_spec, "", [("user", "we are stuck on the lookahead bit")])
        assert "lookahead distance" in out

    def test_no_match_falls_back(self, copa_llm_spec):
        out = complete(copa_llm_spec, "", [("user", "zzz nothing matches zzz")])
        assert out == summarize.FALLBACK_RESPONSE

    def test_exact_matcher(self, tmp_path):
        script = [{"matcher": {"kind": "exact", "value": "ping"}, "response": "pong"}]
        path = tmp_path / "s.json"
        path.write_text(json.dumps(script))
        spec = LlmSpec(model_id="t", endpoint="scripted", script_path=str(path))
        assert complete(spec, "", [("user", " ping ")]) == "pong"
        assert complete(spec, "", [("user", "ping!")]) == summarize.FALLBACK_RESPONSE

    def test_matches_last_user_message(self, tmp_path):
        script = [{"matcher": {"kind": "keyword", "value": "beta"}, "response": "B"}]
        path = tmp_path / "s.json"
        path.write_text(json.dumps(script))
        spec = LlmSpec(model_id="t", endpoint="scripted", script_path=str(path))
        messages = [("user", "beta"), ("assistant", "B"), ("user", "alpha")]
        assert complete(spec, "", messages) == summarize.FALLBACK_RESPONSE

    def test_scripted_requires_script(self):
        with pytest.raises(InvalidInput):
            LlmSpec(model_id="t", endpoint="scripted")

    def test_empty_response_rejected(self, tmp_path):
        script = [{"matcher": {"kind": "any"}, "response": "   "}]
        path = tmp_path / "s.json"
        path.write_text(json.dumps(script))
        spec = LlmSpec(model_id="t", endpoint="scripted", script_path=str(path))
        with pytest.raises(EmptyResponse):
            complete(spec, "", [("user", "hello")])

    def test_remote_without_credentials(self, monkeypatch):
        monkeypatch.delenv("OPENAI_API_KEY", raising=False)
        spec = LlmSpec(model_id="gpt-x", endpoint="https://api.openai.com/v1/chat",
                       credentials_env="OPENAI_API_KEY")
        with pytest.raises(ProviderError) as err:
            complete(spec, "", [("user", "hello")])
        assert "auth" in str(err.value)


class TestTemplates:
    def test_render_deterministic(self):
        template = load_template("segment_v1")
        a = render_prompt(template, task="T", context="C", discourse="D")
        b = render_prompt(template, task="T", context="C", discourse="D")
        assert a == b
        assert "T" in a and "C" in a and "D" in a

    def test_missing_placeholder_value(self):
        with pytest.raises(TemplateError):
            render_prompt("hello {name}", other="x")

    def test_empty_placeholder_value(self):
        with pytest.raises(TemplateError):
            render_prompt("hello {name}", name="  ")

    def test_unknown_template(self):
        with pytest.raises(TemplateError):
            load_template("no_such_template")


class TestSummarizeSegment:
    def test_initial_position_example(self, summarizer_llm_spec):
        segment = seg(["put that position block there"])
        summary = summarize_segment(segment, summarizer_llm_spec)
        assert "initial position" in summary.text
        assert summary.segment_id == "seg-0001"
        assert summary.prompt_id == "segment_v1"
        assert summary.model_id == "scripted-summarizer"

    def test_offtopic_discourse_reframed_by_context(self, summarizer_llm_spec):
        segment = seg(["We need help.", "No we don't. We got this."],
                      context=TaskContext.CONDITIONAL_STATEMENTS)
        summary = summarize_segment(segment, summarizer_llm_spec)
        assert "stopping conditions" in summary.text

    def test_empty_discourse(self, summarizer_llm_spec):
        segment = Segment(id="s", context=TaskContext.CONDITIONAL_STATEMENTS,
                          t_start=0, t_end=1, actions=[], utterances=[])
        with pytest.raises(InvalidInput):
            summarize_segment(segment, summarizer_llm_spec)

    def test_save_load_round_trip(self, tmp_path, summarizer_llm_spec):
        summary = summarize_segment(seg(["put that position block there"]),
                                    summarizer_llm_spec)
        path = tmp_path / "summaries.jsonl"
        summarize.save_summaries([summary], path)
        loaded = summarize.load_summaries(path)
        assert loaded[0] == summary


class TestDiffModels:
    def test_identity(self):
        assert diff_models(expert_ast(), expert_ast()) == []

    def test_missing_deceleration_conditional(self):
        expert = expert_ast()
        student = copy.deepcopy(expert)
        sim = next(s for s in student.scripts if s.hat == "simulation_step")
        del sim.body[3]  # the braking conditional (second `if`)
        diffs = diff_models(student, expert)
        assert len(diffs) == 1
        assert diffs[0].kind == "missing_block"
        assert diffs[0].path == "simulation_step/if#2"

    def test_wrong_param_single_node(self):
        expert = ModelAST(scripts=[Script(hat="when_green_flag_clicked", body=[
            Node("set_velocity", params={"value": 15})])])
        student = ModelAST(scripts=[Script(hat="when_green_flag_clicked", body=[
            Node("set_velocity", params={"value": 10})])])
        diffs = diff_models(student, expert)
        assert len(diffs) == 1
        assert diffs[0].kind == "wrong_param"
        assert diffs[0].expected == 15
        assert diffs[0].found == 10
        assert diffs[0].path == "when_green_flag_clicked/set_velocity#1.value"

    def test_extra_block(self):
        expert = ModelAST(scripts=[Script(hat="simulation_step", body=[
            Node("change_position")])])
        student = ModelAST(scripts=[Script(hat="simulation_step", body=[
            Node("change_position"), Node("play_sound")])])
        diffs = diff_models(student, expert)
        assert [d.kind for d in diffs] == ["extra_block"]
        assert diffs[0].path == "simulation_step/play_sound#1"

    def test_missing_script(self):
        expert = expert_ast()
        student = ModelAST(scripts=[s for s in copy.deepcopy(expert).scripts
                                    if s.hat == "when_green_flag_clicked"])
        diffs = diff_models(student, expert)
        assert [d.kind for d in diffs] == ["missing_block"]
        assert diffs[0].path == "simulation_step"

    def test_swapped_order_reported_once(self):
        expert = ModelAST(scripts=[Script(hat="simulation_step", body=[
            Node("change_position"), Node("change_velocity")])])
        student = ModelAST(scripts=[Script(hat="simulation_step", body=[
            Node("change_velocity"), Node("change_position")])])
        diffs = diff_models(student, expert)
        assert len(diffs) == 1
        assert diffs[0].kind == "wrong_order"


def node_trees(depth=0):
    params = st.dictionaries(
        st.sampled_from(["value", "x", "by", "condition"]),
        st.one_of(st.integers(-10, 10), st.sampled_from(["a", "b"])),
        max_size=2)
    if depth >= 2:
        children = st.just([])
    else:
        children = st.lists(st.deferred(lambda: node_trees(depth + 1)), max_size=2)
    return st.builds(
        Node,
        block_type=st.sampled_from(["if", "set_velocity", "change_position", "wait"]),
        params=params,
        children=children,
    )


def model_asts():
    return st.builds(
        ModelAST,
        scripts=st.lists(
            st.builds(Script,
                      hat=st.sampled_from(["when_green_flag_clicked", "simulation_step"]),
                      body=st.lists(node_trees(), max_size=4)),
            max_size=2),
    )


class TestDiffProperties:
    @given(model_asts())
    @settings(max_examples=120, deadline=None)
    def test_self_diff_empty(self, ast):
        assert diff_models(ast, copy.deepcopy(ast)) == []

    @given(model_asts(), model_asts())
    @settings(max_examples=120, deadline=None)
    def test_missing_extra_antisymmetry(self, a, b):
        forward = diff_models(a, b)
        backward = diff_models(b, a)
        missing_fwd = sorted((d.path, d.expected) for d in forward
                             if d.kind == "missing_block")
        extra_bwd = sorted((d.path, d.found) for d in backward
                           if d.kind == "extra_block")
        assert missing_fwd == extra_bwd


class TestAgenticSummarize:
    def test_lookahead_names_displacement_equation(self, copa_llm_spec):
        expert = expert_ast()
        diagnosis = agentic_summarize(
            "S1: we have no idea how to calculate the lookahead distance",
            ModelAST(), expert, copa_llm_spec)
        assert "displacement" in diagnosis.recommendation
        assert diagnosis.problem
        assert diagnosis.diagnosis
        assert diagnosis.discrepancies  # empty student vs expert

    def test_simulation_step_names_update_rules(self, copa_llm_spec):
        diagnosis = agentic_summarize(
            'S1: how should I expand the "Simulation_step" block',
            ModelAST(), expert_ast(), copa_llm_spec)
        assert "velocity update rule" in diagnosis.recommendation
        assert "position update rule" in diagnosis.recommendation

    def test_equal_models_report_no_discrepancies(self, copa_llm_spec):
        expert = expert_ast()
        diagnosis = agentic_summarize("S1: we are done", expert, expert, copa_llm_spec)
        assert diagnosis.discrepancies == []
        assert "No discrepancies" in diagnosis.diagnosis

    def test_empty_discourse(self, copa_llm_spec):
        with pytest.raises(InvalidInput):
            agentic_summarize("  ", ModelAST(), expert_ast(), copa_llm_spec)

    def test_unparseable_response_reprompts_then_fails(self, tmp_path):
        script = [{"matcher": {"kind": "any"}, "response": "no sections here"}]
        path = tmp_path / "s.json"
        path.write_text(json.dumps(script))
        spec = LlmSpec(model_id="t", endpoint="scripted", script_path=str(path))
        calls = []

        class CountingProvider:
            def complete(self, system, messages):
                calls.append(messages)
                return "still no sections"

        with pytest.raises(ParseError) as err:
            agentic_summarize("S1: help", ModelAST(), expert_ast(), spec,
                              provider=CountingProvider())
        assert len(calls) == 2  # one reprompt
        assert err.value.raw_text == "still no sections"

    def test_reprompt_can_recover(self, copa_llm_spec):
        responses = iter([
            "unstructured rambling",
            "PROBLEM: p\nDIAGNOSIS: d\nRECOMMEND: kinematics",
        ])

        class FlakyProvider:
            def complete(self, system, messages):
                return next(responses)

        diagnosis = agentic_summarize("S1: help", ModelAST(), expert_ast(),
                                      copa_llm_spec, provider=FlakyProvider())
        assert diagnosis.recommendation == "kinematics"
