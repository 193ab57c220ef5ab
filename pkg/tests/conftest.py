from __future__ import annotations

import pytest

from lcrag import kb as kb_mod
from lcrag._data import data_ref
from lcrag.seglog import LogAction, Utterance
from lcrag.summarize import LlmSpec


@pytest.fixture(scope="session")
def eval3_kb():
    return kb_mod.ingest_corpus(
        str(data_ref("eval3")), kb_mod.ChunkingParams(), "hash-64")


@pytest.fixture(scope="session")
def condensed_kb():
    return kb_mod.ingest_corpus(
        str(data_ref("condensed")), kb_mod.ChunkingParams(), "hash-64")


@pytest.fixture(scope="session")
def copa_llm_spec():
    return LlmSpec(model_id="scripted-copa", endpoint="scripted",
                   script_path=str(data_ref("scripts", "copa_demo.json")))


@pytest.fixture(scope="session")
def summarizer_llm_spec():
    return LlmSpec(model_id="scripted-summarizer", endpoint="scripted",
                   script_path=str(data_ref("scripts", "summarizer_demo.json")))


def _action(ts, block_type, chain, verb="create", user="S1"):
    return LogAction(ts=ts, user=user, verb=verb, block_type=block_type,
                     block_id=f"b{ts}", ancestor_chain=tuple(chain))


@pytest.fixture()
def twelve_action_fixture():
    """Hand-built 12-action / 8-utterance stream -> 4 segments.

    Walkthrough: actions 1-3 initialize under the green flag (run 1), action
    4 is a run event (unclassified), 5-6 update per step (run 2), 7-8 are a
    conditional and its operator (run 3), 9-10 and 12 sit inside the
    conditional (run 4) with a detached block (11) in between.
    """
    actions = [
        _action(1000, "set_position", ["when_green_flag_clicked"]),
        _action(2000, "set_velocity", ["when_green_flag_clicked"]),
        _action(3000, "set_time_step", ["when_green_flag_clicked"]),
        _action(4000, "", [], verb="run"),
        _action(5000, "change_position", ["simulation_step"]),
        _action(6000, "change_velocity", ["simulation_step"]),
        _action(7000, "if", ["simulation_step"]),
        _action(8000, "greater_than", ["if", "simulation_step"]),
        _action(9000, "set_acceleration", ["if", "simulation_step"]),
        _action(10000, "set_acceleration", ["if", "simulation_step"]),
        _action(11000, "set_velocity", []),
        _action(12000, "set_velocity", ["if", "simulation_step"]),
    ]
    utterances = [
        Utterance(500, "S1", "let's set up the start"),
        Utterance(1500, "S2", "put that position block there"),
        Utterance(3500, "S1", "velocity starts at zero"),
        Utterance(5500, "S2", "now it moves every step"),
        Utterance(7500, "S1", "we need an if for the sign"),
        Utterance(9500, "S2", "slow it down inside the if"),
        Utterance(10500, "S1", "set acceleration negative"),
        Utterance(12500, "S2", "stop it at zero"),
    ]
    return actions, utterances


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" in nodeid and getattr(rep, "when", "call") == "call":
                rows.append((nodeid.split("::")[-1],
                             "PASS" if outcome == "passed" else "FAIL"))
    if rows:
        terminalreporter.section("acceptance criteria")
        for name, status in sorted(rows):
            terminalreporter.write_line(f"{status}  {name}")
