#!/usr/bin/env python3
"""Regenerate the bundled synthetic session fixture and its manifest.

Run from the repo root:  PYTHONPATH=src python3 scripts/make_fixtures.py

The log/transcript fixture is a seeded synthetic stand-in for a classroom
session; the manifest freezes its counts (and the bundled corpus chunk
counts under default params) so tests can pin them.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from lcrag import kb, seglog
from lcrag._data import data_ref

OUT_DIR = Path(__file__).resolve().parent.parent / "src" / "lcrag" / "data" / "fixtures"

SEED = 20240217
BASE_TS = 1716000000000

INIT_BLOCKS = ["set_position", "set_velocity", "set_acceleration", "set_time_step"]
STEP_BLOCKS = ["change_position", "change_velocity"]
COND_BLOCKS = ["if", "if_else", "greater_than", "less_than", "equals", "and"]
UNDER_BLOCKS = ["set_acceleration", "set_velocity", "change_velocity"]

UTTERANCE_POOL = [
    "put that position block there",
    "wait why is it not moving",
    "set it to zero first",
    "we need the velocity to change every step",
    "try running it again",
    "no that's the wrong variable",
    "it should stop at the sign",
    "what if we check the position first",
    "I think the acceleration is too big",
    "okay that looks better",
    "do we need another if block",
    "move it under the simulation step",
    "we got this",
    "let me drive for a bit",
    "the truck is going backwards now",
    "maybe delta t is wrong",
]


def make_phase(rng, ctx, n):
    rows = []
    for _ in range(n):
        if ctx == "init":
            rows.append((rng.choice(INIT_BLOCKS), ["when_green_flag_clicked"]))
        elif ctx == "step":
            rows.append((rng.choice(STEP_BLOCKS), ["simulation_step"]))
        elif ctx == "cond":
            rows.append((rng.choice(COND_BLOCKS), ["simulation_step"]))
        elif ctx == "under":
            rows.append((rng.choice(UNDER_BLOCKS), ["if", "simulation_step"]))
    return rows


def main() -> None:
    rng = random.Random(SEED)
    blocks = []
    phases = ["init", "step", "cond", "under"]
    # A session wanders through phases, sometimes revisiting one.
    for _ in range(24):
        ctx = rng.choice(phases)
        blocks.extend(make_phase(rng, ctx, rng.randint(4, 14)))
        if rng.random() < 0.4:
            blocks.append(("", []))  # green-flag run event -> Unclassified
        if rng.random() < 0.2:
            blocks.append((rng.choice(INIT_BLOCKS), []))  # detached block

    ts = BASE_TS
    actions = []
    for i, (block_type, chain) in enumerate(blocks):
        ts += rng.randint(1000, 8000)
        verb = "run" if block_type == "" else rng.choice(
            ["create", "move", "change_value", "delete"])
        actions.append({
            "ts": ts,
            "user": rng.choice(["S1", "S2"]),
            "verb": verb,
            "block_type": block_type,
            "block_id": f"blk{i:04d}",
            "ancestor_chain": chain,
        })

    utterances = []
    uts = BASE_TS - 3000
    while uts < ts:
        uts += rng.randint(2000, 12000)
        utterances.append({
            "ts": uts,
            "speaker": rng.choice(["S1", "S2"]),
            "text": rng.choice(UTTERANCE_POOL),
        })

    OUT_DIR.mkdir(parents=True, exist_ok=True)
    with open(OUT_DIR / "session_log.jsonl", "w", encoding="utf-8") as fh:
        for a in actions:
            fh.write(json.dumps(a) + "\n")
    with open(OUT_DIR / "session_transcript.jsonl", "w", encoding="utf-8") as fh:
        for u in utterances:
            fh.write(json.dumps(u) + "\n")

    parsed = seglog.parse_log(OUT_DIR / "session_log.jsonl")
    utts = seglog.parse_transcript(OUT_DIR / "session_transcript.jsonl")
    segments = seglog.segment(parsed.actions, utts)

    params = kb.ChunkingParams()
    corpus_chunks = kb.chunk_corpus(str(data_ref("corpus")), params)
    condensed_chunks = kb.chunk_corpus(str(data_ref("condensed")), params)

    manifest = {
        "seed": SEED,
        "log_actions": len(parsed.actions),
        "log_warnings": len(parsed.warnings),
        "utterances": len(utts),
        "segments": len(segments),
        "corpus_chunks_default_params": len(corpus_chunks),
        "condensed_chunks": len(condensed_chunks),
    }
    (OUT_DIR / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(json.dumps(manifest, indent=2))


if __name__ == "__main__":
    main()
