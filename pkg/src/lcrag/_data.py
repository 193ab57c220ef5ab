"""Access to files bundled under lcrag/data."""

from __future__ import annotations

from importlib import resources


def data_ref(*parts: str):
    ref = resources.files("lcrag").joinpath("data")
    for part in parts:
        ref = ref.joinpath(part)
    return ref
