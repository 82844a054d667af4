"""Prompt templates shipped as editable text assets.

Each asset has a system section and a user-message template separated by a
``---`` line. The first system line is a ``TASK:`` tag that the mock provider
dispatches on; the tag is part of the wire contract with the mock.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    task: str
    system: str
    user_template: string.Template

    def render_user(self, **fields: str) -> str:
        return self.user_template.safe_substitute(**fields)


@lru_cache(maxsize=None)
def load_prompt(name: str) -> PromptTemplate:
    raw = resources.files("mindgraph").joinpath("assets").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    system, sep, user = raw.partition("\n---\n")
    if not sep:
        raise ValueError(f"prompt asset {name!r} is missing the '---' separator")
    first = system.splitlines()[0]
    if not first.startswith("TASK: "):
        raise ValueError(f"prompt asset {name!r} is missing its TASK tag")
    return PromptTemplate(
        name=name,
        task=first.removeprefix("TASK: ").strip(),
        system=system.strip("\n"),
        user_template=string.Template(user.strip("\n")),
    )
