"""Template-driven generation of equivalent surface labels.

Iteration ``k`` uses templates ``0..k``; template 0 is the bare class name,
so ``k`` also counts the redundant labels added per class.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from semscale.errors import IterationOutOfRange, MalformedTemplateLine, SurfaceCollision


@dataclass(frozen=True)
class Template:
    prefix: str = ""
    pluralize: bool = False

    @property
    def is_identity(self) -> bool:
        return self.prefix == "" and not self.pluralize


@dataclass(frozen=True)
class TemplateList:
    entries: tuple[Template, ...]
    source: str = "builtin"

    def __post_init__(self) -> None:
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries or not entries[0].is_identity:
            raise ValueError("the first template must be the identity template")
        if len(set(entries)) != len(entries):
            raise ValueError("templates must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> Template:
        return self.entries[i]

    @property
    def max_k(self) -> int:
        return len(self.entries) - 1


BUILTIN_TEMPLATES = TemplateList(
    (
        Template("", False),
        Template("", True),
        Template("Large", False),
        Template("Large", True),
        Template("Small", False),
        Template("Small", True),
        Template("Medium", False),
        Template("Medium", True),
        Template("Broad Category", False),
        Template("Broad Category", True),
    )
)


def pluralize(word: str, exceptions: Mapping[str, str] | None = None) -> str:
    """Append "s" to the last token unless ``exceptions`` says otherwise.

    The exception table is consulted for the whole word first, then for the
    final whitespace-separated token.
    """
    if not word:
        raise ValueError("cannot pluralize an empty word")
    if exceptions:
        if word in exceptions:
            return exceptions[word]
        head, sep, last = word.rpartition(" ")
        if last in exceptions:
            return head + sep + exceptions[last]
    return word + "s"


def render(base: str, template: Template, exceptions: Mapping[str, str] | None = None) -> str:
    word = pluralize(base, exceptions) if template.pluralize else base
    return f"{template.prefix} {word}" if template.prefix else word


def expand_label(
    base: str,
    templates: TemplateList = BUILTIN_TEMPLATES,
    k: int = 0,
    exceptions: Mapping[str, str] | None = None,
) -> list[str]:
    if k < 0 or k > templates.max_k:
        raise IterationOutOfRange(
            f"iteration {k} needs {k + 1} templates but only {len(templates)} are available; "
            "supply more with a user template file"
        )
    out: list[str] = []
    for t in templates.entries[: k + 1]:
        s = render(base, t, exceptions)
        if s not in out:
            out.append(s)
    return out


@dataclass(frozen=True)
class EquivalenceMap:
    """Surface label <-> base class tables for one iteration.

    ``surfaces`` is template-major: every class's template-0 form first,
    then template 1, and so on. The list at ``k`` is therefore a prefix of
    the list at ``k + 1``.
    """

    surface_to_base: dict[str, str]
    base_to_surfaces: dict[str, tuple[str, ...]]
    iteration: int
    surfaces: tuple[str, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.surface_to_base)

    def resolve(self, surface: str) -> str:
        return self.surface_to_base[surface]


def build_equivalence_map(
    classes: Sequence[str],
    templates: TemplateList = BUILTIN_TEMPLATES,
    k: int = 0,
    exceptions: Mapping[str, str] | None = None,
) -> EquivalenceMap:
    if not classes:
        raise ValueError("at least one class is required")
    expanded = {c: expand_label(c, templates, k, exceptions) for c in classes}

    owners: dict[str, list[str]] = {}
    for c, surfaces in expanded.items():
        for s in surfaces:
            owners.setdefault(s, []).append(c)
    collisions = {s: tuple(cs) for s, cs in owners.items() if len(cs) > 1}
    if collisions:
        raise SurfaceCollision(collisions)

    # template-major ordering; per-class lists may be shorter when an
    # exception table makes two templates render identically
    ordered: list[str] = []
    depth = max(len(v) for v in expanded.values())
    for t in range(depth):
        for c in classes:
            if t < len(expanded[c]):
                ordered.append(expanded[c][t])
    surface_to_base = {s: owners[s][0] for s in ordered}
    base_to_surfaces = {c: tuple(expanded[c]) for c in classes}
    return EquivalenceMap(surface_to_base, base_to_surfaces, k, tuple(ordered))


def parse_template_lines(text: str) -> list[Template]:
    out: list[Template] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise MalformedTemplateLine(lineno, "expected 'prefix<TAB>0|1'")
        prefix, flag = parts[0].strip(), parts[1].strip()
        if flag not in ("0", "1"):
            raise MalformedTemplateLine(lineno, f"plural flag must be 0 or 1, got {flag!r}")
        out.append(Template(prefix, flag == "1"))
    return out


def load_user_templates(path: str | os.PathLike, base: TemplateList = BUILTIN_TEMPLATES) -> TemplateList:
    """Builtin templates followed by the file's entries, duplicates dropped."""
    with open(path, encoding="utf-8") as fh:
        user = parse_template_lines(fh.read())
    entries = list(base.entries)
    for t in user:
        if t not in entries:
            entries.append(t)
    return TemplateList(tuple(entries), source="user_file")


def load_plural_exceptions(path: str | os.PathLike) -> dict[str, str]:
    """Read ``word<TAB>plural`` lines; blank lines and ``#`` comments skipped."""
    table: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh.read().splitlines(), start=1):
            if not raw.strip() or raw.lstrip().startswith("#"):
                continue
            parts = raw.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise MalformedTemplateLine(lineno, "expected 'word<TAB>plural'")
            table[parts[0].strip()] = parts[1].strip()
    return table
