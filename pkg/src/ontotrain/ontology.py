"""ChEBI-style ontology ingestion, subsumption closure and the ontology pre-training dataset."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .labeled import LabeledSet
from .smiles_tok import DEFAULT_MAX_LEN, TokenizeError, tokenize

MOLECULAR_ENTITY = "CHEBI:23367"

_QUOTED = re.compile(r'"((?:[^"\\]|\\.)*)"')


class ParseError(ValueError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class CycleError(ValueError):
    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("is-a cycle: " + " -> ".join(cycle))


class UnknownClass(KeyError):
    pass


@dataclass(frozen=True)
class OntologyClass:
    id: str
    name: str = ""
    parents: tuple[str, ...] = ()
    smiles: str | None = None


@dataclass
class OntologyGraph:
    classes: dict[str, OntologyClass]
    root: str | None = None
    dangling: list[tuple[str, str]] = field(default_factory=list)
    _closure: dict[str, frozenset[str]] = field(default_factory=dict, repr=False, compare=False)

    def __contains__(self, cid: str) -> bool:
        return cid in self.classes

    def __len__(self) -> int:
        return len(self.classes)

    def __getitem__(self, cid: str) -> OntologyClass:
        try:
            return self.classes[cid]
        except KeyError:
            raise UnknownClass(cid) from None


def _unquote_value(value: str) -> str:
    # Drop trailing "! comment" and "{qualifier}" blocks from tag values.
    value = value.split(" !", 1)[0]
    value = re.sub(r"\s*\{.*\}\s*$", "", value)
    return value.strip()


def _smiles_from(tag: str, value: str) -> str | None:
    if tag == "property_value":
        prop, _, rest = value.partition(" ")
        if "smiles" in prop.lower():
            m = _QUOTED.search(rest)
            if m:
                return m.group(1)
    elif tag == "synonym":
        # Older ChEBI releases: synonym: "CCO" RELATED SMILES [ChEBI]
        m = _QUOTED.match(value)
        if m and re.search(r"\bSMILES\b", value[m.end():]):
            return m.group(1)
    return None


def parse_obo(stream: TextIO | str | Iterable[str], root: str | None = MOLECULAR_ENTITY) -> OntologyGraph:
    """Parse OBO text into an :class:`OntologyGraph`.

    Obsolete terms and non-``is_a`` relations are dropped. Parent references to
    terms that are missing (or obsolete) are removed and listed in
    ``graph.dangling``. ``root`` is kept only if it names a loaded class.
    """
    lines = stream.splitlines() if isinstance(stream, str) else stream
    terms: dict[str, OntologyClass] = {}
    obsolete: set[str] = set()

    stanza: str | None = None
    current: dict | None = None

    def flush():
        if current is None:
            return
        if "id" not in current:
            raise ParseError("[Term] stanza without id", current["line"])
        cid = current["id"]
        if cid in terms or cid in obsolete:
            raise ParseError(f"duplicate term {cid}", current["line"])
        if current["obsolete"]:
            obsolete.add(cid)
        else:
            terms[cid] = OntologyClass(cid, current["name"], tuple(dict.fromkeys(current["parents"])), current["smiles"])

    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("!"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"malformed stanza header {line!r}", lineno)
            flush()
            stanza = line[1:-1]
            current = {"line": lineno, "name": "", "parents": [], "smiles": None, "obsolete": False} if stanza == "Term" else None
            continue
        tag, sep, value = line.partition(":")
        if not sep:
            raise ParseError(f"expected 'tag: value', got {line!r}", lineno)
        if current is None:
            continue  # header or non-Term stanza
        tag, value = tag.strip(), value.strip()
        if tag == "id":
            current["id"] = _unquote_value(value)
        elif tag == "name":
            current["name"] = value
        elif tag == "is_a":
            current["parents"].append(_unquote_value(value))
        elif tag == "is_obsolete":
            current["obsolete"] = value.lower() == "true"
        elif current["smiles"] is None:
            current["smiles"] = _smiles_from(tag, value)
    flush()

    dangling = []
    for cid, cls in list(terms.items()):
        kept = tuple(p for p in cls.parents if p in terms)
        if kept != cls.parents:
            dangling.extend((cid, p) for p in cls.parents if p not in terms)
            terms[cid] = OntologyClass(cls.id, cls.name, kept, cls.smiles)

    graph = OntologyGraph(terms, root if root in terms else None, dangling)
    _check_acyclic(graph)
    return graph


def _check_acyclic(graph: OntologyGraph) -> None:
    white, grey, black = 0, 1, 2
    color = dict.fromkeys(graph.classes, white)
    for start in sorted(graph.classes):
        if color[start] != white:
            continue
        path = [start]
        stack = [iter(graph.classes[start].parents)]
        color[start] = grey
        while stack:
            nxt = next(stack[-1], None)
            if nxt is None:
                color[path.pop()] = black
                stack.pop()
                continue
            if color[nxt] == grey:
                raise CycleError(path[path.index(nxt):] + [nxt])
            if color[nxt] == white:
                color[nxt] = grey
                path.append(nxt)
                stack.append(iter(graph.classes[nxt].parents))


def ancestors(graph: OntologyGraph, cid: str) -> frozenset[str]:
    """Reflexive-transitive closure of ``cid`` over is-a edges."""
    if cid not in graph.classes:
        raise UnknownClass(cid)
    cached = graph._closure.get(cid)
    if cached is not None:
        return cached
    seen = {cid}
    todo = [cid]
    while todo:
        for p in graph.classes[todo.pop()].parents:
            if p not in seen:
                seen.add(p)
                todo.append(p)
    result = frozenset(seen)
    graph._closure[cid] = result
    return result


def member_counts(graph: OntologyGraph) -> Counter[str]:
    """For every class, the number of strict descendants carrying a SMILES string."""
    counts: Counter[str] = Counter()
    for cid, cls in graph.classes.items():
        if cls.smiles:
            for anc in ancestors(graph, cid):
                if anc != cid:
                    counts[anc] += 1
    return counts


def select_label_classes(graph: OntologyGraph, min_members: int, root: str | None = None) -> list[str]:
    """Strict descendants of ``root`` with at least ``min_members`` SMILES-bearing subclasses, sorted by id."""
    root = root if root is not None else graph.root
    if root is None or root not in graph.classes:
        raise UnknownClass(root)
    if min_members < 1:
        raise ValueError("min_members must be >= 1")
    counts = member_counts(graph)
    return sorted(
        cid for cid in graph.classes
        if cid != root and counts[cid] >= min_members and root in ancestors(graph, cid)
    )


def build_ontology_dataset(graph: OntologyGraph, space: list[str], max_len: int = DEFAULT_MAX_LEN) -> LabeledSet:
    """One row per SMILES-annotated class, labelled with its superclasses in ``space``.

    Classes act as instances here. Rows whose SMILES fails to tokenize or needs
    more than ``max_len - 1`` tokens land in ``skipped``.
    """
    if not space:
        raise ValueError("label space is empty")
    position = {cid: i for i, cid in enumerate(space)}
    sequences, rows, skipped = [], [], []
    for cid in sorted(graph.classes):
        smiles = graph.classes[cid].smiles
        if not smiles:
            continue
        try:
            seq = tokenize(smiles)
        except TokenizeError as err:
            skipped.append((cid, str(err)))
            continue
        if len(seq) > max_len - 1:
            skipped.append((cid, f"{len(seq)} tokens exceeds max_len {max_len}"))
            continue
        row = np.zeros(len(space), dtype=np.uint8)
        for anc in ancestors(graph, cid):
            j = position.get(anc)
            if j is not None:
                row[j] = 1
        sequences.append(seq)
        rows.append(row)
    labels = np.array(rows, dtype=np.uint8).reshape(-1, len(space))
    return LabeledSet(sequences, labels, np.ones_like(labels), list(space), skipped)
