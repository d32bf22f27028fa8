import os
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ancestors_by_paths, dag_to_obo, random_dag
from ontotrain.ontology import (
    CycleError,
    ParseError,
    UnknownClass,
    ancestors,
    build_ontology_dataset,
    member_counts,
    parse_obo,
    select_label_classes,
)
from ontotrain.reference import ONTOLOGY_LABEL_CLASSES, ONTOLOGY_ROWS
from ontotrain.synthetic import ROOT, fixture_path

SMILES_PROP = "property_value: http://purl.obolibrary.org/obo/chebi/smiles"


def term(cid, parents=(), smiles=None, extra=()):
    lines = ["[Term]", f"id: {cid}", f"name: {cid.lower()}"]
    lines += [f"is_a: {p} ! parent" for p in parents]
    if smiles:
        lines.append(f'{SMILES_PROP} "{smiles}" xsd:string')
    lines += list(extra)
    return "\n".join(lines) + "\n\n"


def test_two_terms_one_edge():
    g = parse_obo(term("X:1") + term("X:2", ["X:1"]), root="X:1")
    assert g["X:2"].parents == ("X:1",)
    assert g["X:1"].parents == ()
    assert g.root == "X:1"


def test_obsolete_terms_are_dropped():
    text = term("X:1") + term("X:2", ["X:1"]) + term("X:3", ["X:1"], extra=["is_obsolete: true"])
    g = parse_obo(text)
    assert "X:3" not in g
    assert len(g) == 2


def test_cycle_raises_and_names_members():
    text = term("X:1", ["X:3"]) + term("X:2", ["X:1"]) + term("X:3", ["X:2"])
    with pytest.raises(CycleError) as info:
        parse_obo(text)
    assert set(info.value.cycle) == {"X:1", "X:2", "X:3"}


def test_self_loop_is_a_cycle():
    with pytest.raises(CycleError):
        parse_obo(term("X:1", ["X:1"]))


def test_malformed_line_reports_line_number():
    with pytest.raises(ParseError) as info:
        parse_obo("[Term]\nid: X:1\nthis line has no colon\n")
    assert info.value.line == 3


def test_dangling_parent_is_reported_and_dropped():
    g = parse_obo(term("X:1") + term("X:2", ["X:1", "X:99"]))
    assert g["X:2"].parents == ("X:1",)
    assert g.dangling == [("X:2", "X:99")]


def test_smiles_sources_and_other_relations():
    text = (
        term("X:1")
        + "[Term]\nid: X:2\nis_a: X:1\nrelationship: has_part X:1\n"
        + 'synonym: "OCC" RELATED SMILES [ChEBI]\n\n'
        + "[Typedef]\nid: has_part\nname: has part\n"
    )
    g = parse_obo(text)
    assert g["X:2"].smiles == "OCC"
    assert g["X:2"].parents == ("X:1",)
    assert "has_part" not in g


def test_ancestors_chain_and_diamond():
    chain = parse_obo(term("A") + term("B", ["A"]) + term("C", ["B"]))
    assert ancestors(chain, "C") == {"A", "B", "C"}
    assert ancestors(chain, "A") == {"A"}
    diamond = parse_obo(term("T") + term("L", ["T"]) + term("R", ["T"]) + term("D", ["L", "R"]))
    assert ancestors(diamond, "D") == {"D", "L", "R", "T"}
    with pytest.raises(UnknownClass):
        ancestors(diamond, "missing")


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_ancestors_match_path_enumeration(seed):
    parents = random_dag(random.Random(seed))
    g = parse_obo(dag_to_obo(parents), root=None)
    for node in parents:
        assert ancestors(g, node) == ancestors_by_paths(parents, node)


def small_ontology():
    # A has three SMILES-bearing descendants (one of them two levels down), B has one.
    return parse_obo(
        term("R")
        + term("A", ["R"])
        + term("B", ["R"])
        + term("A1", ["A"])
        + term("m1", ["A"], "CCO")
        + term("m2", ["A1"], "CCN")
        + term("m3", ["A1"], "CCC")
        + term("m4", ["B"], "CCCl"),
        root="R",
    )


def test_select_label_classes_threshold():
    g = small_ontology()
    assert member_counts(g)["A"] == 3
    assert member_counts(g)["B"] == 1
    assert select_label_classes(g, 3) == ["A"]
    assert select_label_classes(g, 2) == ["A", "A1"]
    assert select_label_classes(g, 1) == ["A", "A1", "B"]
    assert select_label_classes(g, 5) == []
    with pytest.raises(ValueError):
        select_label_classes(g, 0)


def test_select_label_classes_ignores_stanza_order():
    text = term("R") + term("A", ["R"]) + term("x", ["A"], "C") + term("y", ["A"], "CC") + term("B", ["R"])
    stanzas = [s + "\n\n" for s in text.strip().split("\n\n")]
    expected = select_label_classes(parse_obo(text, root="R"), 2)
    rng = random.Random(0)
    for _ in range(10):
        rng.shuffle(stanzas)
        assert select_label_classes(parse_obo("".join(stanzas), root="R"), 2) == expected


def test_dataset_rows_follow_superclasses():
    g = small_ontology()
    data = build_ontology_dataset(g, ["A", "B"])
    rows = dict(zip(data.smiles, data.labels.tolist()))
    assert rows["CCO"] == [1, 0]
    assert rows["CCN"] == [1, 0]
    assert rows["CCCl"] == [0, 1]
    assert data.present.all()


def test_dataset_skips_bad_and_long_smiles():
    g = parse_obo(term("R") + term("A", ["R"]) + term("ok", ["A"], "CO") + term("bad", ["A"], "C~C")
                  + term("long", ["A"], "C" * 20), root="R")
    data = build_ontology_dataset(g, ["A"], max_len=10)
    assert data.smiles == ["CO"]
    assert sorted(cid for cid, _ in data.skipped) == ["bad", "long"]


def test_dataset_hierarchy_closure_on_toy_ontology():
    g = parse_obo(fixture_path("toy.obo").read_text(), root=ROOT)
    space = select_label_classes(g, 20)
    data = build_ontology_dataset(g, space)
    for i, ci in enumerate(space):
        for j, cj in enumerate(space):
            if ci in ancestors(g, cj):
                assert np.all(data.labels[:, i] >= data.labels[:, j])


@pytest.mark.skipif("ONTOTRAIN_CHEBI_OBO" not in os.environ, reason="set ONTOTRAIN_CHEBI_OBO to a chebi.obo release")
def test_chebi_reference_counts():
    # Reference points for a full ChEBI release with 100 members per class;
    # counts drift between releases, so only their order of magnitude is checked.
    with open(os.environ["ONTOTRAIN_CHEBI_OBO"], encoding="utf-8") as fh:
        g = parse_obo(fh)
    space = select_label_classes(g, 100)
    data = build_ontology_dataset(g, space)
    print(f"label classes: {len(space)} (reference {ONTOLOGY_LABEL_CLASSES}), rows: {len(data)} (reference {ONTOLOGY_ROWS})")
    assert 400 < len(space) < 2000
    assert 60_000 < len(data) < 260_000
