"""Deterministic synthetic chemistry used for the bundled fixtures.

Molecules are assembled from functional-group fragments. Each fragment maps
to a class in a small is-a hierarchy under a ``molecular entity`` root, and
the toy toxicity endpoints are boolean rules over those classes, so
downstream labels correlate with the hierarchy by construction.
"""

from __future__ import annotations

import random
from importlib import resources
from pathlib import Path

from .datasets import TOX21_ENDPOINTS
from .labeled import write_labeled_set
from .ontology import build_ontology_dataset, parse_obo, select_label_classes

ROOT = "TOY:0000"

# id -> (name, parents)
GROUPS = {
    ROOT: ("molecular entity", ()),
    "TOY:0100": ("organohalogen compound", (ROOT,)),
    "TOY:0101": ("organochlorine compound", ("TOY:0100",)),
    "TOY:0102": ("organobromine compound", ("TOY:0100",)),
    "TOY:0103": ("organofluorine compound", ("TOY:0100",)),
    "TOY:0200": ("aromatic compound", (ROOT,)),
    "TOY:0201": ("benzenes", ("TOY:0200",)),
    "TOY:0202": ("pyridines", ("TOY:0200", "TOY:0400")),
    "TOY:0300": ("carbonyl compound", (ROOT,)),
    "TOY:0301": ("carboxylic acid", ("TOY:0300",)),
    "TOY:0302": ("ketone", ("TOY:0300",)),
    "TOY:0400": ("nitrogen compound", (ROOT,)),
    "TOY:0401": ("amine", ("TOY:0400",)),
    "TOY:0402": ("nitro compound", ("TOY:0400",)),
    "TOY:0500": ("sulfur compound", (ROOT,)),
    "TOY:0501": ("thiol", ("TOY:0500",)),
    "TOY:0502": ("sulfonamide", ("TOY:0500", "TOY:0400")),
    "TOY:0600": ("alcohol", (ROOT,)),
}

FRAGMENTS = {
    "TOY:0101": "Cl",
    "TOY:0102": "Br",
    "TOY:0103": "F",
    "TOY:0201": "c1ccccc1",
    "TOY:0202": "c1ccncc1",
    "TOY:0301": "C(=O)O",
    "TOY:0302": "C(=O)C",
    "TOY:0401": "N",
    "TOY:0402": "[N+](=O)[O-]",
    "TOY:0501": "S",
    "TOY:0502": "S(=O)(=O)N",
    "TOY:0600": "O",
}


def _closure(cid: str) -> set[str]:
    out = {cid}
    for p in GROUPS[cid][1]:
        out |= _closure(p)
    return out


def _has(groups: set[str], cid: str) -> bool:
    return any(cid in _closure(g) for g in groups)


# One rule per endpoint, over the closed set of fragment classes.
ENDPOINT_RULES = {
    "NR-AR": lambda g: _has(g, "TOY:0101"),
    "NR-AR-LBD": lambda g: _has(g, "TOY:0100") and _has(g, "TOY:0200"),
    "NR-AhR": lambda g: _has(g, "TOY:0200"),
    "NR-Aromatase": lambda g: _has(g, "TOY:0202") or _has(g, "TOY:0102"),
    "NR-ER": lambda g: _has(g, "TOY:0100"),
    "NR-ER-LBD": lambda g: _has(g, "TOY:0300"),
    "NR-PPAR-gamma": lambda g: _has(g, "TOY:0301") or _has(g, "TOY:0501"),
    "SR-ARE": lambda g: _has(g, "TOY:0402") or _has(g, "TOY:0103"),
    "SR-ATAD5": lambda g: _has(g, "TOY:0400"),
    "SR-HSE": lambda g: _has(g, "TOY:0500"),
    "SR-MMP": lambda g: _has(g, "TOY:0300") and _has(g, "TOY:0400"),
    "SR-p53": lambda g: _has(g, "TOY:0201") and not _has(g, "TOY:0300"),
}
assert tuple(ENDPOINT_RULES) == TOX21_ENDPOINTS


def random_molecule(rng: random.Random, min_groups: int = 1, max_groups: int = 3) -> tuple[str, frozenset[str]]:
    """A fragment-assembled SMILES string and the fragment classes it contains."""
    k = rng.randint(min_groups, max_groups)
    groups = rng.sample(sorted(FRAGMENTS), k)
    parts = ["C" * rng.randint(1, 3)]
    terminal = rng.random() < 0.5
    for i, g in enumerate(groups):
        frag = FRAGMENTS[g]
        spacer = "C" * rng.randint(0, 2)
        if terminal and i == len(groups) - 1:
            parts.append(spacer + frag)
        else:
            parts.append(f"{spacer}C({frag})")
    if not terminal:
        parts.append("C" * rng.randint(0, 2))
    return "".join(parts), frozenset(groups)


def unique_molecules(n: int, seed: int, exclude: set[str] | None = None) -> list[tuple[str, frozenset[str]]]:
    rng = random.Random(seed)
    seen = set(exclude or ())
    out = []
    while len(out) < n:
        smiles, groups = random_molecule(rng)
        if smiles not in seen:
            seen.add(smiles)
            out.append((smiles, groups))
    return out


def ontology_obo(molecules: list[tuple[str, frozenset[str]]], first_id: int = 10000) -> str:
    """OBO text with the group hierarchy plus one SMILES-bearing leaf class per molecule."""
    lines = ["format-version: 1.2", "ontology: toy", ""]
    for cid, (name, parents) in GROUPS.items():
        lines += ["[Term]", f"id: {cid}", f"name: {name}"]
        lines += [f"is_a: {p} ! {GROUPS[p][0]}" for p in parents]
        lines.append("")
    for i, (smiles, groups) in enumerate(molecules):
        lines += ["[Term]", f"id: TOY:{first_id + i}", f"name: toy molecule {i}"]
        lines += [f"is_a: {g} ! {GROUPS[g][0]}" for g in sorted(groups)]
        lines += [f'property_value: http://purl.obolibrary.org/obo/chebi/smiles "{smiles}" xsd:string', ""]
    lines += ["[Term]", "id: TOY:0999", "name: withdrawn group", "is_obsolete: true", ""]
    lines += ["[Typedef]", "id: has_part", "name: has part", ""]
    return "\n".join(lines)


def toxicity_csv(molecules: list[tuple[str, frozenset[str]]], seed: int, missing_rate: float = 0.15) -> str:
    """Tox21-style CSV whose endpoints follow :data:`ENDPOINT_RULES`, with random missing cells."""
    rng = random.Random(seed)
    rows = ["smiles," + ",".join(TOX21_ENDPOINTS)]
    for smiles, groups in molecules:
        cells = []
        for name, rule in ENDPOINT_RULES.items():
            cells.append("" if rng.random() < missing_rate else str(int(rule(set(groups)))))
        rows.append(smiles + "," + ",".join(cells))
    return "\n".join(rows) + "\n"


# Decorations that exercise every tokenizer production.
_BRACKETS = ["[C@@H]", "[C@H]", "[NH3+]", "[O-]", "[2H]", "[Se]", "[Fe+2]", "[13C]", "[N@+]", "[Si]"]
_SALTS = [".[Na+]", ".[Cl-]", ".[K+]", ".O"]


def tokenizer_corpus(n: int = 1000, seed: int = 11) -> list[str]:
    """Varied SMILES strings: bracket atoms, Cl/Br, %nn closures, stereo bonds and salts."""
    rng = random.Random(seed)
    out: list[str] = []
    seen: set[str] = set()
    while len(out) < n:
        core, _ = random_molecule(rng, 1, 4)
        pick = rng.random()
        if pick < 0.2:
            core = f"{rng.choice(_BRACKETS)}({core})C"
        elif pick < 0.35:
            d = rng.randint(10, 99)
            core = f"C%{d}CC({core})CCC%{d}"
        elif pick < 0.5:
            a, b = rng.choice(["/", "\\"]), rng.choice(["/", "\\"])
            core = f"F{a}C=C{b}{core}"
        elif pick < 0.6:
            core = f"c1cc[nH]c1{core}"
        elif pick < 0.7:
            core = f"{core}C#N"
        elif pick < 0.75:
            core = f"C1=CC=C1{core}"
        if rng.random() < 0.15:
            core += rng.choice(_SALTS)
        if rng.random() < 0.05:
            core = "*" + core
        if core not in seen:
            seen.add(core)
            out.append(core)
    return out


# -- bundled fixture files --------------------------------------------------

ONTOLOGY_SEED = 101
TOXICITY_SEED = 202
ONTOLOGY_MOLECULES = 1200
TOXICITY_MOLECULES = 400


def generate_fixtures(out_dir: str | Path) -> dict[str, Path]:
    """(Re)write every bundled fixture into ``out_dir``; output is fully determined by the constants above."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    onto_mols = unique_molecules(ONTOLOGY_MOLECULES, ONTOLOGY_SEED)
    obo_text = ontology_obo(onto_mols)
    paths["toy.obo"] = out / "toy.obo"
    paths["toy.obo"].write_text(obo_text, encoding="utf-8")

    tox_mols = unique_molecules(TOXICITY_MOLECULES, TOXICITY_SEED, exclude={s for s, _ in onto_mols})
    paths["toy_tox21.csv"] = out / "toy_tox21.csv"
    paths["toy_tox21.csv"].write_text(toxicity_csv(tox_mols, TOXICITY_SEED), encoding="utf-8")

    paths["toy_corpus.smi"] = out / "toy_corpus.smi"
    corpus = [s for s, _ in onto_mols] + [s for s, _ in tox_mols]
    paths["toy_corpus.smi"].write_text("\n".join(corpus) + "\n", encoding="utf-8")

    paths["tokenizer_corpus.smi"] = out / "tokenizer_corpus.smi"
    paths["tokenizer_corpus.smi"].write_text("\n".join(tokenizer_corpus()) + "\n", encoding="utf-8")

    small_mols = unique_molecules(32, 303)
    graph = parse_obo(ontology_obo(small_mols), root=ROOT)
    space = select_label_classes(graph, 4, ROOT)
    paths["toy_ontology_32.tsv"] = out / "toy_ontology_32.tsv"
    write_labeled_set(build_ontology_dataset(graph, space), paths["toy_ontology_32.tsv"])
    return paths


def fixture_path(name: str) -> Path:
    """Path of a bundled fixture file (see :func:`generate_fixtures`)."""
    return Path(str(resources.files("ontotrain") / "data" / name))

