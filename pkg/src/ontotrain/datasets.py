"""Pretraining corpus and Tox21 loaders, plus seeded train/validation/test splits."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .labeled import LabeledSet
from .smiles_tok import DEFAULT_MAX_LEN, TokenizeError, tokenize

log = logging.getLogger(__name__)

TOX21_ENDPOINTS = (
    "NR-AR",
    "NR-AR-LBD",
    "NR-AhR",
    "NR-Aromatase",
    "NR-ER",
    "NR-ER-LBD",
    "NR-PPAR-gamma",
    "SR-ARE",
    "SR-ATAD5",
    "SR-HSE",
    "SR-MMP",
    "SR-p53",
)

SMILES_ALIASES = ("smiles", "canonical_smiles", "smiles_string")
MISSING_VALUES = {"", "na", "nan", "none", "?"}


class MissingColumn(KeyError):
    def __init__(self, column: str, path: str | Path):
        self.column = column
        super().__init__(f"{path}: missing column {column!r}")


class DegenerateSplit(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.85, 0.075, 0.075)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or not all(0 < f < 1 for f in self.fractions):
            raise ValueError(f"fractions must be three values in (0, 1), got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(self.fractions)}")


def load_pretrain_corpus(path: str | Path) -> Iterator[str]:
    """Yield trimmed, non-empty lines of a one-SMILES-per-line file."""
    count = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                count += 1
                yield line
    log.info("read %d SMILES from %s", count, path)


def _canon(name: str) -> str:
    return name.strip().lower().replace("_", "-")


def _resolve_columns(header: list[str], path) -> tuple[int, list[int]]:
    canon = {_canon(h): i for i, h in enumerate(header)}
    smiles_col = next((canon[a] for a in SMILES_ALIASES if a in canon), None)
    if smiles_col is None:
        raise MissingColumn("smiles", path)
    cols = []
    for name in TOX21_ENDPOINTS:
        if _canon(name) not in canon:
            raise MissingColumn(name, path)
        cols.append(canon[_canon(name)])
    return smiles_col, cols


def _parse_label(cell: str, path, lineno: int) -> tuple[int, int]:
    cell = cell.strip()
    if cell.lower() in MISSING_VALUES:
        return 0, 0
    try:
        value = float(cell)
    except ValueError:
        raise ValueError(f"{path}:{lineno}: bad label {cell!r}") from None
    if value not in (0.0, 1.0):
        raise ValueError(f"{path}:{lineno}: label must be 0 or 1, got {cell!r}")
    return int(value), 1


def load_tox21_csv(path: str | Path, max_len: int = DEFAULT_MAX_LEN) -> LabeledSet:
    """Load a Tox21 table with a SMILES column and the 12 endpoint columns.

    Endpoint columns are matched by name (case and ``_``/``-`` insensitive) and
    reordered to :data:`TOX21_ENDPOINTS`. Empty or ``NA`` cells are missing
    labels. Tab-separated files are accepted when the header contains a tab.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        fh.seek(0)
        reader = csv.reader(fh, delimiter="\t" if "\t" in first else ",")
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn("smiles", path) from None
        smiles_col, cols = _resolve_columns(header, path)
        sequences, labels, present, skipped = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(c.strip() for c in row):
                continue
            smiles = row[smiles_col].strip()
            try:
                seq = tokenize(smiles)
            except TokenizeError as err:
                skipped.append((smiles, str(err)))
                continue
            if len(seq) > max_len - 1:
                skipped.append((smiles, f"{len(seq)} tokens exceeds max_len {max_len}"))
                continue
            lab, pres = zip(*(_parse_label(row[c] if c < len(row) else "", path, lineno) for c in cols))
            sequences.append(seq)
            labels.append(lab)
            present.append(pres)
    if skipped:
        log.warning("%s: skipped %d rows", path, len(skipped))
    n = len(TOX21_ENDPOINTS)
    return LabeledSet(
        sequences,
        np.array(labels, dtype=np.uint8).reshape(-1, n),
        np.array(present, dtype=np.uint8).reshape(-1, n),
        list(TOX21_ENDPOINTS),
        skipped,
    )


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # The epsilon keeps e.g. 40 * 0.075 from flooring to 2 on a rounding wobble.
    n_val = math.floor(n * spec.fractions[1] + 1e-9)
    n_test = math.floor(n * spec.fractions[2] + 1e-9)
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise DegenerateSplit(f"{n} rows cannot be split as {spec.fractions}: sizes {(n_train, n_val, n_test)}")
    order = np.random.default_rng(spec.seed).permutation(n)
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def split(data: LabeledSet, spec: SplitSpec) -> tuple[LabeledSet, LabeledSet, LabeledSet]:
    """Seeded shuffle then contiguous slices; floor-sized validation/test, remainder to train."""
    return tuple(data.subset(idx) for idx in split_indices(len(data), spec))


def write_split_manifest(path: str | Path, parts: dict[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for name, idx in parts.items():
            fh.write(f"{name}\t{' '.join(str(int(i)) for i in idx)}\n")


def load_challenge_sets(
    train_path: str | Path,
    validation_path: str | Path,
    test_path: str | Path,
    max_len: int = DEFAULT_MAX_LEN,
) -> tuple[LabeledSet, LabeledSet, LabeledSet]:
    """Load the three Tox21 challenge files.

    The challenge's "testing" set (used for the leaderboard) is passed as
    ``validation_path`` and the final evaluation set as ``test_path``.
    """
    out = []
    for role, path in (("train", train_path), ("validation", validation_path), ("test", test_path)):
        if not Path(path).is_file():
            raise FileNotFoundError(f"{role} file not found: {path}")
        out.append(load_tox21_csv(path, max_len))
    return tuple(out)
