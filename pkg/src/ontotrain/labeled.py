"""Multi-label rows with a presence mask, shared by the ontology and toxicity stages."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .smiles_tok import TokenizeError, TokenSequence, tokenize


@dataclass
class LabeledSet:
    """Token sequences with a ``labels``/``present`` matrix pair.

    ``labels[i, j]`` is only meaningful where ``present[i, j] == 1``; absent
    cells hold 0 as a placeholder.
    """

    sequences: list[TokenSequence]
    labels: np.ndarray
    present: np.ndarray
    label_names: list[str]
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(len(self.sequences), len(self.label_names))
        self.present = np.asarray(self.present, dtype=np.uint8).reshape(self.labels.shape)
        if np.any(self.labels[self.present == 0]):
            self.labels = np.where(self.present == 1, self.labels, 0).astype(np.uint8)

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def n_labels(self) -> int:
        return len(self.label_names)

    @property
    def smiles(self) -> list[str]:
        return [s.source for s in self.sequences]

    def subset(self, indices: Sequence[int]) -> "LabeledSet":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledSet(
            [self.sequences[i] for i in idx],
            self.labels[idx],
            self.present[idx],
            list(self.label_names),
        )


def write_labeled_set(data: LabeledSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(data.label_names) + "\n")
        for seq, lab, pres in zip(data.sequences, data.labels, data.present):
            fh.write(f"{seq.source}\t{''.join(map(str, lab))}\t{''.join(map(str, pres))}\n")


def read_labeled_set(path: str | Path) -> LabeledSet:
    """Read a labeled-set file; rows whose SMILES does not tokenize are skipped and recorded."""
    sequences, labels, present, skipped = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        names = header.split("\t") if header else []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or len(parts[1]) != len(names) or len(parts[2]) != len(names):
                raise ValueError(f"{path}:{lineno}: expected SMILES, {len(names)} labels and {len(names)} mask bits")
            try:
                seq = tokenize(parts[0])
            except TokenizeError as err:
                skipped.append((parts[0], str(err)))
                continue
            sequences.append(seq)
            labels.append([int(c) for c in parts[1]])
            present.append([int(c) for c in parts[2]])
    return LabeledSet(sequences, np.array(labels).reshape(-1, len(names)), np.array(present).reshape(-1, len(names)), names, skipped)
