"""Published full-scale results, kept for side-by-side comparison with local reports.

These come from training on the complete ChEBI ontology and the real Tox21
sets and cannot be reproduced with the bundled toy fixtures. ``None`` marks
a cell with no reported value.
"""

from __future__ import annotations

from .datasets import TOX21_ENDPOINTS

# (dataset, metric, ontology_pretrained) -> per-endpoint scores in TOX21_ENDPOINTS order
TOX21_TEST_SCORES: dict[tuple[str, str, bool], tuple[float | None, ...]] = {
    ("moleculenet", "f1", True): (0.41, 0.51, 0.53, 0.33, 0.44, 0.37, 0.29, 0.48, 0.14, 0.24, 0.62, 0.39),
    ("moleculenet", "f1", False): (0.52, 0.5, 0.45, 0.15, 0.4, 0.3, None, 0.53, 0.19, 0.22, 0.53, 0.35),
    ("moleculenet", "roc_auc", True): (0.82, 0.85, 0.81, 0.84, 0.74, 0.84, 0.84, 0.8, 0.75, 0.82, 0.9, 0.83),
    ("moleculenet", "roc_auc", False): (0.76, 0.77, 0.82, 0.8, 0.71, 0.76, 0.83, 0.84, 0.74, 0.82, 0.88, 0.8),
    ("challenge", "f1", True): (0.1, 0.05, 0.23, 0.25, 0.16, 0.14, 0.14, 0.37, 0.16, 0.13, 0.48, 0.3),
    ("challenge", "f1", False): (0.14, 0.1, 0.05, 0.04, 0.09, 0.12, None, 0.23, None, 0.09, 0.21, None),
    ("challenge", "roc_auc", True): (0.63, 0.69, 0.8, 0.75, 0.64, 0.66, 0.67, 0.71, 0.65, 0.76, 0.86, 0.82),
    ("challenge", "roc_auc", False): (0.62, 0.67, 0.69, 0.69, 0.62, 0.63, 0.66, 0.69, 0.65, 0.68, 0.82, 0.78),
}

# ROC-AUC of a graph-convolution baseline on the MoleculeNet split.
SSL_GCN_ROC_AUC = (0.80, 0.76, 0.83, 0.73, 0.72, 0.69, 0.76, 0.73, 0.72, 0.78, 0.81, 0.75)

# Mean normalized attention entropy on the test sets: dataset -> (pretrained, baseline)
ATTENTION_ENTROPY = {"challenge": (0.86, 0.90), "moleculenet": (0.79, 0.85)}

# Size of the ontology task built from a full ChEBI release with 100 members per class.
ONTOLOGY_LABEL_CLASSES = 856
ONTOLOGY_ROWS = 129_187


def reference_scores(dataset: str, metric: str, pretrained: bool) -> dict[str, float | None]:
    """Per-endpoint published scores keyed by endpoint name."""
    return dict(zip(TOX21_ENDPOINTS, TOX21_TEST_SCORES[(dataset, metric, pretrained)]))
