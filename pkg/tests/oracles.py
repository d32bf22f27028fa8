"""Independent brute-force reference implementations used by the tests."""

import math
import random


def auc_all_pairs(scores, labels):
    """Fraction of (positive, negative) pairs ranked correctly, ties count half."""
    import numpy as np

    scores, labels = np.asarray(scores, dtype=np.float64), np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    if not len(pos) or not len(neg):
        return None
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (greater + 0.5 * ties) / (len(pos) * len(neg))


def micro_f1_loops(scores, labels, present, threshold=0.5):
    tp = fp = fn = 0
    for i in range(len(scores)):
        for j in range(len(scores[i])):
            if not present[i][j]:
                continue
            pred = scores[i][j] >= threshold
            if pred and labels[i][j]:
                tp += 1
            elif pred:
                fp += 1
            elif labels[i][j]:
                fn += 1
    return 0.0 if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)


def random_dag(rng: random.Random, n_max: int = 12):
    """Node names n0..n{k-1}; edges only point to lower indices, so the graph is acyclic."""
    n = rng.randint(1, n_max)
    parents = {}
    for i in range(n):
        k = rng.randint(0, min(i, 3))
        parents[f"n{i}"] = sorted(rng.sample([f"n{j}" for j in range(i)], k))
    return parents


def ancestors_by_paths(parents, node):
    """Every node lying on some upward path from ``node`` (including itself)."""
    found = set()

    def walk(path):
        found.update(path)
        for p in parents[path[-1]]:
            walk(path + [p])

    walk([node])
    return found


def dag_to_obo(parents, smiles=None):
    smiles = smiles or {}
    lines = []
    for cid, ps in parents.items():
        lines += ["[Term]", f"id: {cid}"]
        lines += [f"is_a: {p}" for p in ps]
        if cid in smiles:
            lines.append(f'property_value: http://purl.obolibrary.org/obo/chebi/smiles "{smiles[cid]}" xsd:string')
        lines.append("")
    return "\n".join(lines)


def normalized_entropy_row(p):
    n = len(p)
    return -sum(x * math.log(x) for x in p if x > 0) / math.log(n)
