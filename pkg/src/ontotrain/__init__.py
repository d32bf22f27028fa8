"""Ontology pre-training for SMILES transformers."""

__version__ = "0.1.0"
