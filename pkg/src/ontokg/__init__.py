"""Ontology-aligned knowledge graph construction from text, KG-only
multi-hop question answering, and graph quality metrics."""

__version__ = "0.1.0"
