"""Desk-scale toolkit for building and querying a four-layer e-commerce concept net.

Layers: taxonomy classes, primitive concepts, e-commerce concepts, items.
Construction pipelines: vocabulary mining (CRF tagging), hypernym discovery
(patterns + bilinear projection scoring, optionally driven by active
learning), concept generation and classification, concept tagging, and
concept-item semantic matching.
"""

__version__ = "0.1.0"
