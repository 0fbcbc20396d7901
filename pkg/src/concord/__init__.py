"""Siamese dual-GRU classifier for (dis)agreement between quote/response posts."""

__version__ = "0.1.0"

LABELS = ("agree", "disagree", "none")
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}
