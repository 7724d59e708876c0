"""Desk-scale BERT-style pre-training and evaluation pipeline."""

__version__ = "0.1.0"
