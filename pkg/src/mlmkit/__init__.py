"""Desk-scale toolkit for building and evaluating a French masked language model.

Stages: corpus cleaning, BPE, dynamic MLM masking, a numpy transformer
encoder with analytic gradients, Adam pretraining, classification heads,
word-sense disambiguation and a benchmark harness.
"""

__version__ = "0.1.0"
