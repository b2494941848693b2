"""Partially-supervised RL policies and tree-based adversarial safety certification."""

__version__ = "0.1.0"
