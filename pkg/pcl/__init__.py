"""Pairwise Continual - task-agnostic online continual learning engine."""

__version__ = "0.1.0"
