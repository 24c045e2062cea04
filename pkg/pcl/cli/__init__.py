"""CLI module for Pairwise Continual."""
