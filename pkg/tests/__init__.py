"""Test suite for Pairwise Continual."""
