"""Defines the training, selection, diagnostics and experiment engine."""
