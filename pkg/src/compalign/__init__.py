"""Compositional text-to-image alignment evaluation."""
