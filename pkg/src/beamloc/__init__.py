"""Beam-domain fingerprint positioning with an attention network and uncertainty scores."""

__version__ = "0.1.0"
