"""Temporal Shape laboratory: synthetic video data, three spatiotemporal models, cross-domain evaluation."""
__version__ = "0.1.0"
