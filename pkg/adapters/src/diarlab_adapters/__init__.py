"""Scorer-protocol (v1) workers wrapping scoring models for the diarlab pipeline."""

__version__ = "0.1.0"
