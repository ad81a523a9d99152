"""diarlab: audio-visual speaker-diarization pseudo-labeling pipeline."""

__version__ = "0.1.0"
