"""tabscribe: end-to-end transcription of handwritten numeric codes in scanned tables."""

__version__ = "0.1.0"
