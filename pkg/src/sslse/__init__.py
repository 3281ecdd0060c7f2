"""Cross-domain SSL + spectrogram speech-enhancement laboratory."""

__version__ = "0.1.0"
