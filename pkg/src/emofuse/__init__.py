"""Cross-attended multimodal emotion recognition with adaptive fusion."""

__version__ = "0.1.0"
