"""Lightweight GAN-based end-to-end TTS with adapter fine-tuning."""

__version__ = "0.1.0"
