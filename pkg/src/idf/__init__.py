"""Illumination distillation framework for night-time person re-identification, at desk scale."""

__version__ = "0.1.0"
