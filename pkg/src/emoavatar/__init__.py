"""Emotion-conditioned geometry and appearance modulation for blendshape head avatars."""

__version__ = "0.1.0"
