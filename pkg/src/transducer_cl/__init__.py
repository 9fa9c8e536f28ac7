"""Continual learning of a small RNN-T recognizer from synthetic tone-burst speech."""

__version__ = "0.1.0"
