"""Discrete calculus and stability tests for exponential subelliptic harmonic maps on framed tori."""

__version__ = "0.1.0"
