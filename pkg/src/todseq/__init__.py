"""Task-oriented dialogue as a single causal language-modeling sequence."""

__version__ = "0.1.0"
