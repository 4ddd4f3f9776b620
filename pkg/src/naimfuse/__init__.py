"""Missing-aware tabular transformer, imaging MLP and late-fusion evaluation."""

__version__ = "0.1.0"
