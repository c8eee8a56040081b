"""Dynamic per-resource-element MIMO detector selection with a small MLP."""

__version__ = "0.1.0"
