"""Bus-mediated quantum state transfer between bosonic modules."""

__version__ = "0.1.0"
