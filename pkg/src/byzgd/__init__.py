"""Byzantine-robust compressed gradient descent simulator."""

__version__ = "0.1.0"
