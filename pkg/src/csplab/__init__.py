"""csplab: a desk-scale lab for characteristic-specific partial fine-tuning
of a toy codec language model over a synthetic token domain."""

__version__ = "0.1.0"
