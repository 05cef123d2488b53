"""Generative flow network toolkit on numpy: environments, training objectives,
exact oracles and a reproducible experiment runner."""

__version__ = "0.1.0"
