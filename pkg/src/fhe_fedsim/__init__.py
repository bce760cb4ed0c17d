"""Federated training of small hybrid classical/quantum models with
optional CKKS-encrypted parameter aggregation, instrumented to measure
the time, memory, and traffic the encryption adds."""

__version__ = "0.1.0"

from .backend import active_backend

__all__ = ["active_backend", "__version__"]
