"""Hybrid topo-metric map navigation at desk scale.

A sparse topological map handles long-horizon planning while a dense
egocentric bird's-eye-view grid handles short-range reasoning.  The two are
fused by a small cross-modal transformer stack trained with masked-word,
action-prediction, and masked-semantics objectives on procedurally generated
indoor worlds.
"""

from .kernels import kernel_backend

__version__ = "0.1.0"

__all__ = ["__version__", "kernel_backend"]
