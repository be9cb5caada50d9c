"""Pocket-conditioned equivariant consistency models over synthetic complexes."""

try:
    from ._core import *  # noqa: F401,F403  (installed wheel layout)
except ImportError:
    from _core import *  # noqa: F401,F403  (in-tree build: _core on PYTHONPATH)

__all__ = [
    "Complex",
    "Model",
    "synthesize_complex",
    "count_clashes",
    "connectivity",
    "canonical_hash",
    "tanimoto_dissimilarity",
    "proxy_pocket_energy",
    "karras_grid",
    "skip_out_coeffs",
    "jsd",
]
