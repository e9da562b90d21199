"""Mosquito-vector surveillance from specimen photos.

Pipeline: decode -> resize -> non-local-means denoise -> normalize ->
backbone features -> classifier heads (genus, species-within-genus,
direct species), with activation-map explanations, set-based evaluation
and an HTTP review service for taxonomists.
"""

__version__ = "0.1.0"
