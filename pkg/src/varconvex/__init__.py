"""Numerical certificates for variational convexity of extended-real functions."""

from .banach import PNormSpace, duality_map, duality_map_inverse
from .catalog import catalog_get, catalog_names
from .certificate import Certificate, Verdict
from .certify import CertifyConfig, equivalence_matrix
from .core import Box, ExtReal, TestFunction
from .moreau import UNBOUNDED, envelope, prox
from .subgradient import AttentiveWindow, is_regular_subgradient, sample_graph

__all__ = [
    "AttentiveWindow", "Box", "Certificate", "CertifyConfig", "ExtReal", "PNormSpace",
    "TestFunction", "UNBOUNDED", "Verdict", "catalog_get", "catalog_names", "duality_map",
    "duality_map_inverse", "envelope", "equivalence_matrix", "is_regular_subgradient", "prox",
    "sample_graph",
]
__version__ = "0.1.0"
