"""Decision-boundary geometry of classifiers and universal perturbations."""

from .model import Classifier, PairFunction, logits, predict
from .spectral import Subspace, principal_angles, top_eigenpairs
from .geometry import minimal_perturbation, normal_curvature, cross_section_map
from .universal import build_curvature_subspace, build_normal_subspace, fooling_rate, sample_universal

__version__ = "0.1.0"
