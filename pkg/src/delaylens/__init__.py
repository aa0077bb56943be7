"""Spatial, temporal and model-based analysis of crime reporting delays.

Subpackages and modules
-----------------------
ingest      parse city extracts, delays and delay labels, feature tables
geo         contiguity weights, point-in-polygon, population-weighted aggregation
moran       local Moran's I with conditional-permutation pseudo p-values
temporal    calendar features and median-delay profiles
ensembles   random forest / gradient boosting (compiled tree core)
gp          exact RBF Gaussian process regression and classification
evaluation  metrics and cross-validation harness
pipeline    the aggregated and disaggregated experiments
cli         the ``delaylens`` command
"""

__version__ = "0.1.0"

from .ensembles import BACKEND  # noqa: E402,F401
