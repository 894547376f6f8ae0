"""Phase unwrapping for structured-light scanning with graph cuts and
diffeomorphism ensembles."""
from .phaseshift import FringeParams, decode, synthesize_fringes, wrap
from .raster import LabelField, ScalarField, load_field, save_field
from .unwrap import UnwrapConfig, UnwrapResult, unwrap_graphcut, unwrap_hierarchical
from .ensemble import EnsembleConfig, default_ensemble, run_ensemble

__version__ = "0.1.0"
