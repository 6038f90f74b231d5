"""Critical points and critical values of band-limited Gaussian random fields.

Submodules: ``weights`` (spectral weights and their constants), ``rmt`` (GOE
determinants and eigenvalue densities), ``gaussian_core`` (conditioning of
Gaussian vectors), ``limit_law`` (limiting critical-value laws and count
constants), ``fields`` (random fields on tori and the sphere), ``geometry``
(recovered metric and curvature) and ``cli``.
"""

from . import gaussian_core, geometry, limit_law, rmt, weights
from . import fields
from .weights import Weight, shape_params

__all__ = ["Weight", "shape_params", "weights", "rmt", "gaussian_core", "limit_law", "fields", "geometry"]
__version__ = "0.1.0"
