"""Neural inverse linear blend skinning for 2D occupancy queries.

Articulated shapes are stored once as a rest-pose occupancy grid. A posed
query point is mapped back to rest space with blend weights predicted by a
small pose-conditioned MLP, and a ghost channel lets the network mark points
that belong to no bone.
"""

from .errors import (
    ConfigError,
    DivergedTraining,
    IndexOutOfRange,
    InvalidResolution,
    IoFailure,
    NilbsError,
    NonFiniteActivation,
    SingularBlend,
    SingularTransform,
)

__version__ = "0.1.0"
