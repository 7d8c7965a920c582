"""Geometry and evaluation toolkit for cross-device omnidirectional visual localization."""

from .cameras import DoubleSphereModel, EquirectModel, PinholeModel, preset, project, unproject
from .geometry import RigidTransform

__all__ = [
    "DoubleSphereModel",
    "EquirectModel",
    "PinholeModel",
    "RigidTransform",
    "preset",
    "project",
    "unproject",
]
__version__ = "0.1.0"
