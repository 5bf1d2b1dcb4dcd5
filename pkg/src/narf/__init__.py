"""Numerics for matrix-valued line transforms in the plane and their inversion."""
from .gauge_field import (
    GaugeField,
    GridSpec,
    MatrixField,
    RayGeometry,
    apply_gauge,
    eval_direction,
    make_phantom,
    random_gauge,
)
from .ray_transport import Sinogram, attenuated_radon, nonabelian_radon

__all__ = [
    "GaugeField",
    "GridSpec",
    "MatrixField",
    "RayGeometry",
    "Sinogram",
    "apply_gauge",
    "attenuated_radon",
    "eval_direction",
    "make_phantom",
    "nonabelian_radon",
    "random_gauge",
]
