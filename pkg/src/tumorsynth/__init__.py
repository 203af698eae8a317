"""tumorsynth: synthetic liver tumors for abdominal CT.

Plants procedurally generated tumors (shape, texture, mass effect,
cirrhosis, satellites) into healthy CT volumes, producing paired
image/label training data, plus segmentation metrics and a visual
discrimination test service.
"""

__version__ = "0.1.0"

from .grids import BBox, Component, GridError, Mask3, SoftMask3, Volume3
from .kernels import connected_components, erode, gaussian_blur
from .nifti import NiftiError, load_nifti, save_nifti

__all__ = [
    "__version__",
    "BBox", "Component", "GridError", "Mask3", "SoftMask3", "Volume3",
    "connected_components", "erode", "gaussian_blur",
    "NiftiError", "load_nifti", "save_nifti",
]
