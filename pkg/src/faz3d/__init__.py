"""3D foveal avascular zone measurement for OCTA volumes."""

from .config import FrangiParams, PipelineConfig, load_config
from .faz import PipelineError, faz_2d, faz_3d, measure, run_pipeline
from .volume_io import (
    EnFaceImage,
    FazMeasurement,
    OctaVolume,
    SurfaceSet,
    load_scan,
    read_measurements,
    save_scan,
    write_measurements,
)

__version__ = "0.1.0"

__all__ = [
    "FrangiParams",
    "PipelineConfig",
    "load_config",
    "PipelineError",
    "faz_2d",
    "faz_3d",
    "measure",
    "run_pipeline",
    "EnFaceImage",
    "FazMeasurement",
    "OctaVolume",
    "SurfaceSet",
    "load_scan",
    "read_measurements",
    "save_scan",
    "write_measurements",
]
