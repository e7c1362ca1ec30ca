"""Pipeline parameters and config-file loading."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

CONFIG_ENV_VAR = "FAZ3D_CONFIG"

# native axial pitch of the scanner in micrometres
AXIAL_NATIVE_UM = 3.87


@dataclass(frozen=True)
class FrangiParams:
    scale_range: tuple[float, float] = (2.0, 3.0)
    scale_ratio: float = 1.0
    beta_one: float = 0.6
    beta_two: float = 22.0

    @property
    def sigmas(self) -> tuple[float, ...]:
        # lo:ratio:hi, endpoints inclusive
        lo, hi = self.scale_range
        n = int(math.floor((hi - lo) / self.scale_ratio + 1e-9)) + 1
        return tuple(lo + i * self.scale_ratio for i in range(n))


@dataclass(frozen=True)
class PipelineConfig:
    sigma_volume: float = 3.0
    median_window: int = 15
    outlier_mad_factor: float = 3.0
    outlier_floor_vox: float = 2.0
    frangi: FrangiParams = field(default_factory=FrangiParams)
    # en face images are min-max scaled to this range before vesselness
    frangi_intensity_range: float = 255.0
    otsu_bins: int = 256
    # raise on a constant Otsu input instead of returning an empty mask
    otsu_strict: bool = False
    sigma_radius: float = 1.0
    min_component_px: int = 5
    faz_dilation_radius: int = 15
    offset_ipl_minus_um: float = -17.0
    offset_ipl_plus_um: float = 22.0
    axial_native_um: float = AXIAL_NATIVE_UM

    def __post_init__(self):
        positive = {
            "sigma_volume": self.sigma_volume,
            "median_window": self.median_window,
            "sigma_radius": self.sigma_radius,
            "faz_dilation_radius": self.faz_dilation_radius,
            "axial_native_um": self.axial_native_um,
            "otsu_bins": self.otsu_bins,
            "frangi.scale_ratio": self.frangi.scale_ratio,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")
        lo, hi = self.frangi.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"frangi.scale_range must be positive and nondecreasing, got {self.frangi.scale_range}")
        if self.min_component_px < 0:
            raise ValueError("min_component_px must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        frangi = data.pop("frangi", None)
        if frangi is not None:
            if not isinstance(frangi, FrangiParams):
                frangi = dict(frangi)
                bad = set(frangi) - {f.name for f in dataclasses.fields(FrangiParams)}
                if bad:
                    raise ValueError(f"unknown frangi keys: {sorted(bad)}")
                if "scale_range" in frangi:
                    frangi["scale_range"] = tuple(float(v) for v in frangi["scale_range"])
                frangi = FrangiParams(**frangi)
            data["frangi"] = frangi
        return cls(**data)


def load_config(path: str | os.PathLike | None = None) -> PipelineConfig:
    """Load a config file (JSON or YAML); keys override the defaults.

    With no path, falls back to ``$FAZ3D_CONFIG`` and then to the defaults.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
        if not path:
            return PipelineConfig()
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        data = json.loads(text)
    else:
        data = yaml.safe_load(text)
    return PipelineConfig.from_dict(data or {})
