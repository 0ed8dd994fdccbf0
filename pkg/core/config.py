"""Run configuration and YAML array-geometry files"""
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .geometry import ArrayGeometry, GeometryError
from .kde import KdeError, KdeParams
from .resolver import MAX_PAIRS
from .tde import WEIGHTINGS, WINDOWS
from .utils import DoaError

logger = logging.getLogger(__name__)

DEFAULT_GEOMETRY = Path(__file__).resolve().parent.parent / "config" / "circular6.yaml"
OUTPUT_FORMATS = ("csv", "json-lines")


class ConfigError(DoaError):
    """Missing or malformed configuration"""
    default_error_type = "invalid_config"


@dataclass(frozen=True)
class RunConfig:
    """Settings for per-frame estimation

    ``speed_of_sound`` and ``orientation_offset`` (degrees) are None when the
    geometry file's values should be used.
    """
    geometry: Optional[str] = None
    frame_len: float = 1.0
    hop: float = 0.2
    kappa: float = 10.0
    bins: int = 512
    speed_of_sound: Optional[float] = None
    output_format: str = "csv"
    weighting: str = "none"
    window: str = "rectangular"
    max_pairs: int = MAX_PAIRS
    workers: int = 4
    orientation_offset: Optional[float] = None
    refine: bool = True

    def validate(self) -> "RunConfig":
        """Raise ConfigError on the first invalid field; returns self"""
        if not self.frame_len > 0 or not self.hop > 0:
            raise ConfigError("frame_len and hop must be positive",
                              details={"frame_len": self.frame_len, "hop": self.hop})
        if self.hop > self.frame_len:
            raise ConfigError("hop must not exceed frame_len",
                              details={"frame_len": self.frame_len, "hop": self.hop})
        if self.speed_of_sound is not None and not self.speed_of_sound > 0:
            raise ConfigError("speed_of_sound must be positive",
                              details={"speed_of_sound": self.speed_of_sound})
        if self.output_format not in OUTPUT_FORMATS:
            raise ConfigError(f"Unknown output format: {self.output_format}",
                              details={"choices": list(OUTPUT_FORMATS)})
        if self.weighting not in WEIGHTINGS or self.window not in WINDOWS:
            raise ConfigError("Unknown weighting or window",
                              details={"weighting": self.weighting, "window": self.window})
        if self.workers < 1 or self.max_pairs < 2:
            raise ConfigError("workers must be >= 1 and max_pairs >= 2",
                              details={"workers": self.workers, "max_pairs": self.max_pairs})
        try:
            self.kde_params()
        except KdeError as e:
            raise ConfigError(str(e), details=e.details)
        return self

    def kde_params(self) -> KdeParams:
        return KdeParams(kappa=self.kappa, bins=self.bins, refine=self.refine)

    def geometry_path(self) -> Path:
        return Path(self.geometry) if self.geometry else DEFAULT_GEOMETRY

    def load_geometry(self) -> ArrayGeometry:
        return load_geometry(self.geometry_path(), self.speed_of_sound, self.orientation_offset)

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        """Build from an argparse namespace; attributes the namespace lacks keep defaults"""
        config = cls()
        fields = {
            "geometry": "geometry", "frame_len": "frame_len", "hop": "hop",
            "kappa": "kappa", "bins": "bins", "speed_of_sound": "speed_of_sound",
            "output_format": "format", "weighting": "weighting", "window": "window",
            "max_pairs": "max_pairs", "workers": "workers",
            "orientation_offset": "orientation_offset",
        }
        updates: Dict[str, Any] = {}
        for field_name, arg_name in fields.items():
            value = getattr(args, arg_name, None)
            if value is not None:
                updates[field_name] = value
        if getattr(args, "no_refine", False):
            updates["refine"] = False
        return replace(config, **updates).validate()


def _microphones(raw, path: Path):
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{path}: 'microphones' must be a non-empty list",
                          details={"path": str(path)})
    entries = []
    for item in raw:
        try:
            mic_id = int(item["id"])
            x, y = (float(v) for v in item["position"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"{path}: malformed microphone entry {item!r}",
                              details={"path": str(path), "reason": str(e)})
        entries.append((mic_id, (x, y)))

    entries.sort(key=lambda entry: entry[0])
    ids = [mic_id for mic_id, _ in entries]
    if ids != list(range(len(entries))):
        raise ConfigError(f"{path}: microphone ids must be unique and contiguous from 0",
                          details={"path": str(path), "ids": ids})
    return tuple(position for _, position in entries)


def load_geometry(path, speed_of_sound: Optional[float] = None,
                  orientation_offset_deg: Optional[float] = None) -> ArrayGeometry:
    """Read an array geometry YAML file

    Microphones are ordered by ``id``, which is also their WAV channel.
    Explicit ``speed_of_sound`` / ``orientation_offset_deg`` arguments take
    precedence over the file.

    Raises:
        ConfigError: ``config_not_found`` or ``invalid_config``
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"Geometry file not found: {path}", error_type="config_not_found",
                          details={"path": str(path)})
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML: {e}", details={"path": str(path)})

    if not isinstance(document, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level",
                          details={"path": str(path)})
    units = document.get("units", "meters")
    if units != "meters":
        raise ConfigError(f"{path}: unsupported units {units!r}; only meters is accepted",
                          details={"path": str(path), "units": units})

    mics = _microphones(document.get("microphones"), path)
    try:
        if speed_of_sound is None:
            speed_of_sound = float(document.get("speed_of_sound", 343.0))
        if orientation_offset_deg is None:
            orientation_offset_deg = float(document.get("orientation_offset_deg", 0.0))
        geometry = ArrayGeometry(mics, speed_of_sound, math.radians(orientation_offset_deg))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}", details={"path": str(path)})
    except GeometryError as e:
        raise ConfigError(f"{path}: {e}", details={"path": str(path), **e.details})

    logger.info("Loaded array geometry", extra={"path": str(path), "mics": geometry.num_mics,
                                                "speed_of_sound": geometry.speed_of_sound})
    return geometry
