"""YAML configuration with packaged presets.

``load_config(None)`` returns the full-scale defaults. A preset name
(``"default"``, ``"desk"``) or a path to a YAML file is deep-merged over the
defaults, so a user file only needs the keys it changes.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .dynamics import VehicleParams

PRESETS = ("default", "desk")
SCENARIO_KINDS = ("braking", "approach", "descent")


class ConfigError(ValueError):
    pass


def _read_preset(name: str) -> dict:
    text = resources.files("lunarevents.configs").joinpath(f"{name}.yaml").read_text()
    return yaml.safe_load(text) or {}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _interval(value, name: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a pair of numbers, got {value!r}") from None
    return a, b


@dataclass(frozen=True)
class ScenarioSpec:
    """Sampling ranges for one landing scenario.

    ``descent_range`` and ``initial_pitch_deg`` keep the high-to-low order of
    the scenario table; ``sun`` is (range m, azimuth deg, altitude deg).
    ``glide_slope_deg`` is the depression angle of the line from the start
    point to the target; ``None`` ("auto" in YAML) places the start so that
    a constant deceleration to rest needs exactly the initial pitch as thrust
    tilt (requires a fixed ``tf``); ``initial_speed`` is the speed along that line.
    ``tf`` fixes the final time; when ``None`` it follows
    ``kappa * range / v_ref``.
    """

    kind: str
    descent_range: tuple[float, float]
    initial_pitch_deg: tuple[float, float]
    sun: tuple[float, float, float]
    glide_slope_deg: tuple[float, float] | None = (90.0, 90.0)
    initial_speed: tuple[float, float] = (10.0, 20.0)
    initial_speed_ratio: tuple[float, float] | None = None
    kappa: float = 1.0
    v_ref: float = 20.0
    tf: float | None = None
    target_site: tuple[float, float, float] = (0.0, 0.0, 0.0)
    fps: float = 100.0
    seed: int = 0

    def __post_init__(self):
        hi, lo = self.descent_range
        if not (hi > lo > 0):
            raise ConfigError(f"{self.kind}: descent_range must be ordered high to low and positive, got {self.descent_range}")
        a, b = self.initial_pitch_deg
        if not (abs(a) < 90 and abs(b) < 90):
            raise ConfigError(f"{self.kind}: initial pitch must stay inside (-90, 90) deg")
        if not self.fps > 0:
            raise ConfigError("fps must be positive")
        if self.glide_slope_deg is None:
            if self.tf is None:
                raise ConfigError(f"{self.kind}: automatic glide slope needs a fixed tf")
        elif not (0 < min(self.glide_slope_deg) and max(self.glide_slope_deg) <= 90):
            raise ConfigError(f"{self.kind}: glide slope must lie in (0, 90] deg")
        if min(self.initial_speed) < 0:
            raise ConfigError(f"{self.kind}: initial speed must be non-negative")
        if self.tf is not None and not self.tf > 0:
            raise ConfigError(f"{self.kind}: tf must be positive")
        if not (self.kappa > 0 and self.v_ref > 0):
            raise ConfigError(f"{self.kind}: kappa and v_ref must be positive")

    @property
    def sun_direction(self) -> np.ndarray:
        """Unit vector toward the sun in the landing-site frame (z down)."""
        _, az, alt = self.sun
        az, alt = np.deg2rad(az), np.deg2rad(alt)
        return np.array([np.cos(alt) * np.cos(az), np.cos(alt) * np.sin(az), -np.sin(alt)])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "descent_range": list(self.descent_range),
            "initial_pitch_deg": list(self.initial_pitch_deg),
            "sun": list(self.sun),
            "glide_slope_deg": None if self.glide_slope_deg is None else list(self.glide_slope_deg),
            "initial_speed": list(self.initial_speed),
            "initial_speed_ratio": None if self.initial_speed_ratio is None else list(self.initial_speed_ratio),
            "kappa": self.kappa,
            "v_ref": self.v_ref,
            "tf": self.tf,
            "target_site": list(self.target_site),
            "fps": self.fps,
            "seed": self.seed,
        }


@dataclass
class Config:
    raw: dict = field(repr=False)
    vehicle: VehicleParams
    scenarios: dict[str, ScenarioSpec]

    @property
    def trajopt(self) -> dict:
        return self.raw["trajopt"]

    @property
    def camera(self) -> dict:
        return self.raw["camera"]

    @property
    def terrain(self) -> dict:
        return self.raw["terrain"]

    @property
    def emulator(self) -> dict:
        return self.raw["emulator"]

    @property
    def dataset(self) -> dict:
        return self.raw["dataset"]

    def scenario(self, kind: str) -> ScenarioSpec:
        try:
            return self.scenarios[kind]
        except KeyError:
            raise ConfigError(f"unknown scenario {kind!r}; have {sorted(self.scenarios)}") from None

    def with_overrides(self, width=None, height=None, fps=None, shadows=None, noise=None, surface_model=None) -> "Config":
        raw = copy.deepcopy(self.raw)
        if width is not None:
            raw["camera"]["width"] = int(width)
        if height is not None:
            raw["camera"]["height"] = int(height)
        if fps is not None:
            raw["camera"]["fps"] = float(fps)
        if shadows is not None:
            raw["terrain"]["shadows"] = bool(shadows)
        if surface_model is not None:
            raw["dataset"]["surface_model"] = surface_model
        if noise is False:
            for key in ("f_shot", "f_leak", "hot_pixel_fraction"):
                raw["emulator"][key] = 0.0
        return from_dict(raw)


def from_dict(raw: dict) -> Config:
    for section in ("vehicle", "trajopt", "camera", "terrain", "emulator", "dataset", "scenarios"):
        if not isinstance(raw.get(section), dict):
            raise ConfigError(f"config section {section!r} missing or not a mapping")
    cam = raw["camera"]
    W, H, fps = int(cam["width"]), int(cam["height"]), float(cam["fps"])
    if not (0 < W <= 4096 and 0 < H <= 4096):
        raise ConfigError(f"image size {W}x{H} outside 1..4096")
    if not 0 < fps <= 1000:
        raise ConfigError(f"fps {fps} outside (0, 1000]")
    if not 0 < float(cam["fov_deg"]) < 180:
        raise ConfigError("fov_deg must lie in (0, 180)")
    if raw["dataset"].get("surface_model", "spherical") not in ("planar", "spherical", "dem"):
        raise ConfigError("surface_model must be planar, spherical or dem")
    try:
        vehicle = VehicleParams(**raw["vehicle"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"vehicle: {exc}") from None
    site = tuple(float(v) for v in raw.get("target_site", (0.0, 0.0, 0.0)))
    scenarios = {}
    for kind, block in raw["scenarios"].items():
        try:
            scenarios[kind] = ScenarioSpec(
                kind=kind,
                descent_range=_interval(block["descent_range"], f"{kind}.descent_range"),
                initial_pitch_deg=_interval(block["initial_pitch_deg"], f"{kind}.initial_pitch_deg"),
                sun=tuple(float(v) for v in block["sun"]),
                glide_slope_deg=(
                    None
                    if block.get("glide_slope_deg") == "auto"
                    else _interval(block.get("glide_slope_deg", (90.0, 90.0)), f"{kind}.glide_slope_deg")
                ),
                initial_speed=_interval(block.get("initial_speed", (10.0, 20.0)), f"{kind}.initial_speed"),
                initial_speed_ratio=(
                    None
                    if block.get("initial_speed_ratio") is None
                    else _interval(block["initial_speed_ratio"], f"{kind}.initial_speed_ratio")
                ),
                kappa=float(block.get("kappa", 1.0)),
                v_ref=float(block.get("v_ref", 20.0)),
                tf=None if block.get("tf") is None else float(block["tf"]),
                target_site=site,
                fps=fps,
            )
        except KeyError as exc:
            raise ConfigError(f"scenario {kind!r} is missing {exc}") from None
    return Config(raw=raw, vehicle=vehicle, scenarios=scenarios)


def load_config(source: str | Path | None = None) -> Config:
    """Load a preset name or YAML path merged over the defaults."""
    base = _read_preset("default")
    if source is None or str(source) == "default":
        return from_dict(base)
    if str(source) in PRESETS:
        return from_dict(deep_merge(base, _read_preset(str(source))))
    path = Path(source)
    try:
        user = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    preset = user.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        base = deep_merge(base, _read_preset(preset))
    return from_dict(deep_merge(base, user))
