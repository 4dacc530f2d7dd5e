"""Run configuration: a strict JSON schema with presets.

Unknown keys are rejected at every level and validation errors name the
offending key path (``sampler.gamma``).
"""
from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .generator import GeneratorConfig
from .imaging import FanBeamGeometry
from .sampler import SamplerConfig

__all__ = [
    "ConfigError",
    "GeneratorBlock",
    "TransformBlock",
    "FourierBlock",
    "FanBeamBlock",
    "TargetBlock",
    "MeasurementBlock",
    "SamplerBlock",
    "CalibrationBlock",
    "AnalysisBlock",
    "ValidateBlock",
    "RunConfig",
    "PRESETS",
    "parse_config",
    "config_from_dict",
    "config_schema",
    "deep_merge",
]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeneratorBlock(_Strict):
    k: int = Field(64, ge=2)
    L: int = Field(8, ge=1)
    channels: int = Field(16, ge=1)
    mapping_depth: int = Field(4, ge=1)
    seed: int = Field(0, ge=0)
    weights_path: Optional[str] = None

    def generator_config(self, slope: float) -> GeneratorConfig:
        return GeneratorConfig(self.k, self.L, self.channels, self.mapping_depth, slope)


class TransformBlock(_Strict):
    slope: float = Field(0.2, gt=0.0, lt=1.0)
    n_samples: int = Field(20_000, ge=10_000)
    seed: int = Field(0, ge=0)


class FourierBlock(_Strict):
    R: float = Field(2.0, ge=1.0)
    center_fraction: float = Field(0.04, ge=0.0, le=1.0)
    sigma: float = Field(0.05, gt=0.0)
    mask_seed: int = Field(0, ge=0)


class FanBeamBlock(_Strict):
    pixel_mm: float = Field(0.82, gt=0.0)
    source_to_iso_mm: float = Field(60.0, gt=0.0)
    iso_to_detector_mm: float = Field(40.0, gt=0.0)
    n_detectors: int = Field(64, ge=1)
    detector_mm: float = Field(1.4, gt=0.0)
    n_views: int = Field(40, ge=1)
    first_angle_deg: float = 0.0
    last_angle_deg: float = 119.0
    I0: float = Field(1e3, gt=0.0)
    mu_max: float = Field(0.063, gt=0.0)

    def angles_deg(self) -> np.ndarray:
        return np.linspace(self.first_angle_deg, self.last_angle_deg, self.n_views)

    def geometry(self, n_pix: int) -> FanBeamGeometry:
        return FanBeamGeometry(
            n_pix=n_pix, pixel_mm=self.pixel_mm, source_to_iso_mm=self.source_to_iso_mm,
            iso_to_detector_mm=self.iso_to_detector_mm, n_detectors=self.n_detectors,
            detector_mm=self.detector_mm, angles_deg=self.angles_deg(),
        )


class TargetBlock(_Strict):
    kind: Literal["in_range", "ellipses", "checker"] = "in_range"
    seed: int = Field(123, ge=0)


class MeasurementBlock(_Strict):
    variant: Literal["fourier", "fanbeam"] = "fourier"
    fourier: FourierBlock = FourierBlock()
    fanbeam: FanBeamBlock = FanBeamBlock()
    target: TargetBlock = TargetBlock()
    noise_seed: int = Field(1, ge=0)


class SamplerBlock(_Strict):
    variant: Literal["pulse_pp", "pulse", "pulse1", "pulse2"] = "pulse_pp"
    gamma: float = Field(0.001, gt=0.0, lt=1.0)
    lambda_c: float = Field(0.01, ge=0.0)
    lambda_g: float = Field(0.1, ge=0.0)
    lr: float = Field(0.4, gt=0.0)
    n_steps: int = Field(2000, ge=0)
    n_restarts: int = Field(32, ge=1)
    seed: int = Field(0, ge=0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps_adam: float = Field(1e-8, gt=0.0)
    epsilon_override: Optional[float] = Field(None, ge=0.0)

    def sampler_config(self, acceptance: str) -> SamplerConfig:
        return SamplerConfig(
            variant=self.variant, gamma=self.gamma, lambda_c=self.lambda_c,
            lambda_g=self.lambda_g, lr=self.lr, n_steps=self.n_steps,
            n_restarts=self.n_restarts, seed=self.seed, acceptance=acceptance,
            beta1=self.beta1, beta2=self.beta2, eps_adam=self.eps_adam,
        )


class CalibrationBlock(_Strict):
    n_samples: int = Field(100_000, ge=100)
    seed: int = Field(0, ge=0)


class AnalysisBlock(_Strict):
    tol: float = Field(1e-8, gt=0.0, lt=1.0)
    max_iter: int = Field(2000, ge=1)


class ValidateBlock(_Strict):
    n_samples: int = Field(100_000, ge=100)
    seed: int = Field(0, ge=0)
    bins: int = Field(100, ge=2)


class RunConfig(_Strict):
    generator: GeneratorBlock = GeneratorBlock()
    transform: TransformBlock = TransformBlock()
    measurement: MeasurementBlock = MeasurementBlock()
    sampler: SamplerBlock = SamplerBlock()
    calibration: CalibrationBlock = CalibrationBlock()
    analysis: AnalysisBlock = AnalysisBlock()
    validate_latents: ValidateBlock = ValidateBlock()
    output_dir: str = "out"

    @model_validator(mode="after")
    def _cross_check(self):
        g = self.generator
        res = 4 * 2 ** ((g.L - 1) // 2)
        if self.measurement.variant == "fourier":
            ncols = int(round(res / self.measurement.fourier.R))
            if ncols < 1:
                raise ValueError(f"measurement.fourier.R: keeps no columns of a {res}-wide image")
        if self.measurement.variant == "fanbeam":
            fb = self.measurement.fanbeam
            half_diag = res * fb.pixel_mm / np.sqrt(2.0)
            if fb.source_to_iso_mm <= half_diag:
                raise ValueError("measurement.fanbeam.source_to_iso_mm: source lies inside the "
                                 "image support")
            if fb.last_angle_deg < fb.first_angle_deg:
                raise ValueError("measurement.fanbeam.last_angle_deg: must be >= first_angle_deg")
        return self

    @property
    def resolution(self) -> int:
        return 4 * 2 ** ((self.generator.L - 1) // 2)

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")


PRESETS: dict[str, dict] = {
    "mri_toy": {
        "measurement": {
            "variant": "fourier",
            "fourier": {"R": 2.0, "sigma": 0.05},
        },
    },
    "ct_toy": {
        "measurement": {
            "variant": "fanbeam",
            "fanbeam": {"n_views": 40, "first_angle_deg": 0.0, "last_angle_deg": 119.0,
                        "I0": 1e3},
            "target": {"kind": "ellipses"},
        },
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"])
        msg = err["msg"]
        # model-level validators already prefix their message with the key path
        if not path and msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
        lines.append(f"{path}: {msg}" if path else msg)
    return "; ".join(lines)


def config_from_dict(obj: dict, preset: str | None = None) -> RunConfig:
    """Validate a config mapping, optionally layered over a named preset."""
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        obj = deep_merge(PRESETS[preset], obj)
    try:
        return RunConfig.model_validate(obj)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def parse_config(path=None, preset: str | None = None) -> RunConfig:
    """Read a JSON config file (``None`` means all defaults)."""
    obj = {}
    if path is not None:
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(obj, preset)


def config_schema() -> dict:
    return RunConfig.model_json_schema()
