"""Flat key=value run configuration.

Every tunable default of the toolkit appears here under a dotted key, so
a single small text file can pin a whole run.  Lines are `key = value`;
blank lines and lines starting with `#` are ignored.  Unknown keys are
rejected, which catches typos early.  Command-line flags override file
values, which override the built-in defaults.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Optional, Union

from .errors import ConfigError
from .forest import TrainConfig
from .patching import SamplerConfig
from .segmentation import DetectionConfig
from .synth import SynthSpec

DEFAULTS: dict[str, str] = {
    "seed": "0",
    "balance.window": "100",
    "balance.stride": "50",
    "detect.blur_sigma": "2.0",
    "detect.min_area": "20",
    "detect.min_separation": "8.0",
    "rings.thickness": "10.0",
    "rings.bg_threshold": "220",
    "patches.candidates": "1000",
    "patches.fg_threshold": "230",
    "patches.blur_sigma": "2.0",
    "patches.min_fg_fraction": "0.8",
    "patches.max_overlap_fraction": "0.5",
    "patches.min_entropy": "4.6",
    "patches.entropy_base": "e",
    "patches.side": "227",
    "forest.n_trees": "50",
    "forest.mtry": "sqrt",
    "forest.min_node_size": "1",
    "kl.epsilon": "1e-10",
    "synth.patients_per_class": "8",
    "synth.spots_per_patient": "3",
    "synth.spot_size": "750",
    "synth.nuclei_lo": "70",
    "synth.nuclei_hi": "100",
    "synth.nucleus_radius": "8",
    "synth.background": "247,245,243",
}


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    """Parse key=value lines; unknown keys and malformed lines raise."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{origin} line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"{origin} line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{origin} line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


class RunConfig:
    """Resolved configuration with typed accessors and builders."""

    def __init__(self, overrides: Optional[Mapping[str, str]] = None):
        self.values = dict(DEFAULTS)
        if overrides:
            for key, value in overrides.items():
                if key not in DEFAULTS:
                    raise ConfigError(f"unknown config key {key!r}")
                self.values[key] = value

    @classmethod
    def load(cls, path: Union[str, Path, None]) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        return cls(parse_config_text(text, origin=str(path)))

    def _int(self, key: str) -> int:
        raw = self.values[key]
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None

    def _float(self, key: str) -> float:
        raw = self.values[key]
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None

    def _log_base(self, key: str) -> float:
        raw = self.values[key].strip().lower()
        if raw == "e":
            return math.e
        try:
            base = float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected 'e' or a number, got {raw!r}") from None
        if base <= 1.0:
            raise ConfigError(f"{key}: log base must exceed 1")
        return base

    def seed(self) -> int:
        return self._int("seed")

    def balance_window(self) -> int:
        return self._int("balance.window")

    def balance_stride(self) -> int:
        return self._int("balance.stride")

    def ring_thickness(self) -> float:
        return self._float("rings.thickness")

    def ring_bg_threshold(self) -> int:
        return self._int("rings.bg_threshold")

    def kl_epsilon(self) -> float:
        eps = self._float("kl.epsilon")
        if eps <= 0:
            raise ConfigError("kl.epsilon must be positive")
        return eps

    def detection_config(self) -> DetectionConfig:
        return DetectionConfig(
            blur_sigma=self._float("detect.blur_sigma"),
            min_area=self._int("detect.min_area"),
            min_separation=self._float("detect.min_separation"),
        )

    def sampler_config(self, seed: int) -> SamplerConfig:
        return SamplerConfig(
            candidates=self._int("patches.candidates"),
            fg_threshold=self._int("patches.fg_threshold"),
            blur_sigma=self._float("patches.blur_sigma"),
            min_fg_fraction=self._float("patches.min_fg_fraction"),
            max_overlap_fraction=self._float("patches.max_overlap_fraction"),
            min_entropy=self._float("patches.min_entropy"),
            entropy_base=self._log_base("patches.entropy_base"),
            seed=seed,
            side=self._int("patches.side"),
        )

    def train_config(self, seed: int, n_jobs: int = 1, n_trees: Optional[int] = None) -> TrainConfig:
        raw_mtry = self.values["forest.mtry"].strip().lower()
        if raw_mtry == "sqrt":
            mtry = None
        else:
            try:
                mtry = int(raw_mtry)
            except ValueError:
                raise ConfigError(
                    f"forest.mtry: expected 'sqrt' or an integer, got {raw_mtry!r}"
                ) from None
        return TrainConfig(
            n_trees=n_trees if n_trees is not None else self._int("forest.n_trees"),
            mtry=mtry,
            min_node_size=self._int("forest.min_node_size"),
            seed=seed,
            n_jobs=n_jobs,
        )

    def synth_spec(self, seed: int) -> SynthSpec:
        raw_bg = self.values["synth.background"]
        parts = [p.strip() for p in raw_bg.split(",")]
        if len(parts) != 3:
            raise ConfigError("synth.background: expected three comma-separated integers")
        try:
            background = tuple(int(p) for p in parts)
        except ValueError:
            raise ConfigError(f"synth.background: bad value {raw_bg!r}") from None
        return SynthSpec(
            patients_per_class=self._int("synth.patients_per_class"),
            spots_per_patient=self._int("synth.spots_per_patient"),
            spot_size=self._int("synth.spot_size"),
            nuclei_range=(self._int("synth.nuclei_lo"), self._int("synth.nuclei_hi")),
            nucleus_radius=self._int("synth.nucleus_radius"),
            background=background,
            seed=seed,
        )
