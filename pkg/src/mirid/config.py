"""Plain-text run configuration: `key = value` lines, schema-checked.

Unknown keys are rejected. Every command echoes the fully resolved
configuration (defaults filled in) to ``resolved_config.txt`` in its output
directory, in schema order, so runs are self-documenting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import NetArch
from .recon import ReconConfig
from .simulate import (
    AcquisitionSpec,
    DiffusionProtocol,
    Ellipse,
    PhantomScene,
    default_protocol,
    default_scene,
)
from .ssltrain import TrainConfig

# key -> (type, default); order defines the echo layout
SCHEMA: dict[str, tuple[type, object]] = {
    "ny": (int, 64),
    "nx": (int, 64),
    "ncoils": (int, 8),
    "nshots": (int, 2),
    "accel": (int, 3),
    "partial_fourier": (float, 0.75),
    "noise_sigma": (float, 0.0),
    "n_directions": (int, 12),
    "b_value": (float, 1000.0),
    "phantom": (str, "fibers"),
    "lambda1": (float, 0.05),
    "lambda2": (float, 0.05),
    "unroll_count": (int, 10),
    "cg_steps": (int, 10),
    "net_layers": (int, 4),
    "net_hidden": (int, 16),
    "leaky_slope": (float, 0.01),
    "lr": (float, 1e-3),
    "max_epochs": (int, 100),
    "patience": (int, 10),
    "n_g1": (int, 50),
    "ratio_g2": (float, 0.80),
    "ratio_g1": (float, 0.48),
    "w_nrmse": (float, 1.0),
    "w_nmae": (float, 1.0),
    "seed": (int, 0),
    "out_dir": (str, "out"),
    "threads": (int, 1),
}

_ELLIPSE_FIELDS = 12  # cx cy ax ay angle s0 dxx dyy dzz dxy dxz dyz


@dataclass
class RunConfig:
    """Resolved configuration for one pipeline run."""

    values: dict[str, object]
    ellipses: list[list[float]] = field(default_factory=list)

    def __getattr__(self, key):
        if key == "values":  # not yet set during unpickling/copying
            raise AttributeError(key)
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def acquisition_spec(self) -> AcquisitionSpec:
        return AcquisitionSpec(
            ny=self.ny, nx=self.nx, ncoils=self.ncoils, nshots=self.nshots,
            accel=self.accel, pf=self.partial_fourier,
            noise_sigma=self.noise_sigma, seed=self.seed,
        )

    def protocol(self) -> DiffusionProtocol:
        return default_protocol(self.n_directions, self.b_value)

    def scene(self) -> PhantomScene:
        if self.ellipses:
            shapes = []
            for row in self.ellipses:
                cx, cy, ax, ay, angle, s0 = row[:6]
                dxx, dyy, dzz, dxy, dxz, dyz = row[6:]
                tensor = np.array(
                    [[dxx, dxy, dxz], [dxy, dyy, dyz], [dxz, dyz, dzz]]
                )
                shapes.append(Ellipse((cx, cy), (ax, ay), angle, s0, tensor))
            return PhantomScene(shapes)
        if self.phantom == "fibers":
            return default_scene()
        if self.phantom == "disc":
            return PhantomScene(
                [Ellipse((0.0, 0.0), (0.7, 0.7), 0.0, 1.0, 1e-3 * np.eye(3))]
            )
        raise ValueError(f"unknown phantom '{self.phantom}'")

    def recon_config(self, mode: str = "mirid") -> ReconConfig:
        return ReconConfig(
            lambda1=self.lambda1, lambda2=self.lambda2,
            unroll_count=self.unroll_count, cg_steps=self.cg_steps, mode=mode,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, max_epochs=self.max_epochs, patience=self.patience,
            n_g1=self.n_g1, ratio_g2=self.ratio_g2, ratio_g1=self.ratio_g1,
            seed=self.seed, w_nrmse=self.w_nrmse, w_nmae=self.w_nmae,
        )

    def net_arch(self, nshots: int) -> NetArch:
        return NetArch(
            complex_channels=2 * nshots, hidden=self.net_hidden,
            n_layers=self.net_layers, alpha=self.leaky_slope,
        )


def _convert(key: str, kind: type, text: str):
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ValueError(f"config key '{key}': cannot parse '{text}' as {kind.__name__}")


def parse_config(text: str) -> RunConfig:
    """Parse `key = value` lines; '#' starts a comment; unknown keys fail."""
    values = {key: default for key, (_, default) in SCHEMA.items()}
    ellipses: dict[int, list[float]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got '{raw.strip()}'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key.startswith("ellipse."):
            index = int(key.split(".", 1)[1])
            parts = value.split()
            if len(parts) != _ELLIPSE_FIELDS:
                raise ValueError(
                    f"config key '{key}': expected {_ELLIPSE_FIELDS} numbers, got {len(parts)}"
                )
            ellipses[index] = [float(p) for p in parts]
        elif key in SCHEMA:
            values[key] = _convert(key, SCHEMA[key][0], value)
        else:
            raise ValueError(f"unknown config key '{key}'")
    ordered = [ellipses[i] for i in sorted(ellipses)]
    return RunConfig(values=values, ellipses=ordered)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return parse_config("")
    return parse_config(Path(path).read_text())


def render_config(cfg: RunConfig) -> str:
    """Echo the resolved configuration, schema ordered, round-trippable."""
    lines = []
    for key, (kind, _) in SCHEMA.items():
        value = cfg.values[key]
        text = repr(float(value)) if kind is float else str(value)
        lines.append(f"{key} = {text}")
    for i, row in enumerate(cfg.ellipses):
        lines.append(f"ellipse.{i} = " + " ".join(repr(v) for v in row))
    return "\n".join(lines) + "\n"
