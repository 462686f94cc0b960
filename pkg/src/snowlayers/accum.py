"""Water-equivalent accumulation from traced layer depths.

Depth is ``row * meters_per_row`` (surface at row 0). Water-equivalent
thickness between two depths is ``(1 / 1000) * integral of rho(z) dz`` over the
density profile. A depth error of ``mae_pixels`` rows propagates to first
order as ``mae_pixels * meters_per_row * rho(depth) / 1000``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

WATER_DENSITY = 1000.0
ICE_DENSITY = 917.0
MODES = ("piecewise-linear", "linear-fit")


@dataclass(frozen=True)
class DensityProfile:
    """Density (kg/m^3) against depth (m).

    ``piecewise-linear`` interpolates the samples and holds the end values
    beyond them; ``linear-fit`` is a least-squares line clamped to (0, 917].
    """

    depths: tuple
    densities: tuple
    mode: str = "piecewise-linear"
    intercept: float = 0.0
    slope: float = 0.0

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.mode == "linear-fit":
            return np.clip(self.intercept + self.slope * z, np.nextafter(0.0, 1.0), ICE_DENSITY)
        return np.interp(z, self.depths, self.densities)

    def breakpoints(self, z0: float, z1: float) -> np.ndarray:
        """Sorted nodes in [z0, z1] between which the profile is linear."""
        if self.mode == "linear-fit":
            inner = []
            if self.slope != 0:
                for level in (0.0, ICE_DENSITY):
                    inner.append((level - self.intercept) / self.slope)
        else:
            inner = list(self.depths)
        pts = [z0] + [z for z in inner if z0 < z < z1] + [z1]
        return np.array(sorted(pts))

    def integral(self, z0: float, z1: float) -> float:
        """Trapezoidal integral of density over [z0, z1]; exact for this piecewise-linear profile."""
        if z1 < z0:
            raise ValueError(f"integration bounds out of order: {z0} > {z1}")
        if z1 == z0:
            return 0.0
        nodes = self.breakpoints(z0, z1)
        rho = self(nodes)
        return float(np.sum(np.diff(nodes) * (rho[1:] + rho[:-1]) / 2))


def fit_density_profile(samples, mode: str = "piecewise-linear") -> DensityProfile:
    """Build a profile from ``(depth_m, density_kgm3)`` samples."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    arr = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    if len(arr) == 0:
        raise ValueError("no density samples")
    z, rho = arr[:, 0], arr[:, 1]
    if np.any(np.diff(z) <= 0):
        raise ValueError("sample depths must be strictly increasing")
    if np.any(rho <= 0) or np.any(rho > ICE_DENSITY):
        raise ValueError(f"densities must lie in (0, {ICE_DENSITY:g}] kg/m^3")
    if mode == "linear-fit":
        if len(arr) < 2:
            raise ValueError("linear-fit needs at least 2 samples")
        slope, intercept = np.polyfit(z, rho, 1)
        return DensityProfile(tuple(z), tuple(rho), mode, float(intercept), float(slope))
    return DensityProfile(tuple(z), tuple(rho), mode)


def read_density_csv(path, mode: str = "piecewise-linear") -> DensityProfile:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["depth_m", "density_kgm3"]:
            raise ValueError(f"{path}: header must be depth_m,density_kgm3, got {reader.fieldnames}")
        samples = [(float(r["depth_m"]), float(r["density_kgm3"])) for r in reader]
    return fit_density_profile(samples, mode)


def depth_from_row(row: float, meters_per_row: float) -> float:
    if meters_per_row <= 0:
        raise ValueError(f"meters_per_row must be positive, got {meters_per_row}")
    if row < 0:
        raise ValueError(f"row must be non-negative, got {row}")
    return row * meters_per_row


def water_equivalent(profile: DensityProfile, z0: float, z1: float) -> float:
    return profile.integral(z0, z1) / WATER_DENSITY


def mae_propagation(mae_pixels: float, meters_per_row: float, profile, depth: float) -> float:
    """Accumulation-rate uncertainty (m w.e. a^-1) from a depth MAE of ``mae_pixels`` rows."""
    if mae_pixels < 0 or meters_per_row <= 0 or depth < 0:
        raise ValueError("mae_pixels and depth must be non-negative, meters_per_row positive")
    rho = float(profile(depth)) if callable(profile) else float(profile)
    return mae_pixels * meters_per_row * rho / WATER_DENSITY


@dataclass
class LayerAccum:
    depth_m: float
    we_thickness_m: float
    rate_m_we_per_a: float
    uncertainty_m_we_per_a: float | None = None


@dataclass
class AccumReport:
    layers: list

    def to_json(self) -> str:
        return json.dumps({"layers": [asdict(layer) for layer in self.layers]}, indent=2, sort_keys=True) + "\n"


def water_equivalent_rates(layers, profile: DensityProfile, meters_per_row: float,
                           years_per_layer: float = 1.0, mae_pixels: float | None = None) -> AccumReport:
    """Per-layer water-equivalent thickness and rate from mean layer depths.

    ``layers`` is a LayerSet (mean row per layer) or a sequence of depths in
    metres. The first interval starts at the surface.
    """
    if hasattr(layers, "mean_rows"):
        depths = [depth_from_row(r, meters_per_row) for r in layers.mean_rows()]
    else:
        depths = [float(d) for d in layers]
    if any(b <= a for a, b in zip(depths, depths[1:])):
        raise ValueError(f"layer depths must be strictly increasing, got {depths}")
    if depths and depths[0] < 0:
        raise ValueError("layer depths must be non-negative")
    if years_per_layer <= 0:
        raise ValueError(f"years_per_layer must be positive, got {years_per_layer}")
    out, top = [], 0.0
    for z in depths:
        we = water_equivalent(profile, top, z)
        unc = None if mae_pixels is None else mae_propagation(mae_pixels, meters_per_row, profile, z) / years_per_layer
        out.append(LayerAccum(z, we, we / years_per_layer, unc))
        top = z
    return AccumReport(out)
