"""Simplified geometric clustered-multipath channel synthesis.

Each sample is a static snapshot: one optional line-of-sight path derived
from the BS-UE geometry plus a configurable number of scattered paths with
exponential excess delays and an exponential power-delay profile. The CSI
matrix lives on an (antenna, subcarrier) grid for a half-wavelength uniform
planar array at the base station and one UE port.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

SPEED_OF_LIGHT = 299_792_458.0

GUARD_RADIUS_M = 10.0

# Table-aligned value sets for scenario configs.
SCENARIO_NAMES = ("UMi", "UMa", "RMa")
CARRIER_FREQUENCIES_GHZ = (0.7, 2.4, 3.5, 4.9, 5.0)
SUBCARRIER_SPACINGS_KHZ = (15.0, 30.0, 60.0)

# Per-scenario baseline plumbing constants (height per scenario, the rest
# chosen for a desk-scale generator): bs_height m, cell_radius m,
# delay_spread s, los_probability, num_nlos_paths.
_SCENARIO_BASE = {
    "UMi": (10.0, 120.0, 120e-9, 0.70, 8),
    "UMa": (25.0, 250.0, 250e-9, 0.60, 10),
    "RMa": (35.0, 300.0, 60e-9, 0.85, 6),
}

# Fraction of total power carried by the LOS path when present.
LOS_POWER_FRACTION = 0.6


@dataclass(frozen=True)
class ScenarioParams:
    """Full parameterization of one scenario-carrier combination."""

    name: str
    carrier_frequency: float  # GHz
    subcarrier_spacing: float  # kHz
    num_subcarriers: int = 64
    bs_array: tuple[int, int] = (4, 4)
    bs_height: float = 10.0
    ue_height: float = 1.5
    cell_radius: float = 120.0
    num_nlos_paths: int = 8
    delay_spread: float = 120e-9  # seconds
    los_probability: float = 0.7
    ue_velocity_range: tuple[float, float] = (0.0, 27.78)  # metadata only
    sector_deg: float = 360.0  # azimuth span of UE drops, centered on boresight

    @property
    def num_antennas(self) -> int:
        return self.bs_array[0] * self.bs_array[1]

    @property
    def descriptor(self) -> str:
        return f"{self.name}-{self.carrier_frequency:g}"

    def validate(self) -> None:
        bad: list[str] = []
        if self.name not in SCENARIO_NAMES:
            bad.append("name")
        if self.carrier_frequency not in CARRIER_FREQUENCIES_GHZ:
            bad.append("carrier_frequency")
        if self.subcarrier_spacing not in SUBCARRIER_SPACINGS_KHZ:
            bad.append("subcarrier_spacing")
        if self.num_subcarriers <= 0:
            bad.append("num_subcarriers")
        if self.bs_array[0] <= 0 or self.bs_array[1] <= 0:
            bad.append("bs_array")
        if self.bs_height <= 0:
            bad.append("bs_height")
        if self.ue_height <= 0:
            bad.append("ue_height")
        if self.cell_radius <= GUARD_RADIUS_M:
            bad.append("cell_radius")
        if self.num_nlos_paths < 0:
            bad.append("num_nlos_paths")
        if self.delay_spread <= 0:
            bad.append("delay_spread")
        if not 0.0 <= self.los_probability <= 1.0:
            bad.append("los_probability")
        if self.num_nlos_paths == 0 and self.los_probability < 1.0:
            # zero paths would synthesize an all-zero H
            bad.append("num_nlos_paths")
        if not 0.0 < self.sector_deg <= 360.0:
            bad.append("sector_deg")
        if bad:
            raise ConfigError(f"invalid scenario parameters: {sorted(set(bad))}", sorted(set(bad)))


def scenario(name: str, carrier_frequency: float, **overrides) -> ScenarioParams:
    """Preset factory for a (scenario, carrier) combination.

    Delay spread and LOS probability drift mildly with carrier so that
    different carriers of one scenario are genuinely different
    distributions, which keeps cross-carrier transfer experiments
    meaningful.
    """
    if name not in _SCENARIO_BASE:
        raise ConfigError(f"unknown scenario name {name!r}", ["name"])
    bs_height, radius, ds, los_p, paths = _SCENARIO_BASE[name]
    fc = float(carrier_frequency)
    ds_eff = ds * (2.4 / fc) ** 0.25
    los_eff = min(0.95, max(0.2, los_p + 0.02 * (2.4 - fc)))
    params = ScenarioParams(
        name=name,
        carrier_frequency=fc,
        subcarrier_spacing=30.0,
        bs_height=bs_height,
        cell_radius=radius,
        delay_spread=ds_eff,
        los_probability=los_eff,
        num_nlos_paths=paths,
    )
    if overrides:
        params = replace(params, **overrides)
    params.validate()
    return params


@dataclass
class PathSet:
    """Latent multipath description from which one CSI matrix is built."""

    gains: np.ndarray  # complex, (P,), sum |g|^2 == 1
    delays: np.ndarray  # seconds, (P,)
    azimuths: np.ndarray  # radians, (P,)
    elevations: np.ndarray  # radians, (P,)
    los_flag: bool  # path 0 is the geometric LOS path

    @property
    def num_paths(self) -> int:
        return self.gains.shape[0]

    def total_power(self) -> float:
        return float(np.sum(np.abs(self.gains) ** 2))


def sample_geometry(params: ScenarioParams, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    """Drop one UE: area-uniform over the annulus between the guard radius
    and the cell radius, restricted to ``sector_deg`` around boresight."""
    r0, r1 = GUARD_RADIUS_M, params.cell_radius
    r = math.sqrt(rng.uniform(r0 * r0, r1 * r1))
    half = math.radians(params.sector_deg) / 2.0
    phi = rng.uniform(-half, half)
    los = bool(rng.uniform() < params.los_probability)
    return np.array([r * math.cos(phi), r * math.sin(phi)]), los


def los_geometry(params: ScenarioParams, ue_position: np.ndarray) -> tuple[float, float, float]:
    """(delay, azimuth, elevation) of the direct BS->UE path.

    Azimuth is measured from the array boresight (+x); elevation is the
    angle from the horizontal plane, negative when the UE sits below the BS.
    """
    x, y = float(ue_position[0]), float(ue_position[1])
    d2d = math.hypot(x, y)
    dh = params.ue_height - params.bs_height
    d3d = math.sqrt(d2d * d2d + dh * dh)
    return d3d / SPEED_OF_LIGHT, math.atan2(y, x), math.atan2(dh, d2d)


def draw_paths(
    params: ScenarioParams,
    ue_position: np.ndarray,
    los_flag: bool,
    rng: np.random.Generator,
) -> PathSet:
    """Draw the multipath set for one sample.

    The LOS path (when present) carries a fixed 0.6 power fraction with a
    real positive gain; scattered paths get exponential excess delays over
    the first-arrival delay, an exponential power-delay profile, uniform
    angles, and uniform phases. Total power is normalized to one.
    """
    tau0, az0, el0 = los_geometry(params, ue_position)
    n = params.num_nlos_paths

    excess = rng.exponential(params.delay_spread, size=n)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=n)
    azimuths = rng.uniform(-math.pi, math.pi, size=n)
    elevations = rng.uniform(-math.pi / 2.0, math.pi / 2.0, size=n)

    profile = np.exp(-excess / params.delay_spread)
    if los_flag:
        nlos_total = (1.0 - LOS_POWER_FRACTION) if n > 0 else 0.0
        los_power = 1.0 - nlos_total
    else:
        los_power = 0.0
        nlos_total = 1.0
    if n > 0:
        powers = nlos_total * profile / profile.sum()
    else:
        powers = profile  # empty

    if los_flag:
        gains = np.concatenate(([math.sqrt(los_power)], np.sqrt(powers) * np.exp(1j * phases)))
        delays = np.concatenate(([tau0], tau0 + excess))
        azs = np.concatenate(([az0], azimuths))
        els = np.concatenate(([el0], elevations))
    else:
        gains = np.sqrt(powers) * np.exp(1j * phases)
        delays = tau0 + excess
        azs = azimuths
        els = elevations
    total = np.sum(np.abs(gains) ** 2)
    gains = gains / math.sqrt(total)
    return PathSet(gains=gains.astype(np.complex128), delays=delays, azimuths=azs, elevations=els, los_flag=los_flag)


def steering_vector(array: tuple[int, int], azimuth: float, elevation: float) -> np.ndarray:
    """Half-wavelength UPA response, row-major over (rows, cols):
    element (m, n) has phase pi*(m*sin(el) + n*cos(el)*sin(az))."""
    rows, cols = array
    m = np.arange(rows)[:, None]
    n = np.arange(cols)[None, :]
    phase = math.pi * (m * math.sin(elevation) + n * math.cos(elevation) * math.sin(azimuth))
    return np.exp(1j * phase).reshape(rows * cols)


def synthesize_csi(paths: PathSet, params: ScenarioParams) -> np.ndarray:
    """H[a, k] = sum_p g_p * steer(az_p, el_p)[a] * exp(-2j*pi*k*df*tau_p).

    Subcarrier index k runs baseband 0..K-1 with df the subcarrier spacing.
    """
    k = np.arange(params.num_subcarriers)
    df = params.subcarrier_spacing * 1e3
    freq_phase = np.exp(-2j * math.pi * np.outer(paths.delays, k) * df)  # (P, K)
    steer = np.stack(
        [steering_vector(params.bs_array, az, el) for az, el in zip(paths.azimuths, paths.elevations)],
        axis=1,
    )  # (A, P)
    return (steer * paths.gains[None, :]) @ freq_phase  # (A, K)
