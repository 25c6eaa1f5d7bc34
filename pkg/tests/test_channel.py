import math

import numpy as np
import pytest

from chanmae.channel import (
    GUARD_RADIUS_M,
    SPEED_OF_LIGHT,
    PathSet,
    ScenarioParams,
    draw_paths,
    los_geometry,
    sample_geometry,
    scenario,
    steering_vector,
    synthesize_csi,
)
from chanmae.errors import ConfigError


def small_params(**over):
    defaults = dict(cell_radius=100.0, num_subcarriers=16, bs_array=(2, 2))
    defaults.update(over)
    return scenario("UMi", 2.4, **defaults)


class TestGeometry:
    def test_positions_stay_in_annulus(self):
        params = small_params()
        rng = np.random.default_rng(0)
        for _ in range(500):
            pos, _ = sample_geometry(params, rng)
            r = np.hypot(*pos)
            assert GUARD_RADIUS_M <= r <= 100.0

    def test_certain_los(self):
        params = small_params(los_probability=1.0)
        rng = np.random.default_rng(1)
        assert all(sample_geometry(params, rng)[1] for _ in range(200))

    def test_mean_radius_matches_annulus_oracle(self):
        params = small_params()
        rng = np.random.default_rng(2)
        radii = [np.hypot(*sample_geometry(params, rng)[0]) for _ in range(10_000)]
        r0, r1 = GUARD_RADIUS_M, 100.0
        analytic = (2.0 / 3.0) * (r1**3 - r0**3) / (r1**2 - r0**2)
        assert abs(np.mean(radii) - analytic) / analytic < 0.05

    def test_sector_restricts_azimuth(self):
        params = small_params(sector_deg=120.0)
        rng = np.random.default_rng(3)
        for _ in range(500):
            pos, _ = sample_geometry(params, rng)
            assert abs(math.atan2(pos[1], pos[0])) <= math.radians(60.0) + 1e-12


class TestDrawPaths:
    def test_los_delay_is_exact_geometry(self):
        params = small_params(los_probability=1.0)
        ue = np.array([50.0, 0.0])
        paths = draw_paths(params, ue, True, np.random.default_rng(0))
        dh = params.bs_height - params.ue_height
        expected = math.sqrt(50.0**2 + dh**2) / SPEED_OF_LIGHT
        assert paths.delays[0] == pytest.approx(expected, rel=1e-12)

    def test_power_normalization(self):
        params = small_params()
        rng = np.random.default_rng(1)
        for _ in range(50):
            pos, los = sample_geometry(params, rng)
            paths = draw_paths(params, pos, los, rng)
            assert abs(paths.total_power() - 1.0) < 1e-9

    def test_nlos_excess_delay_matches_exponential_oracle(self):
        params = small_params()
        rng = np.random.default_rng(2)
        ue = np.array([40.0, 10.0])
        tau0 = los_geometry(params, ue)[0]
        excess = []
        while len(excess) < 10_000:
            paths = draw_paths(params, ue, False, rng)
            excess.extend(paths.delays - tau0)
        assert abs(np.mean(excess) - params.delay_spread) / params.delay_spread < 0.05

    def test_los_dominant_power_fraction(self):
        params = small_params()
        paths = draw_paths(params, np.array([30.0, 0.0]), True, np.random.default_rng(3))
        assert abs(np.abs(paths.gains[0]) ** 2 - 0.6) < 1e-9

    def test_zero_nlos_paths_single_los(self):
        params = small_params(num_nlos_paths=0, los_probability=1.0)
        paths = draw_paths(params, np.array([30.0, 0.0]), True, np.random.default_rng(4))
        assert paths.num_paths == 1
        assert paths.gains[0] == pytest.approx(1.0)


class TestSteering:
    def test_broadside_all_ones(self):
        v = steering_vector((4, 4), 0.0, 0.0)
        assert np.abs(v - 1.0).max() < 1e-12

    def test_unit_modulus(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            v = steering_vector((3, 5), rng.uniform(-np.pi, np.pi), rng.uniform(-np.pi / 2, np.pi / 2))
            assert np.abs(np.abs(v) - 1.0).max() < 1e-12

    def test_two_element_vertical_hand_case(self):
        v = steering_vector((2, 1), 0.0, math.pi / 2)
        assert np.abs(v - np.array([1.0, -1.0])).max() < 1e-12


class TestSynthesis:
    def test_single_broadside_path_all_ones(self):
        params = small_params()
        paths = PathSet(
            gains=np.array([1.0 + 0j]),
            delays=np.array([0.0]),
            azimuths=np.array([0.0]),
            elevations=np.array([0.0]),
            los_flag=True,
        )
        h = synthesize_csi(paths, params)
        assert np.abs(h - 1.0).max() < 1e-12

    def test_full_turn_phase_sweep(self):
        params = small_params()
        k = params.num_subcarriers
        df = params.subcarrier_spacing * 1e3
        paths = PathSet(
            gains=np.array([1.0 + 0j]),
            delays=np.array([1.0 / (k * df)]),
            azimuths=np.array([0.0]),
            elevations=np.array([0.0]),
            los_flag=True,
        )
        h = synthesize_csi(paths, params)
        phases = np.unwrap(np.angle(h[0]))
        # one full negative turn across k subcarriers: step -2*pi/k
        steps = np.diff(phases)
        assert np.abs(steps + 2 * math.pi / k).max() < 1e-12
        assert abs(h[0, 0] - 1.0) < 1e-12

    def test_vectorized_equals_double_loop_oracle(self):
        params = small_params()
        rng = np.random.default_rng(5)
        pos, _ = sample_geometry(params, rng)
        paths = draw_paths(params, pos, True, rng)
        h = synthesize_csi(paths, params)
        a_count = params.num_antennas
        df = params.subcarrier_spacing * 1e3
        oracle = np.zeros((a_count, params.num_subcarriers), dtype=complex)
        for a in range(a_count):
            for k in range(params.num_subcarriers):
                for p in range(paths.num_paths):
                    steer = steering_vector(params.bs_array, paths.azimuths[p], paths.elevations[p])
                    oracle[a, k] += (
                        paths.gains[p] * steer[a] * np.exp(-2j * math.pi * k * df * paths.delays[p])
                    )
        assert np.abs(h - oracle).max() < 1e-12


class TestScenarioValidation:
    def test_preset_descriptor(self):
        assert scenario("RMa", 0.7).descriptor == "RMa-0.7"

    def test_invalid_values_listed(self):
        params = ScenarioParams(
            name="XXX",
            carrier_frequency=1.1,
            subcarrier_spacing=30.0,
            cell_radius=5.0,
        )
        with pytest.raises(ConfigError) as exc:
            params.validate()
        assert set(exc.value.keys) == {"name", "carrier_frequency", "cell_radius"}

    def test_zero_paths_require_certain_los(self):
        with pytest.raises(ConfigError):
            scenario("UMi", 2.4, num_nlos_paths=0, los_probability=0.5)

    def test_unknown_scenario_name(self):
        with pytest.raises(ConfigError):
            scenario("Urban", 2.4)
