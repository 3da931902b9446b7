import numpy as np
import pytest

from lagsync.delays import (
    CLIP_FRACTION,
    DelayProfile,
    DelayProfileSet,
    generate_delay_profile,
    scan_profile,
)


def test_zero_slope_is_constant():
    prof = generate_delay_profile(1, 0.5, 0.0, 0.2, 10.0)
    grid = np.linspace(0, 10, 500)
    assert np.allclose(prof.value(grid), prof.value(0.0))


def test_determinism():
    a = generate_delay_profile(42, 0.8, 0.9, 0.5, 40.0)
    b = generate_delay_profile(42, 0.8, 0.9, 0.5, 40.0)
    assert np.array_equal(a.knot_values, b.knot_values)
    c = generate_delay_profile(43, 0.8, 0.9, 0.5, 40.0)
    assert not np.array_equal(a.knot_values, c.knot_values)


def test_admissibility_bounds_at_unit_slope():
    prof = generate_delay_profile(7, 0.8, 1.0, 0.5, 40.0)
    max_val, max_slope = scan_profile(prof, grid_dt=1e-3, horizon=40.0)
    assert 0.0 <= max_val < 0.8
    assert max_slope <= 1.0 + 1e-9


@pytest.mark.parametrize("seed", range(6))
def test_admissibility_random_seeds(seed):
    tau_star, d = 0.3, 0.7
    prof = generate_delay_profile(seed, tau_star, d, 0.25, 20.0)
    max_val, max_slope = scan_profile(prof, grid_dt=1e-3, horizon=20.0)
    assert max_val <= tau_star * (1.0 - CLIP_FRACTION) + 1e-12
    assert np.all(prof.knot_values >= 0.0)
    assert max_slope <= d + 1e-9


def test_invalid_parameters():
    with pytest.raises(ValueError):
        generate_delay_profile(0, 0.0, 0.5, 0.1, 1.0)
    with pytest.raises(ValueError):
        generate_delay_profile(0, 0.5, 1.5, 0.1, 1.0)
    with pytest.raises(ValueError):
        generate_delay_profile(0, 0.5, 0.5, 0.0, 1.0)


def test_constant_profile_and_validation():
    prof = DelayProfile.constant(0.0, 10.0)
    assert prof.value(3.0) == 0.0
    with pytest.raises(ValueError, match="strictly increasing"):
        DelayProfile(
            knot_times=np.array([0.0, 0.0]),
            knot_values=np.array([0.1, 0.1]),
            tau_star=0.2,
            slope_bound=0.0,
        )
    with pytest.raises(ValueError, match="tau_star"):
        DelayProfile(
            knot_times=np.array([0.0, 1.0]),
            knot_values=np.array([0.3, 0.3]),
            tau_star=0.2,
            slope_bound=0.0,
        )


def test_profile_set_matches_topology(topology):
    profs = DelayProfileSet.generate(topology, 0.8, 0.9, 0.5, 40.0, 99)
    assert len(profs.pin_profiles) == topology.n_pins
    assert len(profs.channel_profiles) == topology.n_channels
    assert profs.max_delay_bound == pytest.approx(0.8)
    # Independent channels get distinct draws.
    vals = {tuple(p.knot_values[:4]) for p in profs.channel_profiles}
    assert len(vals) == topology.n_channels
    zero = DelayProfileSet.zero(topology)
    assert zero.max_delay_bound == 0.0
