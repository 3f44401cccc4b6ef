import numpy as np
import pytest

from saa_control.random_field import (
    ScenarioSet,
    build_reference_grid,
    kappa_bounds,
    kappa_eval,
    read_scenarios,
    sample_scenarios,
    write_scenarios,
)


def test_kappa_examples():
    assert kappa_eval(np.zeros(4), 0.3, 0.8) == 1.0
    assert kappa_eval([1, 0, 0, 0], 0.0, 0.0) == pytest.approx(np.e, rel=1e-15)


def test_kappa_bounds_values():
    kmin, kmax, kc1 = kappa_bounds()
    assert kmin == pytest.approx(0.0183156, rel=1e-5)
    assert kmax == pytest.approx(54.59815, rel=1e-6)
    assert kc1 == pytest.approx(np.exp(4) * (1 + 2.7 * np.pi))


def test_kappa_brute_force_sweep():
    rng = np.random.default_rng(0)
    kmin, kmax, kc1 = kappa_bounds()
    xi = rng.uniform(-1, 1, (4, 10**6))
    x1, x2 = rng.random((2, 10**6))
    k = kappa_eval(xi, x1, x2)
    assert k.min() >= kmin and k.max() <= kmax
    # central differences of kappa stay below the C1 bound
    d = 1e-6
    g1 = (kappa_eval(xi, x1 + d, x2) - kappa_eval(xi, x1 - d, x2)) / (2 * d)
    g2 = (kappa_eval(xi, x1, x2 + d) - kappa_eval(xi, x1, x2 - d)) / (2 * d)
    assert np.all(k + np.maximum(np.abs(g1), np.abs(g2)) <= kc1)


@pytest.mark.parametrize("m, size", [(2, 16), (3, 81), (12, 20736)])
def test_reference_grid_sizes(m, size):
    g = build_reference_grid(m)
    assert len(g) == size and g.exhaustive
    assert np.all(np.abs(g.points) <= 1)


def test_reference_grid_values():
    assert set(np.unique(build_reference_grid(2).points)) == {-1.0, 1.0}
    assert set(np.unique(build_reference_grid(3).points)) == {-1.0, 0.0, 1.0}
    g = build_reference_grid(3)
    np.testing.assert_array_equal(g.points[:3], [[-1, -1, -1, -1], [-1, -1, -1, 0], [-1, -1, -1, 1]])
    with pytest.raises(ValueError):
        build_reference_grid(1)


def test_sampling_determinism_and_membership():
    g = build_reference_grid(12)
    a = sample_scenarios(g, 5, 42)
    b = sample_scenarios(g, 5, 42)
    np.testing.assert_array_equal(a.points, b.points)
    assert len(sample_scenarios(g, 0, 1)) == 0
    members = {tuple(p) for p in g.points}
    s = sample_scenarios(g, 500, 7, stream=3)
    assert all(tuple(p) in members for p in s.points)
    np.testing.assert_array_equal(s.points, g.points[s.indices])
    assert not np.array_equal(s.points, sample_scenarios(g, 500, 7, stream=4).points)


def test_sample_prefix_property():
    # counter-based streams: a longer draw extends a shorter one
    g = build_reference_grid(4)
    np.testing.assert_array_equal(sample_scenarios(g, 10, 3).points, sample_scenarios(g, 30, 3).points[:10])


def test_sampling_mean_clt():
    N = 10**5
    s = sample_scenarios(build_reference_grid(12), N, 2024)
    assert abs(s.points[:, 0].mean()) <= 3 / np.sqrt(N)


def test_sampling_requires_exhaustive_grid():
    g = build_reference_grid(3)
    with pytest.raises(ValueError):
        sample_scenarios(sample_scenarios(g, 4, 0), 2, 0)


def test_distinct_weights():
    s = ScenarioSet(np.array([[0, 0, 0, 1], [0, 0, 0, 0], [0, 0, 0, 1]], float), 0)
    pts, w = s.distinct()
    np.testing.assert_array_equal(pts, [[0, 0, 0, 0], [0, 0, 0, 1]])
    np.testing.assert_allclose(w, [1 / 3, 2 / 3])


def test_scenario_csv_roundtrip(tmp_path):
    s = sample_scenarios(build_reference_grid(12), 20, 9)
    write_scenarios(s, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "xi1,xi2,xi3,xi4"
    back = read_scenarios(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.points, s.points)
    assert back.seed == 9
