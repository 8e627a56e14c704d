import pytest

from commonbreak.experiments import SCENARIO_DEFAULTS, run_scenario, scenario_names

SMALL = {
    "rate-lse": {"ns": [100, 200], "replicates": 8},
    "rate-mle": {"ns": [100, 200], "replicates": 8},
    "regime-a-degeneracy": {"m": 10, "n": 100, "replicates": 8},
    "variance-ordering": {"m": 6, "n": 100, "replicates": 10},
    "coverage-lse": {"m": 10, "n": 100, "inner": 100, "outer": 4, "strong_runs": 2},
    "coverage-mle": {"m": 10, "n": 100, "inner": 100, "outer": 4},
    "zip-equal-mean": {"m": 10, "n": 100, "replicates": 4, "coverage_outer": 2, "inner": 100},
    "dependent-gaussian-ci": {"m": 4, "n": 120, "draws": 100},
}


def strip(out):
    out = dict(out)
    out.pop("wall_clock_seconds")
    return out


def test_catalog_is_complete():
    assert set(scenario_names()) == set(SCENARIO_DEFAULTS) == set(SMALL)


@pytest.mark.parametrize("name", sorted(SMALL))
def test_scenario_deterministic_and_thread_invariant(name):
    a = run_scenario(name, SMALL[name], seed=3, threads=1)
    b = run_scenario(name, SMALL[name], seed=3, threads=3)
    assert strip(a) == strip(b)
    assert isinstance(a["passed"], bool)
    assert a["scenario"] == name and a["params"]["tau"] == 0.5


def test_seed_changes_results():
    a = run_scenario("rate-lse", SMALL["rate-lse"], seed=1)
    b = run_scenario("rate-lse", SMALL["rate-lse"], seed=2)
    assert a["per_n"] != b["per_n"]


def test_unknown_scenario_and_parameter():
    with pytest.raises(KeyError):
        run_scenario("nope")
    with pytest.raises(ValueError):
        run_scenario("rate-lse", {"bogus": 1})
