import math

import numpy as np
import pytest

from harris_regen.cycles import RegenerationStream
from harris_regen.montecarlo import CurveRow, DeviationCurve
from harris_regen.streams import stream
from harris_regen.verify import (
    CheckReport,
    autocorrelation,
    check_bound_domination,
    check_centered_mean,
    check_dependence_structure,
    check_nt_moments,
    check_stationarity,
    check_tail_index,
    check_xi_moments,
    hill_estimate,
    read_report,
    splice_cycles,
    summary_table,
    write_report,
)


def iid_stream(n=100_000, seed=81):
    rng = stream(seed)
    d = rng.exponential(1.0, n)
    starts = rng.choice(3, size=n, p=[0.2, 0.3, 0.5])
    return RegenerationStream(durations=d, xi={"one": d.copy(), "c": rng.standard_normal(n)},
                              initial_duration=1.0, initial_xi={}, method="synthetic", start_states=starts)


@pytest.fixture(scope="module")
def iid():
    return iid_stream()


def statuses(reports):
    return {r.check_name: r.status for r in reports}


# ---------------------------------------------------------------- moments


def test_xi_moments_exponential(iid):
    # E xi^p = p! for Exp(1), exactly on the bound with K = 1
    reps = check_xi_moments(iid, "one", k_f=1.0)
    assert [r.status for r in reps] == ["pass"] * 4
    assert reps[1].threshold == 2.0


def test_xi_moments_halved_k_fails(iid):
    reps = check_xi_moments(iid, "one", k_f=0.5)
    assert all(r.failed for r in reps)


def test_xi_moments_needs_cycles():
    with pytest.raises(ValueError, match="at least 100000"):
        check_xi_moments(iid_stream(1000), "one", 1.0)
    with pytest.raises(ValueError, match="p_max"):
        check_xi_moments(iid_stream(1000), "one", 1.0, p_max=5, min_cycles=10)


def test_nt_moments_poisson():
    rng = stream(82)
    t_grid = [10.0, 40.0]
    # Poisson counts of a unit-rate renewal process: v*_t = t + 1
    nt = np.column_stack([rng.poisson(t, 20_000) for t in t_grid])
    reps = check_nt_moments(t_grid, nt, [t + 1 for t in t_grid])
    assert not any(r.failed for r in reps)
    assert sum(r.check_name.startswith("nt_tail") for r in reps) == 4
    # v*_t = 1: 2 exp(-1/2) > 1 is vacuous at x = 1, 2 exp(-1) < 1 is not at x = 2
    low = check_nt_moments([1.0], np.zeros((20_000, 1)), [1.0])
    assert [r.status for r in low if r.check_name.startswith("nt_tail")] == ["vacuous", "pass"]
    shrunk = check_nt_moments(t_grid, nt, [0.5 * t for t in t_grid])
    assert any(r.failed for r in shrunk)


# ---------------------------------------------------------------- dependence


def test_iid_stream_passes_dependence(iid):
    reps = check_dependence_structure(iid, nu=[0.2, 0.3, 0.5])
    s = statuses(reps)
    assert s["duration_autocorr[lag=1]"] == "pass"
    assert s["duration_blocks_ks"] == "pass"
    assert s["start_state_law"] == "pass"
    assert s["xi_autocorr[c,lag=1]"] == "vacuous"
    assert not any(r.failed for r in reps)


def test_start_state_law_detects_wrong_nu(iid):
    s = statuses(check_dependence_structure(iid, nu=[0.3, 0.3, 0.4]))
    assert s["start_state_law"] == "fail"
    s = statuses(check_dependence_structure(iid, nu=[0.0, 0.5, 0.5]))
    assert s["start_state_law"] == "fail"


def test_spliced_stream_fails(iid):
    spliced = splice_cycles(iid)
    assert spliced.durations.size == iid.durations.size - 2
    # overlapping sums of 3: lag-1 correlation 2/3
    assert autocorrelation(spliced.durations, 1) == pytest.approx(2 / 3, abs=0.02)
    s = statuses(check_dependence_structure(spliced))
    assert s["duration_autocorr[lag=1]"] == "fail"
    assert s["xi_autocorr[c,lag=2]"] == "fail"


def test_autocorrelation_constant_series():
    assert autocorrelation(np.ones(10), 1) == 0.0


def test_centered_mean_and_stationarity(iid):
    assert check_centered_mean(iid, "c").status == "pass"
    assert check_centered_mean(iid, "one").failed
    assert check_stationarity(iid, "c").status == "pass"
    drift = RegenerationStream(durations=iid.durations, xi={"c": iid.xi["c"] + np.linspace(0, 1, iid.durations.size)},
                               initial_duration=1.0, initial_xi={}, method="synthetic")
    assert check_stationarity(drift, "c").failed


# ---------------------------------------------------------------- tail index


def test_hill_on_pareto():
    x = stream(83).pareto(0.7, 1_000_000) + 1.0
    rep = check_tail_index(x, 0.7)
    assert rep.status == "pass" and rep.statistic <= 0.05
    assert check_tail_index(x, 0.5).failed


def test_light_tail_is_vacuous():
    rep = check_tail_index(stream(84).exponential(1.0, 1_000_000), 0.5)
    assert rep.status == "vacuous"


def test_hill_validation():
    with pytest.raises(ValueError):
        hill_estimate(np.ones(5), 5)
    with pytest.raises(ValueError, match="at least"):
        check_tail_index(np.ones(10), 0.5)


# ---------------------------------------------------------------- bound domination


def curve(bound_scale=1.0):
    rows = []
    for x, p in [(0.5, 0.3), (1.0, 0.1), (2.0, 0.01)]:
        bound = bound_scale * 4 * math.exp(-x)
        rows.append(CurveRow("positive_eta", 0.5, 100.0, x, x, p, p * 0.9, p * 1.1, bound, bound >= 1))
    return DeviationCurve(rows)


def test_bound_domination():
    assert check_bound_domination(curve()).status == "pass"
    assert check_bound_domination(curve(1e-6)).failed
    assert check_bound_domination(curve(100.0)).status == "vacuous"
    with pytest.raises(ValueError):
        check_bound_domination(DeviationCurve())


# ---------------------------------------------------------------- reports


def test_report_round_trip(tmp_path):
    reps = [CheckReport("a", "pass", 0.1, 1.0), CheckReport("b", "fail", 2.0, 1.0, "x"),
            CheckReport("c", "vacuous", math.nan, 0.0)]
    doc = write_report(reps, tmp_path / "r.json")
    assert doc["n_failed"] == 1 and doc["checks"][2]["statistic"] is None
    back = read_report(tmp_path / "r.json")
    assert [r.check_name for r in back] == ["a", "b", "c"] and math.isnan(back[2].statistic)
    assert summary_table(back).splitlines()[-1] == "3 checks: 1 pass, 1 fail, 1 vacuous"


def test_status_validated():
    with pytest.raises(ValueError):
        CheckReport("a", "maybe", 0.0, 0.0)
