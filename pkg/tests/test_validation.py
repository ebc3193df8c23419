import numpy as np
import pytest
from scipy.stats import norm

from stochabs.abstraction import build_abstraction
from stochabs.geometry import Rect, build_grid_partition
from stochabs.noise import build_noise_partition
from stochabs.synthesis import Controller, Spec, SynthesisResult, rdp, refine_controller
from stochabs.systems import make_system
from stochabs.validation import (SATISFIED, UNDETERMINED, VIOLATED, MetricsError, RunReport, compute_metrics,
                                 run_monte_carlo, sample_initial_states, simulate, simulate_batch, wilson_interval)


def wilson_closed_form(k, n, conf):
    z = norm.ppf(0.5 + conf / 2)
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    return centre - half, centre + half


@pytest.mark.parametrize("k,n", [(0, 10), (3, 10), (500, 1000), (1000, 1000), (1, 7)])
def test_wilson_matches_closed_form(k, n):
    lo, hi = wilson_interval(k, n, 0.99)
    ref = wilson_closed_form(k, n, 0.99)
    assert lo == pytest.approx(max(ref[0], 0.0), abs=1e-12) and hi == pytest.approx(min(ref[1], 1.0), abs=1e-12)


@pytest.fixture(scope="module")
def small_desk():
    sys, model = make_system("affine2d", noise_gain=0.06)
    part = build_grid_partition(Rect([0, 0], [1, 1]), [8, 8], Rect([0.75, 0.75], [1, 1]),
                                [Rect([0.375, 0.25], [0.625, 0.5])])
    noise = build_noise_partition(model, [4, 2], [0, 0], 0.9)
    res = rdp(build_abstraction(sys, part, noise, "SMDP"), Spec.for_partition(part, epsilon=1e-8))
    return sys, model, part, res


def test_outcomes_at_time_zero(small_desk):
    sys, model, part, res = small_desk
    ctrl = refine_controller(res, part)
    rng = np.random.default_rng(0)
    assert simulate(sys, model, ctrl, [0.9, 0.9], part, rng) == "satisfied"
    assert simulate(sys, model, ctrl, [0.5, 0.3], part, rng) == "violated"
    # outside the domain counts as avoid
    assert simulate(sys, model, ctrl, [1.5, -0.2], part, rng) == "violated"
    out, steps = simulate_batch(sys, model, ctrl, np.array([[0.9, 0.9], [0.5, 0.3]]), part, rng)
    assert out.tolist() == [SATISFIED, VIOLATED] and steps.tolist() == [0, 0]


def test_budget_exhaustion_is_undetermined(small_desk):
    sys, model, part, res = small_desk
    stay = Controller(part, np.zeros(part.n_safe, dtype=np.int64))
    frozen = make_system("affine2d", B=np.zeros((2, 2)), G=np.zeros((2, 2)))[0]
    out, steps = simulate_batch(frozen, model, stay, np.array([[0.1, 0.1]] * 3), part, np.random.default_rng(1),
                                max_steps=5)
    assert np.all(out == UNDETERMINED) and np.all(steps == 5)
    with pytest.raises(ValueError):
        simulate_batch(sys, model, stay, np.array([[0.1, 0.1]]), part, np.random.default_rng(1), max_steps=0)


def test_monte_carlo_is_deterministic_and_thread_independent(small_desk):
    sys, model, part, res = small_desk
    ctrl = refine_controller(res, part)
    init = sample_initial_states(part, 6, np.random.default_rng(3))
    a = run_monte_carlo(sys, model, ctrl, part, init, n_traj=200, seed=5)
    b = run_monte_carlo(sys, model, ctrl, part, init, n_traj=200, seed=5, threads=3)
    c = run_monte_carlo(sys, model, ctrl, part, init, n_traj=200, seed=6)
    assert a == b
    assert a != c


def test_monte_carlo_inside_guarantees(small_desk):
    sys, model, part, res = small_desk
    ctrl = refine_controller(res, part)
    init = sample_initial_states(part, 20, np.random.default_rng(8))
    mc = run_monte_carlo(sys, model, ctrl, part, init, n_traj=500, seed=9)
    rep = compute_metrics(res, part, init, mc)
    assert len(rep.violations) <= 1
    assert 0.0 <= rep.p_lower_avg <= rep.mc_avg + 0.05
    assert rep.mc_avg <= rep.p_upper_avg + 0.05


def test_initial_state_sampling(small_desk):
    _, _, part, _ = small_desk
    s = sample_initial_states(part, 10, np.random.default_rng(0))
    assert len(set(s.tolist())) == 10 and np.all(np.isin(s, part.non_terminal))
    every = sample_initial_states(part, 10_000, np.random.default_rng(0))
    assert np.array_equal(every, part.non_terminal)


def _result(part, lo, up):
    n = part.n_states
    return SynthesisResult("SMDP", np.asarray(lo, float), np.asarray(up, float), np.zeros(n, dtype=np.int64), 1, 0.0,
                           True)


def test_metrics_extremes_and_errors(small_desk):
    _, _, part, _ = small_desk
    n, nt = part.n_states, part.non_terminal
    exact = np.full(n, 0.3)
    rep = compute_metrics(_result(part, exact, exact), part, nt[:3])
    assert rep.e_avg == 0.0 and rep.p_lower_avg == pytest.approx(0.3) and rep.mc_avg is None
    rep = compute_metrics(_result(part, np.zeros(n), np.ones(n)), part, nt[:3])
    assert rep.e_avg == 1.0
    with pytest.raises(MetricsError):
        compute_metrics(_result(part, exact, exact), part, [])
    with pytest.raises(MetricsError):
        compute_metrics(_result(part, exact, exact), part, [part.avoid_index])
    with pytest.raises(MetricsError):
        compute_metrics(_result(part, exact, exact), part, [min(part.reach_indices)])


def test_rate_outside_bounds_is_flagged(small_desk):
    sys, model, part, res = small_desk
    init = sample_initial_states(part, 4, np.random.default_rng(2))
    mc = run_monte_carlo(sys, model, refine_controller(res, part), part, init, n_traj=300, seed=1)
    n = part.n_states
    # claim a certain success everywhere: any state with a visibly lower rate gets flagged
    rep = compute_metrics(_result(part, np.ones(n), np.ones(n)), part, init, mc)
    assert set(rep.violations) == {m.state for m in mc if m.ci_high < 1.0}


def test_report_round_trip(tmp_path, small_desk):
    sys, model, part, res = small_desk
    init = sample_initial_states(part, 3, np.random.default_rng(2))
    mc = run_monte_carlo(sys, model, refine_controller(res, part), part, init, n_traj=50, seed=1)
    rep = compute_metrics(res, part, init, mc, memory={"total_entries": 7}, n_actions=8, n_cells=9, seed=1)
    rep.save(tmp_path / "r.json")
    again = RunReport.load(tmp_path / "r.json")
    assert again == rep
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[0].startswith("state,p_lower,p_upper,mc_rate")
