"""Closed-loop Monte-Carlo simulation and the tightness / correctness metrics."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import binomtest

from .geometry import StatePartition

SATISFIED, VIOLATED, UNDETERMINED = 1, 0, -1
OUTCOME_NAMES = {SATISFIED: "satisfied", VIOLATED: "violated", UNDETERMINED: "undetermined"}
CONFIDENCE = 0.99
DEFAULT_MAX_STEPS = 1000


class MetricsError(ValueError):
    pass


def simulate_batch(system, noise_model, controller, x0, partition: StatePartition, rng, max_steps=DEFAULT_MAX_STEPS,
                   horizon=None):
    """Roll out many trajectories at once.

    Returns ``(outcome, steps)`` per row of ``x0``.  A trajectory is satisfied
    on first entry into a reach region and violated on first entry into the
    avoid state; whatever is left when the step budget runs out is
    undetermined.  With a finite horizon the budget is that horizon.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    x = np.array(np.atleast_2d(x0), dtype=float)
    n = x.shape[0]
    reach = np.zeros(partition.n_states, dtype=bool)
    reach[list(partition.reach_indices)] = True
    budget = max_steps if horizon is None else int(horizon)

    outcome = np.full(n, UNDETERMINED, dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    live = np.ones(n, dtype=bool)

    def settle(t):
        s = partition.locate_many(x[live])
        idx = np.flatnonzero(live)
        hit = reach[s]
        bad = s == partition.avoid_index
        outcome[idx[hit]] = SATISFIED
        outcome[idx[bad]] = VIOLATED
        steps[idx[hit | bad]] = t
        live[idx[hit | bad]] = False
        return s

    settle(0)
    for t in range(budget):
        if not live.any():
            break
        xl = x[live]
        a = controller(xl, t) if horizon is not None else controller(xl)
        w = noise_model.sample(rng, xl.shape[0])
        x[live] = system.step(xl, a, w)
        settle(t + 1)
    steps[live] = budget
    return outcome, steps


def simulate(system, noise_model, controller, x0, partition: StatePartition, rng, max_steps=DEFAULT_MAX_STEPS,
             horizon=None) -> str:
    """Outcome name of one closed-loop trajectory from ``x0``."""
    out, _ = simulate_batch(system, noise_model, controller, np.atleast_2d(np.asarray(x0, dtype=float)),
                            partition, rng, max_steps, horizon)
    return OUTCOME_NAMES[int(out[0])]


def wilson_interval(successes: int, trials: int, confidence: float = CONFIDENCE) -> tuple:
    ci = binomtest(int(successes), int(trials)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class MCEstimate:
    state: int
    x0: list
    trials: int
    successes: int
    undetermined: int
    rate: float
    ci_low: float
    ci_high: float


def sample_initial_states(partition: StatePartition, n: int, rng) -> np.ndarray:
    """Distinct random non-terminal states (all of them when fewer than ``n``)."""
    nt = partition.non_terminal
    if nt.size == 0:
        raise MetricsError("no non-terminal states to sample from")
    return np.sort(rng.choice(nt, size=min(n, nt.size), replace=False))


def run_monte_carlo(system, noise_model, controller, partition: StatePartition, states, n_traj=1000, seed=0,
                    max_steps=DEFAULT_MAX_STEPS, horizon=None, threads=1) -> list:
    """Empirical satisfaction rate from a uniform random point of each state.

    Each initial state gets its own generator spawned from ``seed``, so results
    do not depend on the number of threads.
    """
    states = [int(s) for s in states]
    children = np.random.SeedSequence(seed).spawn(len(states))

    def one(item):
        s, ss = item
        rng = np.random.default_rng(ss)
        region = partition.region(s)
        x0 = rng.uniform(region.lower, region.upper)
        out, _ = simulate_batch(system, noise_model, controller, np.repeat(x0[None], n_traj, axis=0),
                                partition, rng, max_steps, horizon)
        k = int(np.sum(out == SATISFIED))
        lo, hi = wilson_interval(k, n_traj)
        return MCEstimate(s, x0.tolist(), n_traj, k, int(np.sum(out == UNDETERMINED)), k / n_traj, lo, hi)

    items = list(zip(states, children))
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, items))
    return [one(it) for it in items]


@dataclass
class RunReport:
    kind: str
    n_states: int
    n_actions: int
    n_cells: int
    e_avg: float
    p_lower_avg: float
    p_upper_avg: float
    mc_avg: float | None
    initial_states: list
    mc_estimates: list
    violations: list
    timings: dict = field(default_factory=dict)
    memory: dict = field(default_factory=dict)
    seed: int | None = None
    per_state: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mc_estimates"] = [asdict(m) if isinstance(m, MCEstimate) else m for m in self.mc_estimates]
        return d

    @classmethod
    def from_dict(cls, d) -> "RunReport":
        d = dict(d)
        d["mc_estimates"] = [MCEstimate(**m) for m in d["mc_estimates"]]
        return cls(**d)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "RunReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def write_csv(self, path):
        """One row per initial state."""
        by_state = {m.state: m for m in self.mc_estimates}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "p_lower", "p_upper", "mc_rate", "ci_low", "ci_high", "trials", "undetermined",
                        "flagged"])
            flagged = set(self.violations)
            for row in self.per_state:
                m = by_state.get(row["state"])
                if m is None:
                    w.writerow([row["state"], repr(row["p_lower"]), repr(row["p_upper"]), "", "", "", 0, 0, 0])
                    continue
                w.writerow([m.state, repr(row["p_lower"]), repr(row["p_upper"]), repr(m.rate), repr(m.ci_low),
                            repr(m.ci_high), m.trials, m.undetermined, int(m.state in flagged)])


def compute_metrics(result, partition: StatePartition, initial_states, mc_data=None, timings=None, memory=None,
                    n_actions=0, n_cells=0, seed=None) -> RunReport:
    """Tightness over all non-terminal states, averages over ``initial_states``."""
    nt = partition.non_terminal
    if nt.size == 0:
        raise MetricsError("no non-terminal states: every safe state is a reach state")
    S0 = np.asarray(list(initial_states), dtype=np.int64)
    if S0.size == 0:
        raise MetricsError("initial state set is empty")
    if not np.all(np.isin(S0, nt)):
        raise MetricsError("initial states must be non-terminal safe states")
    lo, up = np.asarray(result.p_lower), np.asarray(result.p_upper)
    e_avg = float(np.mean(up[nt] - lo[nt]))

    mc_data = list(mc_data or [])
    violations = []
    for m in mc_data:
        # flag when the confidence interval misses [p_lower, p_upper] entirely
        if m.ci_high < lo[m.state] or m.ci_low > up[m.state]:
            violations.append(m.state)
    per_state = [{"state": int(s), "p_lower": float(lo[s]), "p_upper": float(up[s])} for s in S0]
    return RunReport(
        kind=result.kind,
        n_states=partition.n_states,
        n_actions=int(n_actions),
        n_cells=int(n_cells),
        e_avg=e_avg,
        p_lower_avg=float(lo[S0].mean()),
        p_upper_avg=float(up[S0].mean()),
        mc_avg=float(np.mean([m.rate for m in mc_data])) if mc_data else None,
        initial_states=S0.tolist(),
        mc_estimates=mc_data,
        violations=violations,
        timings=dict(timings or {}),
        memory=dict(memory or {}),
        seed=seed,
        per_state=per_state,
    )
