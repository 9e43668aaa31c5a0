"""Experiment drivers: closed-loop simulation and runtime benchmarks.

The closed-loop driver simulates the attacked plant, filters the nominal
input through the chosen barrier constraint once the data window is full,
and records per-step reconstruction time, filter cost, barrier margin, and
plausible-set cardinality. Benchmark runners time the reconstruction and
bound computations on freshly generated scenarios.

Timing covers only the per-step reconstruction or bound computation: the
subspace projections depend only on (A, C) and the window length, so they
are built once per scenario outside the timed region, as an online
implementation would.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cbf import (
    CbfGains,
    assemble_constraint,
    default_partial_subset,
    exact_M,
    h_eval,
    partial_bound_M,
    q_of_U,
    upper_bound_M,
)
from .eigenspace import eigen_decompose
from .errors import FilterStepError, RankDeficientError, SecurectlError
from .plant import IoWindow, SubspaceProjector, step, stack
from .qp import solve_least_deviation
from .scenario import Scenario, make_attack, random_scenario
from .ssr import brute_force_ssr, preprocess, ssr_combine, threshold_vote

METHODS = ("nominal", "brute", "decomp-ssr", "upper-bound", "partial")


@dataclass(frozen=True, eq=False)
class StepRecord:
    """One (step, method) row of a run."""

    step: int
    method: str
    recon_seconds: float
    cost: float
    h_min: float
    cardinality: int | None


@dataclass(eq=False)
class ClosedLoopResult:
    scenario: Scenario
    method: str
    records: list = field(default_factory=list)
    states: np.ndarray | None = None
    inputs: np.ndarray | None = None
    shadow_costs: dict = field(default_factory=dict)


class _Pipeline:
    """Precomputed per-scenario machinery shared by all filter methods.

    Gains and subspace projections depend on the window length, which takes
    one shorter value at the first reconstructible step, so both are cached
    per length.
    """

    def __init__(self, scn: Scenario, gamma: float | None = None):
        self.scn = scn
        self.sys = scn.sys
        self.safety = scn.safety
        self.gamma = scn.gamma if gamma is None else gamma
        self.eig = eigen_decompose(self.sys.A)
        self._gains: dict[int, CbfGains] = {}
        self._projectors: dict[int, SubspaceProjector] = {}

    def gains_for(self, t: int) -> CbfGains:
        if t not in self._gains:
            self._gains[t] = CbfGains.build(self.sys, self.safety, self.gamma, t)
        return self._gains[t]

    def projector_for(self, t: int) -> SubspaceProjector:
        if t not in self._projectors:
            self._projectors[t] = SubspaceProjector(self.sys, self.eig, t)
        return self._projectors[t]

    def votes(self, stacked):
        sub = self.projector_for(stacked.t).apply(stacked)
        idx = preprocess(sub)
        return threshold_vote(idx, self.scn.q, self.scn.s)

    def m_value(self, method: str, stacked, partial_subset=None):
        """(m vector, plausible-set cardinality or None, provenance, subset)."""
        s = self.scn.s
        gains = self.gains_for(stacked.t)
        if method == "brute":
            pset = brute_force_ssr(stacked, s)
            return exact_M(pset, gains), len(pset), "exact", None
        if method == "decomp-ssr":
            pset = ssr_combine(self.votes(stacked), s)
            return exact_M(pset, gains), len(pset), "exact", None
        if method == "upper-bound":
            return upper_bound_M(self.votes(stacked), gains), None, "upper", None
        if method == "partial":
            votes = self.votes(stacked)
            subset = default_partial_subset(votes) if partial_subset is None else tuple(partial_subset)
            return partial_bound_M(votes, subset, s, gains), None, "partial", subset
        raise ValueError(f"unknown method {method!r}")

    def filter_input(self, method: str, stacked, u_nom, partial_subset=None):
        """(u, recon seconds, cardinality). Raises on infeasibility."""
        t0 = time.perf_counter()
        m_vec, card, kind, subset = self.m_value(method, stacked, partial_subset)
        recon_s = time.perf_counter() - t0
        gains = self.gains_for(stacked.t)
        q_vec = q_of_U(stacked_inputs(stacked), gains, self.safety.g)
        con = assemble_constraint(m_vec, q_vec, self.sys, self.safety, kind=kind, subset=subset)
        res = solve_least_deviation(u_nom, con.G, con.rhs)
        if res.status != "optimal":
            raise FilterStepError(-1, f"safety program {res.status} for method {method}")
        return res.u_star, recon_s, card


def stacked_inputs(stacked) -> np.ndarray:
    """Window inputs recovered from the stacked input vector (drops the zero block)."""
    m = stacked.sys.m
    return stacked.u_stack[: stacked.t * m].reshape(stacked.t, m)


def run_closed_loop(
    scn: Scenario,
    method: str,
    horizon: int | None = None,
    gamma: float | None = None,
    shadow: tuple[str, ...] = (),
    partial_subset: tuple[int, ...] | None = None,
) -> ClosedLoopResult:
    """Simulate the attacked plant in closed loop with one filter method.

    Filtering starts at the first step with n output samples in the window
    (one step before the receding horizon fills), so the forward-invariance
    premise is evaluated at x(n-1). Filtered runs hold the input at zero
    until then; the nominal run applies the nominal schedule from step 0.

    ``shadow`` methods are evaluated on the same window each filtered step
    (their inputs are computed but never applied), which makes per-step cost
    comparisons across constraint variants well defined.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    horizon = scn.horizon if horizon is None else horizon
    if scn.window + 1 < scn.sys.n:
        raise ValueError(f"window {scn.window} cannot hold n = {scn.sys.n} output samples")
    pipe = _Pipeline(scn, gamma=gamma) if method != "nominal" or shadow else None
    attack = make_attack(scn)
    sys = scn.sys

    x = np.asarray(scn.x_true, dtype=float).copy()
    fakes = [np.asarray(f, dtype=float).copy() for f in scn.fake_states]
    win = IoWindow(sys.m, sys.p, limit=scn.window)
    win.record_output(sys.C @ x + attack.e(x, fakes))

    result = ClosedLoopResult(scenario=scn, method=method)
    result.shadow_costs = {name: [] for name in shadow}
    states = [x.copy()]
    applied = []

    for tau in range(horizon):
        u_nom = scn.u_nom.u(tau, sys.m)
        h_min = float(np.min(scn.safety.H @ x + scn.safety.g))
        u, recon_s, card = (u_nom if method == "nominal" else np.zeros(sys.m)), 0.0, None
        if pipe is not None and win.length + 1 >= sys.n:
            stacked = stack(sys, win)
            try:
                if method != "nominal":
                    u, recon_s, card = pipe.filter_input(method, stacked, u_nom, partial_subset)
                for name in shadow:
                    u_shadow, _, _ = pipe.filter_input(name, stacked, u_nom, partial_subset)
                    result.shadow_costs[name].append(
                        (tau, float(np.linalg.norm(u_shadow - u_nom)))
                    )
            except FilterStepError as exc:
                raise FilterStepError(tau, exc.reason) from exc
            except SecurectlError as exc:
                raise FilterStepError(tau, str(exc)) from exc
        result.records.append(
            StepRecord(
                step=tau,
                method=method,
                recon_seconds=recon_s,
                cost=float(np.linalg.norm(u - u_nom)),
                h_min=h_min,
                cardinality=card,
            )
        )
        x, _ = step(sys, x, u, np.zeros(sys.p))
        fakes = [sys.A @ f + sys.B @ u for f in fakes]
        y = sys.C @ x + attack.e(x, fakes)
        win.record_step(u, y)
        states.append(x.copy())
        applied.append(u)

    result.states = np.array(states)
    result.inputs = np.array(applied)
    return result


def open_loop_window(scn: Scenario, rng=None, inputs: np.ndarray | None = None):
    """Drive the attacked plant open loop until the data window is full.

    Inputs come from ``inputs`` when given, otherwise uniform(-2, 2) draws
    from ``rng``, otherwise the scenario's nominal schedule. Returns the
    window plus the true/fake states at the window end.
    """
    sys = scn.sys
    attack = make_attack(scn)
    steps = scn.window
    if inputs is None:
        if rng is not None:
            inputs = rng.uniform(-2.0, 2.0, size=(steps, sys.m))
        else:
            inputs = np.array([scn.u_nom.u(tau, sys.m) for tau in range(steps)])
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))

    x = np.asarray(scn.x_true, dtype=float).copy()
    fakes = [np.asarray(f, dtype=float).copy() for f in scn.fake_states]
    win = IoWindow(sys.m, sys.p, limit=None)
    win.record_output(sys.C @ x + attack.e(x, fakes))
    for u in inputs:
        x, _ = step(sys, x, u, np.zeros(sys.p))
        fakes = [sys.A @ f + sys.B @ u for f in fakes]
        win.record_step(u, sys.C @ x + attack.e(x, fakes))
    return win, x, fakes


def _time_call(fn) -> tuple[float, object]:
    t0 = time.perf_counter()
    out = fn()
    return time.perf_counter() - t0, out


def _bench_one(scn: Scenario, rng, methods: tuple[str, ...]) -> dict:
    """Time each reconstruction/bound method once on a fresh data window."""
    pipe = _Pipeline(scn)
    win, _, _ = open_loop_window(scn, rng=rng)
    stacked = stack(scn.sys, win)
    projector = pipe.projector_for(stacked.t)
    gains = pipe.gains_for(stacked.t)
    times = {}
    s, q = scn.s, scn.q

    def decomp_pipeline(final):
        sub = projector.apply(stacked)
        votes = threshold_vote(preprocess(sub), q, s)
        return final(votes)

    for name in methods:
        if name == "brute":
            dt, _ = _time_call(lambda: brute_force_ssr(stacked, s))
        elif name == "decomp-ssr":
            dt, _ = _time_call(lambda: decomp_pipeline(lambda v: ssr_combine(v, s)))
        elif name == "upper-bound":
            dt, _ = _time_call(lambda: decomp_pipeline(lambda v: upper_bound_M(v, gains)))
        else:
            raise ValueError(f"benchmark does not cover method {name!r}")
        times[name] = dt
    return times


def _bench_retrying(make_scenario, methods: tuple[str, ...], tries: int = 20) -> dict:
    """Time one scenario, redrawing when the subspace geometry degenerates."""
    for shift in range(tries):
        scn = make_scenario(shift * 1_000_003)
        rng = np.random.default_rng(scn.seed + 1)
        try:
            return _bench_one(scn, rng, methods)
        except RankDeficientError:
            continue
    raise RankDeficientError(f"no well-conditioned scenario in {tries} draws")


def worst_case_combinations(q: int, s: int, r: int) -> int:
    """Worst-case combination count of the vote-combining reconstruction."""
    per = (q + 1) // (q + 1 - s) if q + 1 - s >= 1 else 0
    return per ** r


def bench_sensors(
    n: int,
    s: int,
    q: int,
    p_values: list[int],
    runs: int,
    seed: int,
) -> list[dict]:
    """Mean/std reconstruction time per sensor count; one row per (p, method)."""
    methods = ("brute", "decomp-ssr", "upper-bound")
    rows = []
    for p in p_values:
        if p < q + 1:
            raise ValueError(f"p = {p} cannot give {q + 1} observers per subspace")
        samples = {name: [] for name in methods}
        for run in range(runs):
            times = _bench_retrying(
                lambda shift: random_scenario(n, p, q, s, seed=seed + 7919 * run + 104729 * p + shift),
                methods,
            )
            for name, dt in times.items():
                samples[name].append(dt)
        for name in methods:
            arr = np.array(samples[name])
            rows.append(
                {
                    "p": p,
                    "method": name,
                    "mean_s": float(arr.mean()),
                    "std_s": float(arr.std()),
                    "combos": math.comb(p, s) if name == "brute" else worst_case_combinations(q, s, n),
                }
            )
    return rows


def bench_subspaces(
    p: int,
    s: int,
    q: int,
    r_values: list[int],
    runs: int,
    seed: int,
) -> list[dict]:
    """Mean/std time per subspace count (state dimension n = r)."""
    methods = ("decomp-ssr", "upper-bound")
    rows = []
    for r in r_values:
        samples = {name: [] for name in methods}
        for run in range(runs):
            # a slightly longer window keeps the per-sensor image geometry
            # well conditioned as the subspace count grows
            times = _bench_retrying(
                lambda shift: random_scenario(
                    r, p, q, s, seed=seed + 7919 * run + 104729 * r + shift, window=r + 4
                ),
                methods,
            )
            for name, dt in times.items():
                samples[name].append(dt)
        for name in methods:
            arr = np.array(samples[name])
            rows.append(
                {
                    "r": r,
                    "method": name,
                    "mean_s": float(arr.mean()),
                    "std_s": float(arr.std()),
                    "bound_combos": worst_case_combinations(q, s, r),
                }
            )
    return rows


def log_slope(xs: list[float], means: list[float]) -> float:
    """Least-squares slope of log(mean time) against the swept parameter."""
    xs = np.asarray(xs, dtype=float)
    ys = np.log(np.maximum(np.asarray(means, dtype=float), 1e-12))
    return float(np.polyfit(xs, ys, 1)[0])
