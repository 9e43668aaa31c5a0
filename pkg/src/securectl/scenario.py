"""Scenario generation and serialization.

Random systems are built as A = R J R^{-1} with n distinct real eigenvalues
in [0.5, 1.2] (so every subspace is one-dimensional), B = I, and sensor rows
constructed so that each eigenvalue is visible to exactly q + 1 randomly
chosen sensors: a random row has its projection onto the spanned bases of the
subspaces it must not see subtracted out. R entries and raw sensor rows are
uniform(-1, 1).

Attacks are "dynamically consistent": each compromised sensor reports the
output of a fake trajectory that starts from a fake initial state and evolves
under the same inputs as the plant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .eigenspace import (
    eigen_decompose,
    eigenvalue_observability_flags,
    observability_report,
)
from .errors import GenerationRetryExceeded, ScenarioFormatError
from .plant import LtiSystem, SafetySet

SCENARIO_VERSION = 1
_MAX_RESAMPLES = 100


@dataclass(frozen=True)
class NominalSchedule:
    """Serializable nominal-input descriptor.

    kind "sinusoid" produces amplitude * (sin t, cos t, -sin t, -cos t, ...)
    over the input channels; "constant" repeats ``value``; "zero" is zero.
    """

    kind: str
    amplitude: float = 0.0
    value: tuple[float, ...] | None = None

    def u(self, tau: int, m: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(m)
        if self.kind == "constant":
            if self.value is None or len(self.value) != m:
                raise ValueError("constant schedule needs a value of length m")
            return np.asarray(self.value, dtype=float)
        if self.kind == "sinusoid":
            out = np.empty(m)
            for c in range(m):
                base = np.sin(float(tau)) if c % 2 == 0 else np.cos(float(tau))
                sign = 1.0 if (c // 2) % 2 == 0 else -1.0
                out[c] = self.amplitude * sign * base
            return out
        raise ValueError(f"unknown schedule kind {self.kind!r}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "amplitude": self.amplitude,
                "value": list(self.value) if self.value is not None else None}

    @classmethod
    def from_json(cls, obj: dict) -> "NominalSchedule":
        return cls(kind=obj["kind"], amplitude=float(obj["amplitude"]),
                   value=tuple(obj["value"]) if obj.get("value") is not None else None)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything needed to reproduce one experiment."""

    sys: LtiSystem
    safety: SafetySet
    s: int
    q: int
    attacked: tuple[int, ...]
    fake_states: tuple
    fake_assignment: tuple[int, ...]  # per attacked sensor, index into fake_states
    x_true: np.ndarray
    u_nom: NominalSchedule
    seed: int
    horizon: int
    gamma: float
    window: int

    def __post_init__(self):
        if len(self.attacked) > self.s:
            raise ValueError("more attacked sensors than the attack budget allows")
        if len(self.fake_assignment) != len(self.attacked):
            raise ValueError("fake_assignment must list one fake index per attacked sensor")


class FakeTrajectoryAttack:
    """Attack signal driven by fake trajectories under the shared inputs."""

    def __init__(self, scn: Scenario):
        self.sys = scn.sys
        self.attacked = scn.attacked
        self.assignment = dict(zip(scn.attacked, scn.fake_assignment))

    def e(self, x_true_now: np.ndarray, fakes_now: list[np.ndarray]) -> np.ndarray:
        """Attack vector given the current true and fake states."""
        C = self.sys.C
        out = np.zeros(self.sys.p)
        for i in self.attacked:
            fake = fakes_now[self.assignment[i]]
            out[i] = C[i] @ (np.asarray(fake) - np.asarray(x_true_now))
        return out


def make_attack(scn: Scenario) -> FakeTrajectoryAttack:
    """Fake-trajectory attack generator for the scenario's compromised sensors."""
    return FakeTrajectoryAttack(scn)


def _distinct_eigenvalues(rng: np.random.Generator, n: int) -> np.ndarray:
    """n eigenvalues in [0.5, 1.2] with pairwise gap >= 0.02.

    Sampled from a jittered grid rather than rejection: the per-sensor image
    directions are Vandermonde-like in the eigenvalues, so clustered draws
    make the subspace decomposition needlessly ill conditioned at larger n.
    """
    if n == 1:
        return rng.uniform(0.5, 1.2, size=1)
    width = 0.7 / n
    pad = min(0.01, width / 4)
    offsets = rng.uniform(pad, width - pad, size=n)
    return 0.5 + np.arange(n) * width + offsets


def _well_conditioned_basis(rng: np.random.Generator, n: int) -> np.ndarray:
    for _ in range(_MAX_RESAMPLES):
        R = rng.uniform(-1.0, 1.0, size=(n, n))
        if np.linalg.cond(R) <= 1e3:
            return R
    raise GenerationRetryExceeded("could not sample a well-conditioned eigenbasis")


def _blind_spot_rows(
    rng: np.random.Generator,
    R: np.ndarray,
    p: int,
    q: int,
    min_coupling: float = 0.05,
    row_tries: int = 25,
) -> np.ndarray | None:
    """Sensor rows where each subspace j is seen by exactly q + 1 sensors.

    Rows are resampled until every subspace a sensor is supposed to see is
    coupled with at least ``min_coupling`` relative gain; a nominally
    observable pair with near-zero coupling would contradict the advertised
    observability structure at working precision. Returns None when the
    basis geometry makes the floor unreachable (a seen direction almost
    inside a hidden span), so the caller can redraw the basis.
    """
    n = R.shape[0]
    observers = [rng.choice(p, size=q + 1, replace=False) for _ in range(n)]
    col_norms = np.linalg.norm(R, axis=0)
    C = np.zeros((p, n))
    for i in range(p):
        hidden = [j for j in range(n) if i not in observers[j]]
        seen = [j for j in range(n) if j not in hidden]
        if not seen:
            continue  # sensor observes nothing: zero row
        W = R[:, hidden] if hidden else None
        for _ in range(row_tries):
            row = rng.uniform(-1.0, 1.0, size=n)
            if W is not None:
                row = row - W @ np.linalg.solve(W.T @ W, W.T @ row)
            scale = np.linalg.norm(row)
            if scale < 1e-9:
                continue
            gains = np.abs(row @ R[:, seen]) / (scale * col_norms[seen])
            if gains.min() >= min_coupling:
                break
        else:
            return None
        C[i] = row
    return C


def _random_system_core(n: int, p: int, q: int, rng) -> LtiSystem:
    """Generation loop; the requested index is verified with per-sensor rank tests."""
    for _ in range(_MAX_RESAMPLES):
        eigs = _distinct_eigenvalues(rng, n)
        R = _well_conditioned_basis(rng, n)
        A = R @ np.diag(eigs) @ np.linalg.inv(R)
        C = _blind_spot_rows(rng, R, p, q)
        if C is None:
            continue
        sys = LtiSystem(A=A, B=np.eye(n), C=C)
        eig = eigen_decompose(A)
        if eig.r != n:
            continue
        flags = eigenvalue_observability_flags(A, C, eig)
        if int(flags.sum(axis=0).min()) - 1 == q:
            return sys
    raise GenerationRetryExceeded(
        f"no system with eigen index {q} after {_MAX_RESAMPLES} attempts"
    )


def random_system(n: int, p: int, q: int, s: int, seed=None, rng=None):
    """Random plant with r = n one-dimensional subspaces and exact index q.

    Returns (LtiSystem, ObservabilityReport); generation is retried until the
    rank tests confirm the requested index, which the returned report
    restates.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if q + 1 > p:
        raise ValueError(f"q + 1 = {q + 1} observers per subspace need p >= {q + 1}")
    if rng is None:
        rng = np.random.default_rng(seed)
    sys = _random_system_core(n, p, q, rng)
    return sys, observability_report(sys, eigen_decompose(sys.A))


def attack_group_sizes(s: int, q: int) -> list[int]:
    """Default split of s compromised sensors into vote-passing groups.

    Groups of q + 1 - s sensors can pass threshold voting; the remainder is
    spread over the existing groups. When no group can pass (q >= 2s), all
    compromised sensors follow a single fake trajectory.
    """
    if s <= 0:
        return []
    need = q + 1 - s
    g = s // need if need >= 1 else 0
    if g < 1:
        return [s]
    sizes = [need] * g
    for k in range(s - g * need):
        sizes[k % g] += 1
    return sizes


def random_scenario(
    n: int,
    p: int,
    q: int,
    s: int,
    seed: int,
    horizon: int = 40,
    gamma: float = 0.5,
    window: int | None = None,
    amplitude: float = 2.0,
    group_sizes: list[int] | None = None,
    box: float = 10.0,
) -> Scenario:
    """Full random scenario: plant, box safety set, fake-trajectory attack."""
    if q + 1 > p:
        raise ValueError(f"q + 1 = {q + 1} observers per subspace need p >= {q + 1}")
    rng = np.random.default_rng(seed)
    sys = _random_system_core(n, p, q, rng)
    safety = SafetySet(H=np.vstack([np.eye(n), -np.eye(n)]), g=box * np.ones(2 * n))

    attacked = tuple(int(i) for i in rng.choice(p, size=s, replace=False)) if s > 0 else ()
    sizes = attack_group_sizes(s, q) if group_sizes is None else list(group_sizes)
    if sum(sizes) != s:
        raise ValueError(f"group sizes {sizes} do not cover {s} attacked sensors")
    assignment: list[int] = []
    for fake_idx, size in enumerate(sizes):
        assignment.extend([fake_idx] * size)

    x_true = rng.uniform(-0.5 * box, 0.5 * box, size=n)
    fakes = tuple(rng.uniform(-0.5 * box, 0.5 * box, size=n) for _ in sizes)
    return Scenario(
        sys=sys,
        safety=safety,
        s=s,
        q=q,
        attacked=attacked,
        fake_states=fakes,
        fake_assignment=tuple(assignment),
        x_true=x_true,
        u_nom=NominalSchedule(kind="sinusoid", amplitude=amplitude),
        seed=seed,
        horizon=horizon,
        gamma=gamma,
        window=n if window is None else window,
    )


# Closed-loop demo setup: an unstable coupled 4-state plant watched by 11
# sensors with index 8, five of them compromised (two follow one fake
# trajectory, three follow another; no group reaches the vote threshold, so
# every reconstruction stays exact), inside the box |x_i| <= 10.
_FIXTURE_A = np.array(
    [[0.8, 0.4, 0.0, 0.0],
     [0.4, 0.6, 0.2, 0.0],
     [0.0, 0.2, 0.5, 0.3],
     [0.0, 0.0, 0.3, 0.7]]
)
FIXTURE_SEED = 7


def fixture_scenario(horizon: int = 60, gamma: float = 0.5) -> Scenario:
    """The built-in closed-loop comparison scenario."""
    n, p, q, s = 4, 11, 8, 5
    rng = np.random.default_rng(FIXTURE_SEED)
    eig = eigen_decompose(_FIXTURE_A)
    R = np.hstack(eig.state_bases)
    for _ in range(_MAX_RESAMPLES):
        C = _blind_spot_rows(rng, R, p, q)
        if C is None:
            continue
        sys = LtiSystem(A=_FIXTURE_A, B=np.eye(n), C=C)
        report = observability_report(sys, eig)
        if report.eigen_index == q:
            break
    else:
        raise GenerationRetryExceeded("fixture sensor generation failed")
    attacked = tuple(int(i) for i in rng.choice(p, size=s, replace=False))
    return Scenario(
        sys=sys,
        safety=SafetySet(H=np.vstack([np.eye(n), -np.eye(n)]), g=10.0 * np.ones(2 * n)),
        s=s,
        q=q,
        attacked=attacked,
        fake_states=(-np.ones(n), 2.0 * np.ones(n)),
        fake_assignment=(0, 0, 1, 1, 1),
        x_true=np.ones(n),
        u_nom=NominalSchedule(kind="sinusoid", amplitude=4.0),
        seed=FIXTURE_SEED,
        horizon=horizon,
        gamma=gamma,
        window=n,
    )


def _matrix(obj, name: str) -> np.ndarray:
    try:
        return np.asarray(obj[name], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"bad or missing field {name!r}: {exc}") from exc


def scenario_to_json(scn: Scenario) -> dict:
    return {
        "version": SCENARIO_VERSION,
        "seed": scn.seed,
        "s": scn.s,
        "q": scn.q,
        "system": {"A": scn.sys.A.tolist(), "B": scn.sys.B.tolist(), "C": scn.sys.C.tolist()},
        "safety": {"H": scn.safety.H.tolist(), "g": scn.safety.g.tolist()},
        "attacked": list(scn.attacked),
        "fake_states": [np.asarray(f).tolist() for f in scn.fake_states],
        "fake_assignment": list(scn.fake_assignment),
        "x_true": np.asarray(scn.x_true).tolist(),
        "u_nom": scn.u_nom.to_json(),
        "horizon": scn.horizon,
        "gamma": scn.gamma,
        "window": scn.window,
    }


def scenario_from_json(obj: dict) -> Scenario:
    if not isinstance(obj, dict):
        raise ScenarioFormatError("scenario file must hold a JSON object")
    version = obj.get("version")
    if version != SCENARIO_VERSION:
        raise ScenarioFormatError(f"unsupported scenario version {version!r} (expected {SCENARIO_VERSION})")
    try:
        system = obj["system"]
        safety = obj["safety"]
        scn = Scenario(
            sys=LtiSystem(A=_matrix(system, "A"), B=_matrix(system, "B"), C=_matrix(system, "C")),
            safety=SafetySet(H=_matrix(safety, "H"), g=_matrix(safety, "g")),
            s=int(obj["s"]),
            q=int(obj["q"]),
            attacked=tuple(int(i) for i in obj["attacked"]),
            fake_states=tuple(np.asarray(f, dtype=float) for f in obj["fake_states"]),
            fake_assignment=tuple(int(i) for i in obj["fake_assignment"]),
            x_true=np.asarray(obj["x_true"], dtype=float),
            u_nom=NominalSchedule.from_json(obj["u_nom"]),
            seed=int(obj["seed"]),
            horizon=int(obj["horizon"]),
            gamma=float(obj["gamma"]),
            window=int(obj["window"]),
        )
    except ScenarioFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"malformed scenario file: {exc}") from exc
    return scn


def save_scenario(scn: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_json(scn), fh, indent=1)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return scenario_from_json(obj)
