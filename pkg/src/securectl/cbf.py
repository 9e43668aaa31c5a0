"""Barrier-condition assembly for the safety filter.

Turns a plausible-state set (or its per-subspace vote sets) into the linear
input constraint H B u >= M + Q that keeps the polytope {h(x) >= 0} forward
invariant at decay rate gamma. Three right-hand sides are available: the
exact worst case over the plausible set, a cheap conservative bound that
skips combination filtering entirely, and a partial-combination bound that
filters only a chosen subset of subspaces.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import EmptySetError, EmptySubspaceError, NoPlausibleStateError
from .plant import LtiSystem, SafetySet, matrix_powers
from .qp import solve_least_deviation
from .ssr import PlausibleSet, SubspaceVoteSet


@dataclass(frozen=True, eq=False)
class CbfGains:
    """Constraint gains for one window length.

    k0 = H ((1 - gamma) I - A) maps a current state to the barrier decrement;
    k = k0 A^t pulls that back to the window-start state. Rebuild when the
    window length changes.
    """

    sys: LtiSystem
    gamma: float
    window_len: int
    k0: np.ndarray
    k: np.ndarray

    @classmethod
    def build(cls, sys: LtiSystem, safety: SafetySet, gamma: float, window_len: int) -> "CbfGains":
        if not 0.0 < gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
        k0 = safety.H @ ((1.0 - gamma) * np.eye(sys.n) - sys.A)
        k = k0 @ np.linalg.matrix_power(sys.A, window_len)
        return cls(sys=sys, gamma=gamma, window_len=window_len, k0=k0, k=k)


@dataclass(frozen=True, eq=False)
class CbfConstraint:
    """Linear input constraint G u >= rhs with a provenance tag."""

    G: np.ndarray
    rhs: np.ndarray
    kind: str  # "exact" | "upper" | "partial"
    subset: tuple[int, ...] | None = None


def exact_M(pset: PlausibleSet, gains: CbfGains) -> np.ndarray:
    """Entry-wise max of K x over the window-start plausible set."""
    if len(pset) == 0:
        raise EmptySetError("plausible set is empty")
    return (gains.k @ pset.states.T).max(axis=1)


def q_of_U(inputs: np.ndarray, gains: CbfGains, g: np.ndarray) -> np.ndarray:
    """Input-dependent part of the constraint: K0 (sum A^{t-1-k} B u(k)) - gamma g."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    t = inputs.shape[0]
    sys = gains.sys
    powers = matrix_powers(sys.A, max(t - 1, 0))
    z = np.zeros(sys.n)
    for k in range(t):
        z = z + powers[t - 1 - k] @ (sys.B @ inputs[k])
    return gains.k0 @ z - gains.gamma * np.asarray(g, dtype=float).reshape(-1)


def _per_subspace_max(votes: SubspaceVoteSet, gains: CbfGains) -> list[np.ndarray]:
    out = []
    for j, clusters in enumerate(votes.clusters):
        if not clusters:
            raise EmptySubspaceError(f"subspace {j} has no vote clusters")
        out.append(np.max([gains.k @ c.state for c in clusters], axis=0))
    return out


def upper_bound_M(votes: SubspaceVoteSet, gains: CbfGains) -> np.ndarray:
    """Conservative bound: sum of per-subspace entry-wise maxima.

    Uses the worst cluster per subspace independently, even if that
    combination is not plausible; no combination enumeration at all.
    """
    per_j = _per_subspace_max(votes, gains)
    total = np.zeros_like(per_j[0])
    for m_j in per_j:
        total = total + m_j
    return total


def partial_bound_M(
    votes: SubspaceVoteSet,
    subset: tuple[int, ...],
    s: int,
    gains: CbfGains,
) -> np.ndarray:
    """Tighter bound: filter combinations inside ``subset``, bound the rest.

    Enumerates cluster combinations of the selected subspaces, keeps those
    whose disagreeing sensors stay within the attack budget, and takes the
    entry-wise max of K over the partial sums; unselected subspaces
    contribute their independent maxima.
    """
    subset = tuple(sorted(set(int(j) for j in subset)))
    r = votes.r
    if any(j < 0 or j >= r for j in subset):
        raise ValueError(f"subset {subset} out of range for r = {r}")
    if not subset:
        return upper_bound_M(votes, gains)

    per_j = _per_subspace_max(votes, gains)
    free = np.zeros_like(per_j[0])
    for j in range(r):
        if j not in subset:
            free = free + per_j[j]

    partial_sums: list[np.ndarray] = []
    for combo in itertools.product(*(votes.clusters[j] for j in subset)):
        bad: frozenset = frozenset()
        for cluster in combo:
            bad = bad | cluster.disagree
        if len(bad) > s:
            continue
        total = combo[0].state.copy()
        for cluster in combo[1:]:
            total = total + cluster.state
        partial_sums.append(total)
    if not partial_sums:
        raise NoPlausibleStateError(
            "no combination over the selected subspaces stays within the attack budget"
        )
    m_sel = np.max([gains.k @ x for x in partial_sums], axis=0)
    return free + m_sel


def default_partial_subset(votes: SubspaceVoteSet) -> tuple[int, ...]:
    """Half the subspaces, picked where the vote sets are most ambiguous."""
    r = votes.r
    take = (r + 1) // 2
    order = sorted(range(r), key=lambda j: (-len(votes.clusters[j]), j))
    return tuple(sorted(order[:take]))


def assemble_constraint(
    m_value: np.ndarray,
    q_value: np.ndarray,
    sys: LtiSystem,
    safety: SafetySet,
    kind: str = "exact",
    subset: tuple[int, ...] | None = None,
) -> CbfConstraint:
    """Final input constraint H B u >= m_value + q_value."""
    m_value = np.asarray(m_value, dtype=float).reshape(-1)
    q_value = np.asarray(q_value, dtype=float).reshape(-1)
    if m_value.shape != q_value.shape or m_value.shape[0] != safety.l:
        raise ValueError("constraint pieces disagree with the safety set row count")
    return CbfConstraint(G=safety.H @ sys.B, rhs=m_value + q_value, kind=kind, subset=subset)


@dataclass(frozen=True, eq=False)
class SafetyEvaluation:
    """h(x), whether x is inside the safe set, and its distance to the set."""

    h: np.ndarray
    inside: bool
    distance: float


def h_eval(safety: SafetySet, x: np.ndarray) -> SafetyEvaluation:
    """Evaluate the barrier at x and the Euclidean distance to the safe set.

    The distance is the optimum of the least-deviation program projecting x
    onto {y : H y + g >= 0} (zero when x is inside).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    h = safety.H @ x + safety.g
    inside = bool(h.min() >= 0.0)
    if inside:
        return SafetyEvaluation(h=h, inside=True, distance=0.0)
    res = solve_least_deviation(x, safety.H, -safety.g)
    if res.status != "optimal":
        raise EmptySetError(f"projection onto the safe set failed: {res.status}")
    return SafetyEvaluation(h=h, inside=False, distance=float(np.linalg.norm(res.u_star - x)))
