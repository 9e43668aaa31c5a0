"""Secure state reconstruction.

Recovers every state consistent with a stacked input-output window when up
to s sensors report corrupted values: combinatorial brute force over sensor
subsets, per-subspace pre-processing and threshold voting, majority-vote
reconstruction for redundantly observed systems, combination of subspace
votes for severely attacked systems, and forward propagation of the result.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import AssumptionViolatedError, EmptySubspaceError, NoPlausibleStateError
from .plant import LtiSystem, StackedData, SubspaceData, matrix_powers
from .tolerances import EPS_RANK, EPS_RES_REL, EPS_VOTE_REL


def _states_close(a: np.ndarray, b: np.ndarray) -> bool:
    return float(np.linalg.norm(a - b)) <= EPS_VOTE_REL * (1.0 + float(np.linalg.norm(b)))


def _lex_order(states: np.ndarray) -> np.ndarray:
    if states.shape[0] <= 1:
        return states
    return states[np.lexsort(states.T[::-1])]


@dataclass(frozen=True, eq=False)
class PlausibleSet:
    """Finite list of states, deduplicated and sorted lexicographically."""

    states: np.ndarray
    tie_broken: bool = False

    def __post_init__(self):
        object.__setattr__(self, "states", np.atleast_2d(np.asarray(self.states, dtype=float)))

    @classmethod
    def from_candidates(cls, candidates, tie_broken: bool = False) -> "PlausibleSet":
        arr = np.atleast_2d(np.asarray(list(candidates), dtype=float))
        reps: list[np.ndarray] = []
        counts: list[int] = []
        for x in _lex_order(arr):
            for k, rep in enumerate(reps):
                if _states_close(x, rep):
                    reps[k] = rep + (x - rep) / (counts[k] + 1)
                    counts[k] += 1
                    break
            else:
                reps.append(x.copy())
                counts.append(1)
        return cls(states=_lex_order(np.array(reps)), tie_broken=tie_broken)

    def __len__(self) -> int:
        return self.states.shape[0]

    def __iter__(self):
        return iter(self.states)

    def contains(self, x: np.ndarray) -> bool:
        return any(_states_close(np.asarray(x, dtype=float), s) for s in self.states)

    def matches(self, other: "PlausibleSet") -> bool:
        """Set equality at the vote tolerance (both directions)."""
        return (
            len(self) == len(other)
            and all(other.contains(s) for s in self.states)
            and all(self.contains(s) for s in other.states)
        )


def brute_force_ssr(stacked: StackedData, s: int) -> PlausibleSet:
    """All window-start states consistent with at least p - s sensors.

    Solves the stacked equations of every (p - s)-sensor subset jointly by
    least squares and keeps full-rank solutions with a small joint residual.
    """
    p, n = stacked.sys.p, stacked.sys.n
    if p <= s:
        raise ValueError(f"need p > s, got p = {p}, s = {s}")
    found = []
    for comb in itertools.combinations(range(p), p - s):
        rows = stacked.obs[:, comb, :].transpose(1, 0, 2).reshape(-1, n)
        rhs = stacked.y[:, comb].T.reshape(-1)
        x, _, rank, _ = np.linalg.lstsq(rows, rhs, rcond=EPS_RANK)
        if rank < n:
            continue
        resid = float(np.linalg.norm(rows @ x - rhs))
        if resid <= EPS_RES_REL * (1.0 + float(np.linalg.norm(rhs))):
            found.append(x)
    if not found:
        raise NoPlausibleStateError("no sensor subset is consistent under the attack budget")
    return PlausibleSet.from_candidates(found)


@dataclass(frozen=True, eq=False)
class IndexedSubstates:
    """Per (subspace, sensor) reconstructed substates from consistent local solves."""

    substates: dict
    data: SubspaceData

    def candidates(self, j: int) -> list[tuple[int, np.ndarray]]:
        """(sensor, substate) pairs for subspace j, ascending sensor index."""
        return [
            (i, self.substates[(j, i)])
            for i in range(self.data.p)
            if (j, i) in self.substates
        ]


def preprocess(sub: SubspaceData) -> IndexedSubstates:
    """Solve each per-sensor subspace equation, keeping only consistent pairs.

    Sensors whose data leaves the range of their observability matrix are
    skipped entirely (they cannot vote); per-pair solves with a residual
    above tolerance are omitted as dynamics-inconsistent.
    """
    out: dict = {}
    for j in range(sub.r):
        basis = sub.eig.state_bases[j]
        voters = [
            i for i in range(sub.p)
            if sub.observable[i, j] and not sub.disqualified[i] and sub.images[i][j] is not None
        ]
        if not voters:
            continue
        if basis.shape[1] == 1:
            # one-dimensional subspace: every solve is a scalar projection,
            # batched over the voting sensors
            G = np.stack([sub.images[i][j][:, 0] for i in voters])
            y = sub.sub_y[voters, j]
            w = np.einsum("ka,ka->k", G, y) / np.einsum("ka,ka->k", G, G)
            resid = np.linalg.norm(w[:, None] * G - y, axis=1)
            ok = resid <= EPS_RES_REL * (1.0 + np.linalg.norm(y, axis=1))
            for pos, i in enumerate(voters):
                if ok[pos]:
                    out[(j, i)] = basis[:, 0] * w[pos]
            continue
        for i in voters:
            G = sub.images[i][j]
            y_ij = sub.sub_y[i, j]
            w, *_ = np.linalg.lstsq(G, y_ij, rcond=None)
            if float(np.linalg.norm(G @ w - y_ij)) > EPS_RES_REL * (1.0 + float(np.linalg.norm(y_ij))):
                continue
            out[(j, i)] = basis @ w
    return IndexedSubstates(substates=out, data=sub)


@dataclass(frozen=True, eq=False)
class VoteCluster:
    """A candidate substate with its supporters and disagreeing sensors."""

    state: np.ndarray
    supporters: tuple[int, ...]
    disagree: frozenset

    @property
    def votes(self) -> int:
        return len(self.supporters)


@dataclass(frozen=True, eq=False)
class SubspaceVoteSet:
    """Threshold-passing clusters per subspace, with disagreement sets."""

    clusters: tuple
    threshold: tuple[int, ...]

    @property
    def r(self) -> int:
        return len(self.clusters)


def _greedy_clusters(candidates: list[tuple[int, np.ndarray]]) -> list[tuple[np.ndarray, list[int]]]:
    """Greedy clustering in ascending sensor order with centroid representatives."""
    reps: list[np.ndarray] = []
    members: list[list[int]] = []
    for i, x in candidates:
        for k, rep in enumerate(reps):
            if _states_close(x, rep):
                members[k].append(i)
                reps[k] = rep + (x - rep) / len(members[k])
                break
        else:
            reps.append(np.asarray(x, dtype=float).copy())
            members.append([i])
    return list(zip(reps, members))


def _disagreement(sub: SubspaceData, j: int, x_j: np.ndarray, flat_obs=None) -> frozenset:
    """Sensors contradicting substate x_j in subspace j, plus disqualified ones.

    The comparison is scaled by both sides (backward-error style): the
    predicted measurement O_i^j x_j can dwarf the projected data when the
    subspace projections are strongly oblique, and a data-only scale would
    flag intact sensors over rounding noise.
    """
    if flat_obs is None:
        flat_obs = np.ascontiguousarray(sub.sub_obs[:, j]).reshape(-1, sub.sub_obs.shape[-1])
    predicted = (flat_obs @ x_j).reshape(sub.p, -1)
    y = sub.sub_y[:, j]
    err = np.linalg.norm(predicted - y, axis=1)
    scale = 1.0 + np.linalg.norm(y, axis=1) + np.linalg.norm(predicted, axis=1)
    disagree = (err > EPS_VOTE_REL * scale) & sub.observable[:, j] & ~sub.disqualified
    return frozenset(np.nonzero(disagree | sub.disqualified)[0].tolist())


def threshold_vote(
    idx: IndexedSubstates,
    q: int,
    s: int,
    q_per_subspace: tuple[int, ...] | None = None,
) -> SubspaceVoteSet:
    """Keep substates with at least q + 1 - s supporting sensors per subspace.

    ``q_per_subspace`` optionally tightens the threshold to q_j + 1 - s where
    a subspace is covered by more sensors than the system-level index.
    """
    if q < s:
        raise ValueError(f"threshold voting requires q >= s, got q = {q}, s = {s}")
    sub = idx.data
    per_j: list[tuple[VoteCluster, ...]] = []
    thresholds: list[int] = []
    for j in range(sub.r):
        q_j = q if q_per_subspace is None else q_per_subspace[j]
        need = q_j + 1 - s
        thresholds.append(need)
        flat_obs = np.ascontiguousarray(sub.sub_obs[:, j]).reshape(-1, sub.sub_obs.shape[-1])
        kept = []
        for rep, members in _greedy_clusters(idx.candidates(j)):
            if len(members) >= need:
                kept.append(
                    VoteCluster(
                        state=rep,
                        supporters=tuple(members),
                        disagree=_disagreement(sub, j, rep, flat_obs),
                    )
                )
        if not kept:
            raise EmptySubspaceError(
                f"subspace {j}: no substate reaches {need} votes (attack model violated?)"
            )
        per_j.append(tuple(kept))
    return SubspaceVoteSet(clusters=tuple(per_j), threshold=tuple(thresholds))


def ssr_majority(idx: IndexedSubstates, s: int) -> PlausibleSet:
    """Single-state reconstruction by majority vote in each subspace.

    Assumes enough redundancy that the true substate always wins (caller
    should verify a 2s eigen-observability margin). Ties go to the cluster
    with the lowest supporting sensor index and are flagged.
    """
    sub = idx.data
    total = np.zeros(sub.eig.state_bases[0].shape[0])
    tie = False
    for j in range(sub.r):
        clusters = _greedy_clusters(idx.candidates(j))
        if not clusters:
            raise EmptySubspaceError(f"subspace {j}: no votes at all")
        best = max(len(m) for _, m in clusters)
        winners = [(rep, m) for rep, m in clusters if len(m) == best]
        if len(winners) > 1:
            tie = True
            winners.sort(key=lambda c: min(c[1]))
        rep, members = winners[0]
        if len(members) <= s:
            raise AssumptionViolatedError(
                f"subspace {j}: majority winner has only {len(members)} votes (<= s = {s})"
            )
        total = total + rep
    return PlausibleSet(states=total[None, :], tie_broken=tie)


def ssr_combine(votes: SubspaceVoteSet, s: int) -> PlausibleSet:
    """Sum one cluster per subspace over all combinations whose disagreeing
    sensors stay within the attack budget.

    Scans the full Cartesian product of the per-subspace vote sets, in
    ascending subspace order; the combination count is what makes this
    reconstruction expensive for many subspaces, which the bound-based
    filter avoids.
    """
    found: list[np.ndarray] = []
    for combo in itertools.product(*votes.clusters):
        bad: frozenset = frozenset()
        for cluster in combo:
            bad = bad | cluster.disagree
        if len(bad) > s:
            continue
        total = combo[0].state.copy()
        for cluster in combo[1:]:
            total = total + cluster.state
        found.append(total)
    if not found:
        raise NoPlausibleStateError("no subspace combination stays within the attack budget")
    return PlausibleSet.from_candidates(found)


def propagate(pset: PlausibleSet, sys: LtiSystem, inputs: np.ndarray) -> PlausibleSet:
    """Map window-start states to current time through the dynamics and inputs.

    Cardinality is preserved (no deduplication)."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    t = inputs.shape[0]
    powers = matrix_powers(sys.A, t)
    z = np.zeros(sys.n)
    for k in range(t):
        z = z + powers[t - 1 - k] @ (sys.B @ inputs[k])
    states = (powers[t] @ pset.states.T).T + z
    return PlausibleSet(states=_lex_order(states), tie_broken=pset.tie_broken)
