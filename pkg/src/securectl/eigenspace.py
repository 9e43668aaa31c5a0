"""Invariant-subspace analysis of the state matrix.

Splits a real square matrix into invariant subspaces, one per distinct
eigenvalue with conjugate pairs merged into a single real subspace, builds
the canonical oblique projections onto those subspaces, and classifies which
sensors of an output matrix can see which subspace.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DefectiveToleranceError, RankDeficientError
from .tolerances import EPS_LIN, EPS_RANK


def eig_cluster_tol(A: np.ndarray) -> float:
    """Absolute gap below which two computed eigenvalues count as one root."""
    return 1e-7 * max(1.0, float(np.linalg.norm(A, 2)))


@dataclass(frozen=True, eq=False)
class EigenStructure:
    """Distinct eigenvalues of A with real invariant-subspace bases and projections.

    ``eigenvalues[j]`` is one representative per merged conjugate pair (real
    eigenvalues carry a zero imaginary part), ``multiplicities[j]`` its
    algebraic multiplicity, ``state_bases[j]`` an n x n_j real basis of the
    invariant subspace (n_j = 2 * multiplicity for a complex pair), and
    ``state_projections[j]`` the n x n oblique projection onto it.
    """

    eigenvalues: tuple[complex, ...]
    multiplicities: tuple[int, ...]
    state_bases: tuple[np.ndarray, ...]
    state_projections: tuple[np.ndarray, ...]

    @property
    def r(self) -> int:
        return len(self.eigenvalues)

    @property
    def subspace_dims(self) -> tuple[int, ...]:
        return tuple(b.shape[1] for b in self.state_bases)

    def is_complex_pair(self, j: int) -> bool:
        return self.eigenvalues[j].imag != 0.0


def projection_from_bases(bases: list[np.ndarray], j: int) -> np.ndarray:
    """Oblique projection onto span(bases[j]) along the span of the others.

    With S = [S_1 ... S_r] of full column rank, the projection is
    [0 ... S_j ... 0] (S^T S)^{-1} S^T: it fixes span(S_j) and annihilates
    every other span(S_k). The left inverse is evaluated through an SVD
    pseudoinverse; forming S^T S explicitly would square the conditioning of
    nearly coherent bases.
    """
    S = np.hstack(bases)
    sv = np.linalg.svd(S, compute_uv=False)
    if S.shape[1] > S.shape[0] or sv[-1] <= EPS_LIN * max(1.0, sv[0]):
        raise RankDeficientError(
            f"stacked basis is rank deficient (smallest singular value {sv[-1]:.3e})"
        )
    padded = [b if k == j else np.zeros_like(b) for k, b in enumerate(bases)]
    L = np.hstack(padded)
    return L @ np.linalg.pinv(S, rcond=EPS_LIN)


def _cluster_eigenvalues(evals: np.ndarray, tol: float) -> list[dict]:
    """Greedy clustering of eigenvalues; numerically split roots are re-merged."""
    order = np.lexsort((evals.imag, evals.real))
    groups: list[dict] = []
    for idx in order:
        lam = evals[idx]
        for g in groups:
            if abs(lam - g["mean"]) <= tol:
                g["members"].append(int(idx))
                g["mean"] = complex(np.mean(evals[g["members"]]))
                break
        else:
            groups.append({"members": [int(idx)], "mean": complex(lam)})
    return groups


def _merge_conjugates(groups: list[dict], tol: float) -> list[dict]:
    merged: list[dict] = []
    used: set[int] = set()
    for a, g in enumerate(groups):
        if a in used:
            continue
        mean = g["mean"]
        if abs(mean.imag) <= tol:
            merged.append({"rep": complex(mean.real, 0.0), "members": list(g["members"]), "pair": False})
            used.add(a)
            continue
        partner = None
        for b in range(a + 1, len(groups)):
            if b not in used and abs(np.conj(mean) - groups[b]["mean"]) <= tol:
                partner = b
                break
        if partner is None:
            raise DefectiveToleranceError(
                f"complex eigenvalue {mean:.6g} has no conjugate partner at tolerance {tol:.1e}"
            )
        rep = mean if mean.imag > 0 else groups[partner]["mean"]
        merged.append({"rep": rep, "members": g["members"] + groups[partner]["members"], "pair": True})
        used.update((a, partner))
    merged.sort(key=lambda c: (c["rep"].real, abs(c["rep"].imag)))
    return merged


def _invariant_basis(A: np.ndarray, evals: np.ndarray, members: list[int]) -> np.ndarray:
    """Orthonormal basis of the invariant subspace for one eigenvalue cluster.

    Uses an ordered real Schur form; each Schur eigenvalue is matched to the
    nearest computed eigenvalue, which is robust as long as clusters are
    separated by more than the Schur recomputation error.
    """
    member_set = set(members)

    def select(re: float, im: float) -> bool:
        lam = complex(re, im)
        return int(np.argmin(np.abs(evals - lam))) in member_set

    _, Z, sdim = linalg.schur(A, output="real", sort=select)
    if sdim != len(members):
        raise DefectiveToleranceError(
            f"Schur reordering selected {sdim} directions for a cluster of size {len(members)}"
        )
    return np.ascontiguousarray(Z[:, :sdim])


def eigen_decompose(A: np.ndarray) -> EigenStructure:
    """Decompose A into invariant subspaces with their oblique projections.

    Eigenvalues closer than ``eig_cluster_tol(A)`` are treated as one root
    with summed multiplicity; conjugate pairs are merged so that all returned
    bases and projections are real.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("state matrix has non-finite entries")
    n = A.shape[0]

    evals = np.linalg.eigvals(A)
    tol = eig_cluster_tol(A)
    clusters = _merge_conjugates(_cluster_eigenvalues(evals, tol), tol)

    bases = [_invariant_basis(A, evals, c["members"]) for c in clusters]
    if sum(b.shape[1] for b in bases) != n:
        raise DefectiveToleranceError("invariant subspace dimensions do not sum to n")

    projections = [projection_from_bases(bases, j) for j in range(len(bases))]
    total = sum(projections)
    if np.linalg.norm(total - np.eye(n)) > EPS_LIN * n:
        raise DefectiveToleranceError("subspace projections do not resolve the identity")

    multiplicities = tuple(
        len(c["members"]) // 2 if c["pair"] else len(c["members"]) for c in clusters
    )
    return EigenStructure(
        eigenvalues=tuple(c["rep"] for c in clusters),
        multiplicities=multiplicities,
        state_bases=tuple(bases),
        state_projections=tuple(projections),
    )


def eigenvalue_observable(A: np.ndarray, c_row: np.ndarray, lam: complex) -> bool:
    """Whether eigenvalue ``lam`` is visible to the sensor with row ``c_row``.

    Tests rank [A - lam I; c_row] == n with a relative singular-value cutoff;
    complex arithmetic is used for complex ``lam``.
    """
    A = np.asarray(A)
    n = A.shape[0]
    lam = complex(lam)
    shift = lam if lam.imag != 0.0 else lam.real
    row = np.atleast_2d(np.asarray(c_row))
    M = np.vstack([A - shift * np.eye(n), row])
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0.0:
        return n == 0
    return int(np.count_nonzero(sv > EPS_RANK * sv[0])) == n


def eigenvalue_observability_flags(A: np.ndarray, C: np.ndarray, eig: EigenStructure) -> np.ndarray:
    """Boolean (p, r) table: flags[i, j] = subspace j visible to sensor i."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    p = C.shape[0]
    flags = np.zeros((p, eig.r), dtype=bool)
    for j, lam in enumerate(eig.eigenvalues):
        for i in range(p):
            flags[i, j] = eigenvalue_observable(A, C[i], lam)
    return flags


@dataclass(frozen=True)
class ObservabilityReport:
    """Sensor-redundancy indices of a system.

    ``sparse_index`` is the largest k such that every (p - k)-sensor subset
    keeps the pair (A, C_subset) observable (-1 if the full sensor set does
    not). ``eigen_index_per_subspace[j]`` is (number of sensors seeing
    subspace j) - 1, and ``eigen_index`` their minimum. ``truncated`` marks
    that some k levels were skipped because their subset count exceeded the
    enumeration cap, making ``sparse_index`` a lower bound.
    """

    sparse_index: int
    eigen_index_per_subspace: tuple[int, ...]
    eigen_index: int
    truncated: bool = False


def _subset_observable(C: np.ndarray, powers: list[np.ndarray], rows: tuple[int, ...], n: int) -> bool:
    Cs = C[list(rows)]
    obs = np.vstack([Cs @ P for P in powers])
    sv = np.linalg.svd(obs, compute_uv=False)
    if sv[0] == 0.0:
        return False
    return int(np.count_nonzero(sv > EPS_RANK * sv[0])) == n


def observability_report(sys, eig: EigenStructure, max_combinations: int = 1_000_000) -> ObservabilityReport:
    """Compute sparse and per-subspace observability indices of ``sys``.

    The sparse index is searched downward from k = p - 1 with early exit on
    the first failing subset; levels whose subset count exceeds
    ``max_combinations`` are skipped and flagged.
    """
    A = np.asarray(sys.A, dtype=float)
    C = np.atleast_2d(np.asarray(sys.C, dtype=float))
    n, p = A.shape[0], C.shape[0]

    flags = eigenvalue_observability_flags(A, C, eig)
    q_js = tuple(int(flags[:, j].sum()) - 1 for j in range(eig.r))
    q = min(q_js)

    powers = [np.eye(n)]
    for _ in range(n - 1):
        powers.append(powers[-1] @ A)

    truncated = False
    for k in range(p - 1, -1, -1):
        if math.comb(p, p - k) > max_combinations:
            truncated = True
            continue
        if all(
            _subset_observable(C, powers, rows, n)
            for rows in itertools.combinations(range(p), p - k)
        ):
            return ObservabilityReport(k, q_js, q, truncated)
    return ObservabilityReport(-1, q_js, q, truncated)
