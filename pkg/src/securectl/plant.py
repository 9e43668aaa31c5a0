"""Attacked-plant simulation and input-output data assembly.

Holds the system/safety value types, steps the plant forward, maintains a
receding input-output window, stacks the window into per-sensor observability
and input-convolution matrices, and projects the stacked data onto the
invariant subspaces of the state matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .eigenspace import EigenStructure, eigenvalue_observability_flags, projection_from_bases
from .errors import WindowTooShortError
from .tolerances import EPS_LIN, EPS_RANK, EPS_RES_REL


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """Discrete-time plant x+ = A x + B u, y = C x + e."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, dtype=float)))
        object.__setattr__(self, "B", np.atleast_2d(np.asarray(self.B, dtype=float)))
        object.__setattr__(self, "C", np.atleast_2d(np.asarray(self.C, dtype=float)))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise ValueError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.C.shape[1] != n:
            raise ValueError(f"C has {self.C.shape[1]} columns, expected {n}")
        for name in ("A", "B", "C"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class SafetySet:
    """Polytope {x : H x + g >= 0}; nonemptiness is checked at construction."""

    H: np.ndarray
    g: np.ndarray
    witness: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "H", np.atleast_2d(np.asarray(self.H, dtype=float)))
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float).reshape(-1))
        if self.H.shape[0] != self.g.shape[0]:
            raise ValueError("H and g row counts differ")
        if self.H.shape[0] < 1:
            raise ValueError("safety set needs at least one row")
        if not (np.all(np.isfinite(self.H)) and np.all(np.isfinite(self.g))):
            raise ValueError("safety set has non-finite entries")
        w = np.zeros(self.H.shape[1]) if self.witness is None else np.asarray(self.witness, dtype=float)
        if np.min(self.H @ w + self.g) < -EPS_LIN:
            raise ValueError("safety set is empty at the supplied witness (or the origin)")

    @property
    def l(self) -> int:
        return self.H.shape[0]


class IoWindow:
    """Rolling input-output record: t inputs and t+1 outputs, oldest first.

    ``limit`` bounds the number of retained inputs (receding horizon); the
    oldest input/output pair is dropped when the bound is exceeded.
    """

    def __init__(self, m: int, p: int, limit: int | None = None):
        self.m = m
        self.p = p
        self.limit = limit
        self._inputs: list[np.ndarray] = []
        self._outputs: list[np.ndarray] = []

    @classmethod
    def from_arrays(cls, inputs: np.ndarray, outputs: np.ndarray, limit: int | None = None) -> "IoWindow":
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
        if outputs.shape[0] != inputs.shape[0] + 1:
            raise ValueError("need exactly one more output sample than input samples")
        win = cls(inputs.shape[1], outputs.shape[1], limit=limit)
        win.record_output(outputs[0])
        for u, y in zip(inputs, outputs[1:]):
            win.record_step(u, y)
        return win

    def record_output(self, y: np.ndarray) -> None:
        """Record the very first measurement, before any input is applied."""
        if self._outputs:
            raise ValueError("initial output already recorded; use record_step")
        self._outputs.append(np.asarray(y, dtype=float).reshape(self.p).copy())

    def record_step(self, u: np.ndarray, y: np.ndarray) -> None:
        if not self._outputs:
            raise ValueError("record the initial output first")
        self._inputs.append(np.asarray(u, dtype=float).reshape(self.m).copy())
        self._outputs.append(np.asarray(y, dtype=float).reshape(self.p).copy())
        if self.limit is not None and len(self._inputs) > self.limit:
            self._inputs.pop(0)
            self._outputs.pop(0)

    @property
    def length(self) -> int:
        return len(self._inputs)

    @property
    def inputs(self) -> np.ndarray:
        return np.array(self._inputs).reshape(len(self._inputs), self.m)

    @property
    def outputs(self) -> np.ndarray:
        return np.array(self._outputs).reshape(len(self._outputs), self.p)


def step(sys: LtiSystem, x: np.ndarray, u: np.ndarray, e: np.ndarray):
    """One plant step: returns (A x + B u, C x + e)."""
    x = np.asarray(x, dtype=float).reshape(sys.n)
    u = np.asarray(u, dtype=float).reshape(sys.m)
    e = np.asarray(e, dtype=float).reshape(sys.p)
    return sys.A @ x + sys.B @ u, sys.C @ x + e


def matrix_powers(A: np.ndarray, k: int) -> list[np.ndarray]:
    """[I, A, ..., A^k]."""
    powers = [np.eye(A.shape[0])]
    for _ in range(k):
        powers.append(powers[-1] @ A)
    return powers


@dataclass(frozen=True, eq=False)
class StackedData:
    """Window data in stacked form.

    ``obs[k, i]`` is C_i A^k, so ``obs[:, i, :]`` is the (t+1) x n
    observability matrix of sensor i. ``conv[i]`` is the dense
    (t+1) x (t+1)m input-convolution matrix with zero main-diagonal blocks,
    ``u_stack`` the stacked inputs ending in a zero block, and ``y[:, i]``
    the input-corrected outputs of sensor i.
    """

    sys: LtiSystem
    t: int
    obs: np.ndarray
    conv: np.ndarray
    u_stack: np.ndarray
    y: np.ndarray

    def sensor_obs(self, i: int) -> np.ndarray:
        return self.obs[:, i, :]

    def sensor_y(self, i: int) -> np.ndarray:
        return self.y[:, i]


def stack(sys: LtiSystem, win: IoWindow) -> StackedData:
    """Assemble per-sensor stacked matrices from a window of t inputs, t+1 outputs."""
    t = win.length
    if t + 1 < sys.n:
        raise WindowTooShortError(
            f"window holds {t + 1} output samples, need at least n = {sys.n}"
        )
    powers = matrix_powers(sys.A, t)
    obs = np.stack([sys.C @ P for P in powers], axis=0)

    markov = [sys.C @ powers[d] @ sys.B for d in range(t)]
    m = sys.m
    conv = np.zeros((sys.p, t + 1, (t + 1) * m))
    for k in range(1, t + 1):
        for c in range(k):
            conv[:, k, c * m:(c + 1) * m] = markov[k - 1 - c]

    u_stack = np.concatenate([win.inputs.reshape(-1), np.zeros(m)])
    y = win.outputs - (conv @ u_stack).T
    return StackedData(sys=sys, t=t, obs=obs, conv=conv, u_stack=u_stack, y=y)


@dataclass(frozen=True, eq=False)
class SubspaceData:
    """Stacked data projected onto each invariant subspace, per sensor.

    ``sub_obs[i, j]`` and ``sub_y[i, j]`` are the projected observability
    matrix and data of sensor i in subspace j (zero when the sensor is blind
    to the subspace). ``images[i][j]`` is the image basis O_i V_j used for
    restricted solves, or None when blind. ``off_range[i]`` is the norm of
    the component of Y_i outside range(O_i); sensors with a significant
    component are marked ``disqualified`` (they cannot match any state).
    """

    eig: EigenStructure
    t: int
    observable: np.ndarray
    visible: np.ndarray
    images: tuple
    sub_obs: np.ndarray
    sub_y: np.ndarray
    off_range: np.ndarray
    disqualified: np.ndarray

    @property
    def p(self) -> int:
        return self.observable.shape[0]

    @property
    def r(self) -> int:
        return self.observable.shape[1]


class SubspaceProjector:
    """Per-sensor projections from measurement space onto each subspace image.

    Depends only on (A, C), the subspace bases, and the window length, so it
    can be built once and applied to fresh windows of the same length.
    """

    def __init__(self, sys: LtiSystem, eig: EigenStructure, t: int):
        if t + 1 < sys.n:
            raise WindowTooShortError(
                f"window holds {t + 1} output samples, need at least n = {sys.n}"
            )
        self.sys = sys
        self.eig = eig
        self.t = t
        p, r, n = sys.p, eig.r, sys.n

        powers = matrix_powers(sys.A, t)
        obs = np.stack([sys.C @ P for P in powers], axis=0)

        self.observable = eigenvalue_observability_flags(sys.A, sys.C, eig)
        self.visible = np.zeros((p, r), dtype=bool)
        self.images: list[list[np.ndarray | None]] = [[None] * r for _ in range(p)]
        self._tilde = np.zeros((p, r, t + 1, t + 1))
        self.sub_obs = np.zeros((p, r, t + 1, n))
        self._range_basis: list[np.ndarray] = []

        for i in range(p):
            O_i = obs[:, i, :]
            scale = max(1.0, float(np.linalg.norm(O_i, 2)))
            img = [O_i @ eig.state_bases[j] for j in range(r)]
            vis = [j for j in range(r) if np.linalg.norm(img[j], 2) > EPS_LIN * scale]
            for j in vis:
                self.visible[i, j] = True
                self.images[i][j] = img[j]
            if vis:
                # the raw images can repeat directions when a subspace is only
                # partially visible; the projection needs independent columns
                vis_bases = [linalg.orth(img[j], rcond=EPS_RANK) for j in vis]
                for pos, j in enumerate(vis):
                    tilde = projection_from_bases(vis_bases, pos)
                    self._tilde[i, j] = tilde
                    self.sub_obs[i, j] = tilde @ O_i
            self._range_basis.append(linalg.orth(O_i, rcond=EPS_RANK))

    def apply(self, stacked: StackedData) -> SubspaceData:
        """Project the corrected outputs of a window onto each subspace."""
        p = self.sys.p
        Y = stacked.y.T  # (p, t+1)
        sub_y = np.einsum("prab,pb->pra", self._tilde, Y)
        off_range = np.zeros(p)
        disqualified = np.zeros(p, dtype=bool)
        for i in range(p):
            y_i = Y[i]
            Q = self._range_basis[i]
            resid = y_i - Q @ (Q.T @ y_i) if Q.size else y_i
            off_range[i] = float(np.linalg.norm(resid))
            disqualified[i] = off_range[i] > EPS_RES_REL * (1.0 + float(np.linalg.norm(y_i)))
        return SubspaceData(
            eig=self.eig,
            t=self.t,
            observable=self.observable,
            visible=self.visible,
            images=tuple(tuple(row) for row in self.images),
            sub_obs=self.sub_obs,
            sub_y=sub_y,
            off_range=off_range,
            disqualified=disqualified,
        )


def project_data(stacked: StackedData, eig: EigenStructure) -> SubspaceData:
    """Build the subspace projections for this window length and apply them."""
    return SubspaceProjector(stacked.sys, eig, stacked.t).apply(stacked)
