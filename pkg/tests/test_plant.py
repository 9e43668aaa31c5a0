import numpy as np
import pytest

from securectl.eigenspace import eigen_decompose
from securectl.errors import WindowTooShortError
from securectl.plant import (
    IoWindow,
    LtiSystem,
    SafetySet,
    SubspaceProjector,
    project_data,
    stack,
    step,
)
from securectl.scenario import random_system


def simulate(sys, x0, inputs, e_fn=None):
    """Forward simulation oracle; returns states (T+1, n) and outputs (T+1, p)."""
    x = np.asarray(x0, dtype=float)
    states = [x.copy()]
    outputs = [sys.C @ x + (e_fn(0) if e_fn else 0.0)]
    for k, u in enumerate(inputs):
        x, _ = step(sys, x, u, np.zeros(sys.p))
        states.append(x.copy())
        outputs.append(sys.C @ x + (e_fn(k + 1) if e_fn else 0.0))
    return np.array(states), np.array(outputs)


def window_from_run(sys, x0, inputs, e_fn=None, limit=None):
    _, outputs = simulate(sys, x0, inputs, e_fn)
    return IoWindow.from_arrays(np.asarray(inputs), outputs, limit=limit)


def test_step_identity_cases():
    sys = LtiSystem(A=np.eye(2), B=np.eye(2), C=np.eye(2))
    nxt, y = step(sys, np.zeros(2), np.zeros(2), np.zeros(2))
    assert np.allclose(nxt, 0.0) and np.allclose(y, 0.0)
    nxt, _ = step(sys, np.ones(2), np.ones(2), np.zeros(2))
    assert np.allclose(nxt, 2.0)


def test_step_coupled_demo_matrix():
    A = np.array([[0.8, 0.4, 0.0, 0.0],
                  [0.4, 0.6, 0.2, 0.0],
                  [0.0, 0.2, 0.5, 0.3],
                  [0.0, 0.0, 0.3, 0.7]])
    sys = LtiSystem(A=A, B=np.eye(4), C=np.eye(4))
    nxt, _ = step(sys, np.ones(4), np.zeros(4), np.zeros(4))
    assert np.allclose(nxt, [1.2, 1.2, 1.0, 1.0])


def test_system_validation():
    with pytest.raises(ValueError):
        LtiSystem(A=[[1.0, 0.0]], B=[[1.0]], C=[[1.0]])
    with pytest.raises(ValueError):
        LtiSystem(A=[[np.nan]], B=[[1.0]], C=[[1.0]])
    with pytest.raises(ValueError):
        LtiSystem(A=[[1.0]], B=[[1.0], [0.0]], C=[[1.0]])


def test_safety_set_nonempty_check():
    SafetySet(H=np.eye(2), g=np.ones(2))
    with pytest.raises(ValueError):
        SafetySet(H=[[1.0, 0.0]], g=[-1.0])
    # a witness can rescue a set that excludes the origin
    SafetySet(H=[[1.0, 0.0]], g=[-1.0], witness=np.array([2.0, 0.0]))


def test_window_bookkeeping_and_trim():
    win = IoWindow(m=1, p=2, limit=3)
    win.record_output([0.0, 0.0])
    for k in range(5):
        win.record_step([float(k)], [k + 1.0, 0.0])
    assert win.length == 3
    assert win.inputs[:, 0].tolist() == [2.0, 3.0, 4.0]
    assert win.outputs.shape == (4, 2)
    assert win.outputs[0].tolist() == [2.0, 0.0]


def test_window_too_short():
    sys = LtiSystem(A=np.eye(3), B=np.eye(3), C=np.eye(3))
    win = IoWindow(m=3, p=3)
    win.record_output(np.zeros(3))
    win.record_step(np.zeros(3), np.zeros(3))
    with pytest.raises(WindowTooShortError):
        stack(sys, win)


def test_stack_structure_and_consistency(rng):
    sys, _ = random_system(n=3, p=5, q=3, s=1, seed=1)
    x0 = rng.uniform(-2, 2, size=3)
    inputs = rng.uniform(-1, 1, size=(4, 3))
    win = window_from_run(sys, x0, inputs)
    stacked = stack(sys, win)

    t = stacked.t
    assert t == 4
    # trailing zero block in the stacked inputs, zero diagonal blocks in F
    assert np.allclose(stacked.u_stack[-sys.m:], 0.0)
    for i in range(sys.p):
        F = stacked.conv[i]
        for k in range(t + 1):
            assert np.allclose(F[k, k * sys.m:(k + 1) * sys.m], 0.0)
    # F row blocks replay the impulse response, oldest input first
    powers = [np.linalg.matrix_power(sys.A, d) for d in range(t)]
    for k in range(1, t + 1):
        for c in range(k):
            block = stacked.conv[2][k, c * sys.m:(c + 1) * sys.m]
            assert np.allclose(block, sys.C[2] @ powers[k - 1 - c] @ sys.B)
    # attack-free: Y_i = O_i x0 exactly
    for i in range(sys.p):
        resid = stacked.sensor_obs(i) @ x0 - stacked.sensor_y(i)
        assert np.linalg.norm(resid) < 1e-8


def test_stack_zero_input_leaves_outputs(rng):
    sys, _ = random_system(n=2, p=4, q=2, s=1, seed=2)
    x0 = rng.uniform(-2, 2, size=2)
    inputs = np.zeros((3, 2))
    win = window_from_run(sys, x0, inputs)
    stacked = stack(sys, win)
    assert np.allclose(stacked.y, win.outputs)


def test_stacked_lstsq_recovers_initial_state(rng):
    sys, _ = random_system(n=4, p=6, q=4, s=1, seed=3)
    x0 = rng.uniform(-3, 3, size=4)
    inputs = rng.uniform(-1, 1, size=(5, 4))
    stacked = stack(sys, window_from_run(sys, x0, inputs))
    rows = stacked.obs.transpose(1, 0, 2).reshape(-1, 4)
    rhs = stacked.y.T.reshape(-1)
    sol, *_ = np.linalg.lstsq(rows, rhs, rcond=None)
    assert np.linalg.norm(sol - x0) < 1e-8


def test_project_single_subspace_acts_as_identity(rng):
    # one subspace: the measurement projection is the identity on range(O_i)
    sys = LtiSystem(A=0.9 * np.eye(2), B=np.eye(2), C=rng.uniform(-1, 1, (3, 2)))
    eig = eigen_decompose(sys.A)
    assert eig.r == 1
    x0 = rng.uniform(-2, 2, size=2)
    inputs = rng.uniform(-1, 1, size=(2, 2))
    stacked = stack(sys, window_from_run(sys, x0, inputs))
    sub = project_data(stacked, eig)
    for i in range(sys.p):
        assert np.linalg.norm(sub.sub_y[i, 0] - stacked.sensor_y(i)) < 1e-8
    assert not sub.disqualified.any()


def test_projected_data_matches_projected_state(rng):
    # each observable pair satisfies O_i^j (P_j x0) = Y_i^j on clean data
    sys, _ = random_system(n=4, p=7, q=4, s=2, seed=4)
    eig = eigen_decompose(sys.A)
    x0 = rng.uniform(-2, 2, size=4)
    inputs = rng.uniform(-1, 1, size=(4, 4))
    stacked = stack(sys, window_from_run(sys, x0, inputs))
    sub = project_data(stacked, eig)
    assert not sub.disqualified.any()
    for i in range(sys.p):
        for j in range(eig.r):
            if not sub.observable[i, j]:
                continue
            xj = eig.state_projections[j] @ x0
            resid = sub.sub_obs[i, j] @ xj - sub.sub_y[i, j]
            assert np.linalg.norm(resid) < 1e-8


def test_blind_sensor_flagged_invisible():
    sys, _ = random_system(n=3, p=6, q=3, s=1, seed=6)
    eig = eigen_decompose(sys.A)
    proj = SubspaceProjector(sys, eig, t=3)
    # the generator hides each subspace from p - (q + 1) sensors
    assert (~proj.visible).sum() == (6 - 4) * 3
    assert np.array_equal(proj.visible, proj.observable)
    for i in range(sys.p):
        for j in range(eig.r):
            if not proj.visible[i, j]:
                assert proj.images[i][j] is None
                assert np.allclose(proj.sub_obs[i, j], 0.0)


def test_decomposition_consistency_iff(rng):
    # O_i x = Y_i exactly when every projected block agrees
    sys, _ = random_system(n=3, p=6, q=4, s=1, seed=7)
    eig = eigen_decompose(sys.A)
    x0 = rng.uniform(-2, 2, size=3)
    x_other = x0 + rng.uniform(0.5, 1.0, size=3)
    inputs = rng.uniform(-1, 1, size=(3, 3))
    stacked = stack(sys, window_from_run(sys, x0, inputs))
    sub = project_data(stacked, eig)
    for x, should_match in ((x0, True), (x_other, False)):
        for i in range(sys.p):
            full = np.linalg.norm(stacked.sensor_obs(i) @ x - stacked.sensor_y(i)) < 1e-6
            blocks = all(
                np.linalg.norm(sub.sub_obs[i, j] @ (eig.state_projections[j] @ x) - sub.sub_y[i, j]) < 1e-6
                for j in range(eig.r)
                if sub.observable[i, j]
            )
            assert full == blocks
            if should_match:
                assert full


def test_off_range_component_disqualifies(rng):
    sys, _ = random_system(n=2, p=5, q=2, s=1, seed=8)
    x0 = rng.uniform(-1, 1, size=2)
    inputs = rng.uniform(-1, 1, size=(2, 2))
    win = window_from_run(sys, x0, inputs)
    outputs = win.outputs.copy()
    outputs[:, 0] = [3.1, -2.7, 0.4]  # dynamics-inconsistent garbage
    corrupted = IoWindow.from_arrays(win.inputs, outputs)
    sub = project_data(stack(sys, corrupted), eigen_decompose(sys.A))
    assert sub.disqualified[0]
    assert not sub.disqualified[1:].any()
    assert sub.off_range[0] > 0.1
