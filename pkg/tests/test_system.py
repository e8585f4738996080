import numpy as np
import pytest

from rdpc.linalg import spectral_radius
from rdpc.system import (LtiSystem, NormConstraints, SimulationBlowUp, Trajectory, batch_reactor,
                         check_constraints, collect, replay_residual, step, uniform_excitation)


def test_batch_reactor_matrices(reactor):
    assert reactor.A[0, 0] == 1.178
    np.testing.assert_array_equal(reactor.A[0], [1.178, 0.002, 0.512, -0.403])
    np.testing.assert_array_equal(reactor.B[0], [0.005, -0.088])
    np.testing.assert_array_equal(reactor.C, [[1, 0, 1, -1], [0, 1, 0, 0]])
    np.testing.assert_array_equal(reactor.D, np.zeros((2, 2)))
    assert spectral_radius(reactor.A) > 1


def test_step_examples(reactor, rng):
    x0 = np.array([0.1, 0.12, 0.0, -0.1])
    _, y = step(reactor, x0, np.zeros(2))
    np.testing.assert_allclose(y, [0.2, 0.12], atol=1e-15)
    xn, y = step(reactor, np.zeros(4), np.zeros(2))
    assert not xn.any() and not y.any()
    eye = LtiSystem(np.eye(3), np.eye(3), np.eye(3), np.zeros((3, 3)))
    x, u = rng.standard_normal(3), rng.standard_normal(3)
    np.testing.assert_allclose(step(eye, x, u)[0], x + u)


def test_step_dimension_mismatch(reactor):
    with pytest.raises(ValueError):
        step(reactor, np.zeros(3), np.zeros(2))


def test_system_shape_check():
    with pytest.raises(ValueError):
        LtiSystem(np.eye(2), np.ones((3, 1)), np.ones((1, 2)), np.zeros((1, 1)))


def test_collect_replays_exactly(reactor):
    u = uniform_excitation(18, 2, seed=3)
    tr = collect(reactor, np.zeros(4), u)
    assert tr.length == 18 and tr.states.shape == (19, 4)
    assert replay_residual(reactor, tr) <= 1e-12
    assert np.all(np.abs(u) <= 0.1)


def test_collect_zero_case(reactor):
    tr = collect(reactor, np.zeros(4), np.zeros((1, 2)))
    assert not tr.outputs.any() and not tr.states.any()


def test_collect_is_deterministic(reactor):
    a = collect(reactor, np.zeros(4), uniform_excitation(18, 2, seed=11))
    b = collect(reactor, np.zeros(4), uniform_excitation(18, 2, seed=11))
    assert a.outputs.tobytes() == b.outputs.tobytes()
    assert a.states.tobytes() == b.states.tobytes()


def test_open_loop_diverges_for_some_seed(reactor):
    # the plant is unstable: long open-loop runs leave the output bound
    c = NormConstraints(np.sqrt(2), np.sqrt(0.2))
    hits = [s for s in range(20)
            if check_constraints(collect(reactor, np.array([0.1, 0.12, 0, -0.1]),
                                         uniform_excitation(28, 2, seed=s)), c) is not None]
    assert hits


def test_blowup_is_reported():
    sys = LtiSystem(np.array([[10.0]]), np.array([[1.0]]), np.array([[1.0]]), np.zeros((1, 1)))
    with pytest.raises(SimulationBlowUp) as info:
        collect(sys, np.ones(1), np.zeros((20, 1)))
    assert info.value.k == 7


def test_check_constraints_examples():
    c = NormConstraints(1.0, 0.5)
    zero = Trajectory(np.zeros((5, 1)), np.zeros((5, 2)))
    assert check_constraints(zero, c) is None
    one = Trajectory(np.zeros((1, 1)), np.array([[1.0, 0.0]]))
    assert check_constraints(one, c) == 0
    with pytest.raises(ValueError):
        NormConstraints(0.0, 1.0)


def test_trajectory_round_trips(tmp_path, reactor_traj):
    csv_path, json_path = reactor_traj.save(tmp_path / "traj")
    for back in (Trajectory.from_csv(csv_path), Trajectory.from_json(json_path.read_text())):
        np.testing.assert_array_equal(back.inputs, reactor_traj.inputs)
        np.testing.assert_array_equal(back.outputs, reactor_traj.outputs)
        np.testing.assert_array_equal(back.states, reactor_traj.states)
    header = csv_path.read_text().splitlines()[0]
    assert header == "k,u1,u2,y1,y2,x1,x2,x3,x4"
    io_only = reactor_traj.without_states()
    io_only.to_csv(tmp_path / "io.csv")
    back = Trajectory.from_csv(tmp_path / "io.csv")
    assert back.states is None and back.length == 18
