import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from refsteer.behavior import IOTrajectory, LTISystem, lag, partition
from refsteer.densemath import pinv
from refsteer.errors import InvalidInputError, ParseError
from refsteer.excitation import PRBSConfig, prbs
from refsteer.plant import LTIRig
from refsteer.predictor import (MAGIC, ControllerState, Predictor, SteeringConfig,
                                build_predictor, controller_tick, load_predictor,
                                save_predictor, solve_full_ddpc, steer_flying,
                                steer_hopping)

from helpers import lti_data, random_lti

EXACT = math.inf


def data_set(rng, sys, Ti, Tf, factor=40):
    return partition(lti_data(sys, factor * (sys.m + 1) * (Ti + Tf + sys.n), rng), Ti, Tf)


def primed_state(sys, Ti, rng):
    """ControllerState filled from a fresh simulated window; returns the final state."""
    u = rng.normal(size=(Ti, sys.m))
    x0 = rng.normal(size=sys.n)
    x = x0.copy()
    st_ = ControllerState(Ti, sys.m, sys.p)
    for k in range(Ti):
        y = sys.C @ x
        controller_tick(st_, y, u[k])
        x = sys.A @ x + sys.B @ u[k]
    return st_, x


def test_predictor_exact_on_lti():
    rng = np.random.default_rng(0)
    for _ in range(5):
        sys = random_lti(rng)
        Ti, Tf = lag(sys) + 1, 6
        pred = build_predictor(data_set(rng, sys, Ti, Tf),
                               SteeringConfig(T_ini=Ti, T_f=Tf, slack_weight=EXACT))
        q = lti_data(sys, Ti + Tf, rng)
        y, s = pred.predict(q.u[:Ti], q.y[:Ti], q.u[Ti:])
        assert np.allclose(y, q.y[Ti:], atol=1e-8)
        assert np.linalg.norm(s) < 1e-8


def test_predictor_slack_absorbs_inconsistency():
    rng = np.random.default_rng(1)
    sys = random_lti(rng, n=2, m=1, p=1)
    Ti, Tf = 5, 3
    pred = build_predictor(data_set(rng, sys, Ti, Tf),
                           SteeringConfig(T_ini=Ti, T_f=Tf, slack_weight=EXACT))
    q = lti_data(sys, Ti + Tf, rng)
    y_ini = q.y[:Ti] + rng.normal(size=(Ti, 1))
    _, s = pred.predict(q.u[:Ti], y_ini, q.u[Ti:])
    assert np.linalg.norm(s) > 1e-3


def test_one_step_matches_state_space():
    rng = np.random.default_rng(7)
    sys = random_lti(rng, n=3, m=1, p=1)
    Ti, Tf = lag(sys), 1
    pred = build_predictor(data_set(rng, sys, Ti, Tf),
                           SteeringConfig(T_ini=Ti, T_f=Tf, slack_weight=EXACT))
    # state-space map: x0 from the window, roll forward, one output step
    O = np.vstack([sys.C @ np.linalg.matrix_power(sys.A, k) for k in range(Ti)])
    Tw = np.zeros((Ti, Ti))
    for i in range(Ti):
        for j in range(i):
            Tw[i, j] = (sys.C @ np.linalg.matrix_power(sys.A, i - 1 - j) @ sys.B)[0, 0]
    Oinv = np.linalg.inv(O)
    AT = np.linalg.matrix_power(sys.A, Ti)
    roll = np.hstack([np.linalg.matrix_power(sys.A, Ti - 1 - j) @ sys.B for j in range(Ti)])
    M_u = sys.C @ (roll - AT @ Oinv @ Tw)
    M_y = sys.C @ AT @ Oinv
    expected = np.hstack([M_u, M_y, sys.D])
    assert np.allclose(pred.G_y, expected, atol=1e-8)


def test_unit_slack_weight_is_the_plain_pseudo_inverse():
    rng = np.random.default_rng(3)
    sys = random_lti(rng, n=2, m=1, p=2)
    Ti, Tf = 3, 2
    hs = data_set(rng, sys, Ti, Tf, factor=6)
    pred = build_predictor(hs, SteeringConfig(T_ini=Ti, T_f=Tf, slack_weight=1.0))
    N, k = hs.cols, sys.p * Ti
    M = np.block([[hs.U_p, np.zeros((hs.U_p.shape[0], k))],
                  [hs.Y_p, np.eye(k)],
                  [hs.U_f, np.zeros((hs.U_f.shape[0], k))]])
    left = np.block([[hs.Y_f, np.zeros((hs.Y_f.shape[0], k))],
                     [np.zeros((k, N)), np.eye(k)]])
    assert np.allclose(pred.G, left @ pinv(M, 1e-10), atol=1e-10)


def test_predictor_dimensions_and_rank_warning():
    rng = np.random.default_rng(2)
    sys = random_lti(rng, n=2, m=2, p=1)
    hs = data_set(rng, sys, 4, 3)
    pred = build_predictor(hs, SteeringConfig(T_ini=4, T_f=3))
    assert pred.G.shape == (1 * 3 + 1 * 4, 2 * 4 + 1 * 4 + 2 * 3)
    tr = IOTrajectory(1.0, np.ones((60, 2)), np.ones((60, 1)))
    with pytest.warns(RuntimeWarning):
        bad = build_predictor(partition(tr, 4, 3), SteeringConfig(T_ini=4, T_f=3))
    assert bad.warnings
    with pytest.raises(InvalidInputError):
        build_predictor(hs, SteeringConfig(T_ini=5, T_f=3))


def test_predictor_file_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    sys = random_lti(rng)
    pred = build_predictor(data_set(rng, sys, 3, 2),
                           SteeringConfig(T_ini=3, T_f=2, slack_weight=EXACT), source="abc")
    path = tmp_path / "g.txt"
    save_predictor(pred, path)
    assert path.read_text().splitlines()[0] == MAGIC
    back = load_predictor(path)
    assert np.array_equal(back.G, pred.G)
    assert (back.m, back.p, back.T_ini, back.T_f, back.source) == \
        (pred.m, pred.p, pred.T_ini, pred.T_f, "abc")
    assert back.slack_weight == math.inf


def test_predictor_file_errors(tmp_path):
    pred = Predictor(G=np.ones((3, 5)), m=1, p=1, T_ini=2, T_f=1)
    path = tmp_path / "g.txt"
    save_predictor(pred, path)
    lines = path.read_text().splitlines()
    (tmp_path / "a").write_text("\n".join(["nope"] + lines[1:]))
    with pytest.raises(ParseError, match="line 1"):
        load_predictor(tmp_path / "a")
    broken = list(lines)
    broken[-1] = "1,2"
    (tmp_path / "b").write_text("\n".join(broken))
    with pytest.raises(ParseError, match=f"line {len(lines)}"):
        load_predictor(tmp_path / "b")
    (tmp_path / "c").write_text("\n".join(lines[:-1]))
    with pytest.raises(ParseError):
        load_predictor(tmp_path / "c")


def test_controller_buffers():
    st_ = ControllerState(3, 1, 2)
    for k in range(3):
        assert not st_.primed
        controller_tick(st_, [k, -k], [10 * k])
    assert st_.primed
    controller_tick(st_, [3, -3], [30])
    assert st_.u_ini().ravel().tolist() == [10, 20, 30]
    assert len(st_.u_buf) == 3 and st_.tick == 4
    with pytest.raises(InvalidInputError):
        controller_tick(st_, [1.0], [1.0])


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_controller_replay(Ti, seed):
    rng = np.random.default_rng(seed)
    ys, us = rng.normal(size=(100, 2)), rng.normal(size=(100, 1))
    st_ = ControllerState(Ti, 1, 2)
    for y, u in zip(ys, us):
        controller_tick(st_, y, u)
    assert np.array_equal(st_.y_ini(), ys[-Ti:]) and np.array_equal(st_.u_ini(), us[-Ti:])


def test_steer_refuses_before_priming():
    pred = Predictor(G=np.zeros((3, 5)), m=1, p=1, T_ini=2, T_f=1)
    with pytest.raises(InvalidInputError):
        steer_flying(pred, ControllerState(2, 1, 1), [0.0], SteeringConfig(T_ini=2, T_f=1))


def _delay_setup(Ti=2, Tf=5):
    rng = np.random.default_rng(0)
    sys = LTISystem([[0.0]], [[1.0]], [[1.0]])
    cfg = SteeringConfig(T_ini=Ti, T_f=Tf, Q=1.0, R=1e-8, slack_weight=EXACT)
    pred = build_predictor(partition(lti_data(sys, 300, rng), Ti, Tf), cfg)
    return rng, sys, cfg, pred


def test_steer_identity_plant_shifts_reference():
    rng, sys, cfg, pred = _delay_setup()
    st_, _ = primed_state(sys, cfg.T_ini, rng)
    y_des = rng.normal(size=(cfg.T_f, 1))
    res = steer_flying(pred, st_, y_des, cfg)
    assert res.status == "solved"
    assert np.allclose(res.u[:-1], y_des[1:], atol=1e-4)


def test_steer_fixed_point_needs_no_correction():
    # unit DC gain plant resting at its steady state: u = y_des is already optimal
    rng = np.random.default_rng(5)
    A = np.array([[0.6, 0.2], [0.0, 0.5]])
    B = np.array([[0.3], [0.5]])
    C = np.array([[1.0, 0.0]])
    sys = LTISystem(A, B, C / (C @ np.linalg.solve(np.eye(2) - A, B))[0, 0])
    cfg = SteeringConfig(T_ini=4, T_f=6, R=0.1, slack_weight=EXACT)
    pred = build_predictor(data_set(rng, sys, 4, 6), cfg)
    c = 0.7
    x = np.linalg.solve(np.eye(2) - A, B[:, 0] * c)
    st_ = ControllerState(4, 1, 1)
    for _ in range(4):
        controller_tick(st_, sys.C @ x, [c])
    res = steer_flying(pred, st_, np.full((6, 1), c), cfg)
    assert np.allclose(res.u, c, atol=1e-5)


def detuned_double_integrator(dt=0.05, kp=4.0, kd=3.0, bias=1.0):
    """Position loop with a missing feedforward; augmented constant state."""
    A = np.array([[1.0, dt, 0.0], [-kp * dt, 1.0 - kd * dt, -bias * dt], [0.0, 0.0, 1.0]])
    B = np.array([[0.0], [kp * dt], [0.0]])
    return LTISystem(A, B, [[1.0, 0.0, 0.0]]), bias / kp


def test_steer_removes_pd_steady_state_error():
    sys, e_ss = detuned_double_integrator()
    rig = LTIRig(sys, x0=[0.0, 0.0, 1.0])
    u = prbs(PRBSConfig(1.0, 2, seed=1, length=1500))
    Y = []
    for k in range(len(u)):
        Y.append(rig.measure())
        rig.apply(u[k])
    Ti, Tf = 6, 10
    cfg = SteeringConfig(T_ini=Ti, T_f=Tf, Q=10.0, R=0.01, slack_weight=EXACT)
    pred = build_predictor(partition(IOTrajectory(0.05, u, np.array(Y)), Ti, Tf), cfg)

    def run(steer):
        rig.reset()
        st_ = ControllerState(Ti, 1, 1)
        for _ in range(400):
            y = rig.measure()
            u_k = np.array([1.0])
            if steer and st_.primed:
                u_k = steer_flying(pred, st_, np.ones((Tf, 1)), cfg).u[0]
            rig.apply(u_k)
            controller_tick(st_, y, u_k)
        return abs(1.0 - rig.measure()[0])

    nominal = run(False)
    assert nominal == pytest.approx(e_ss, rel=1e-3)
    assert run(True) < 0.1 * nominal


def test_steer_bounds_respected_and_fallback_flag():
    rng, sys, cfg, pred = _delay_setup()
    st_, _ = primed_state(sys, cfg.T_ini, rng)
    cfg.u_bounds = np.array([[-0.2, 0.2]])
    res = steer_flying(pred, st_, np.full((cfg.T_f, 1), 3.0), cfg)
    assert np.all(np.abs(res.u) <= 0.2 + 1e-6) and not res.fallback
    cfg.y_bounds = np.array([[5.0, 6.0]])
    cfg.u_bounds = np.array([[-0.1, 0.1]])
    res = steer_flying(pred, st_, np.full((cfg.T_f, 1), 3.0), cfg)
    assert res.fallback and np.allclose(res.u, 3.0)


def test_steer_hopping_without_ground_equals_flying():
    rng, sys, cfg, pred = _delay_setup()
    st_, _ = primed_state(sys, cfg.T_ini, rng)
    y_des = rng.normal(size=(cfg.T_f, 1))
    a = steer_flying(pred, st_, y_des, cfg)
    st_.warm = None
    b = steer_hopping(pred, st_, y_des, cfg, st_.u_ini(), st_.y_ini())
    assert np.allclose(a.u, b.u, atol=1e-9)


def test_reduced_matches_full():
    rng = np.random.default_rng(10)
    sys = random_lti(rng, n=2, m=1, p=1)
    Ti, Tf = 3, 4
    hs = data_set(rng, sys, Ti, Tf, factor=4)
    cfg = SteeringConfig(T_ini=Ti, T_f=Tf, R=0.1, lambda_g=1e-8, lambda_sigma=1e8,
                         slack_weight=EXACT)
    pred = build_predictor(hs, cfg)
    st_, _ = primed_state(sys, Ti, rng)
    y_des = rng.normal(size=(Tf, 1))
    red = steer_flying(pred, st_, y_des, cfg)
    full = solve_full_ddpc(hs, st_, y_des, cfg)
    assert np.allclose(red.u, full.u, atol=1e-4)


def test_full_ddpc_attains_reachable_target_and_saturates():
    rng, sys, cfg, _ = _delay_setup(Ti=1, Tf=4)
    hs = partition(lti_data(sys, 60, rng), 1, 4)
    st_ = ControllerState(1, 1, 1)
    controller_tick(st_, [0.3], [0.5])
    cfg.lambda_g, cfg.lambda_sigma = 1e-8, 1e8
    y_des = np.array([[0.5], [0.1], [-0.2], [0.4]])  # y_0 = u_{-1} = 0.5 is forced
    full = solve_full_ddpc(hs, st_, y_des, cfg)
    assert np.allclose(full.y, y_des, atol=1e-4)
    cfg.u_bounds = np.array([[-0.15, 0.15]])
    full = solve_full_ddpc(hs, st_, y_des, cfg)
    assert full.u[0, 0] == pytest.approx(0.1, abs=1e-4)
    assert full.u[1, 0] == pytest.approx(-0.15, abs=1e-4)
    assert full.u[2, 0] == pytest.approx(0.15, abs=1e-4)


def test_receding_horizon_causality():
    rng, sys, cfg, pred = _delay_setup(Ti=2, Tf=5)
    base = np.sin(0.1 * np.arange(80))
    other = base.copy()
    other[50:] += 1.0

    def run(ref):
        rig = LTIRig(sys)
        st_ = ControllerState(2, 1, 1)
        out = []
        for k in range(60):
            y = rig.measure()
            u = np.array([ref[k]])
            if st_.primed:
                u = steer_flying(pred, st_, ref[k:k + 5].reshape(5, 1), cfg).u[0]
            out.append(u[0])
            rig.apply(u)
            controller_tick(st_, y, u)
        return np.array(out)

    a, b = run(base), run(other)
    assert np.array_equal(a[:46], b[:46])
    assert not np.allclose(a[46:], b[46:])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_steering_optimum_independent_of_warm_start(seed):
    rng, sys, cfg, pred = _delay_setup()
    rng = np.random.default_rng(seed)
    st_, _ = primed_state(sys, cfg.T_ini, rng)
    cfg.R = 0.5
    y_des = rng.normal(size=(cfg.T_f, 1))
    cold = steer_flying(pred, st_, y_des, cfg)
    st_.warm = dataclasses.replace(st_.warm, x=st_.warm.x + rng.normal(size=st_.warm.x.size),
                                   y=None, z=None)
    warm = steer_flying(pred, st_, y_des, cfg)
    assert np.allclose(cold.u, warm.u, atol=1e-5)


def test_config_validation():
    with pytest.raises(InvalidInputError):
        SteeringConfig(T_ini=0)
    with pytest.raises(InvalidInputError):
        SteeringConfig(lambda_sigma=0.0)
    with pytest.raises(InvalidInputError):
        SteeringConfig(Q=-1.0)
    with pytest.raises(InvalidInputError):
        SteeringConfig(input_penalty="other")
    with pytest.raises(InvalidInputError):
        SteeringConfig(T_f=2, Q=np.ones((3, 3))).weights("Q", 3)
