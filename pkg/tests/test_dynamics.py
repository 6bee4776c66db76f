import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safedrive.dynamics import ControlInput, DynamicsError, VehicleParams, VehicleState, jacobians, step

P = VehicleParams()
DT = 0.1


def test_straight_motion():
    assert step(VehicleState(0, 6, 20, 0), ControlInput(0, 0), DT, P) == VehicleState(2.0, 6.0, 20.0, 0.0)


def test_pure_acceleration_uses_pre_update_speed():
    s = step(VehicleState(0, 6, 20, 0), ControlInput(2, 0), DT, P)
    assert s == VehicleState(2.0, 6.0, pytest.approx(20.2), 0.0)


def test_steering_golden():
    # frozen from a by-hand evaluation of the closed-form update (see below)
    s = step(VehicleState(0, 6, 20, 0), ControlInput(0, 0.05), DT, P)
    assert s.x == pytest.approx(1.999374250649959, abs=1e-12)
    assert s.y == pytest.approx(6.050026051592293, abs=1e-12)
    assert s.vx == pytest.approx(19.995995964268985, abs=1e-12)
    assert s.vy == pytest.approx(0.4001817049021297, abs=1e-12)
    assert s.vy > 0 and s.heading > 0

    beta = math.atan(0.5 * math.tan(0.05))
    psi = 20 / 2.5 * math.sin(beta) * DT
    assert (s.x, s.y) == pytest.approx((20 * math.cos(beta) * DT, 6 + 20 * math.sin(beta) * DT), abs=1e-12)
    assert (s.vx, s.vy) == pytest.approx((20 * math.cos(psi), 20 * math.sin(psi)), abs=1e-12)


@pytest.mark.parametrize("u", [ControlInput(3.5, 0), ControlInput(0, 0.31), ControlInput(-5.1, 0), ControlInput(math.nan, 0)])
def test_rejects_out_of_bound_controls(u):
    with pytest.raises(DynamicsError):
        step(VehicleState(0, 6, 20, 0), u, DT, P)


def test_rejects_non_finite_state_and_bad_dt():
    with pytest.raises(DynamicsError):
        step(VehicleState(math.inf, 6, 20, 0), ControlInput(0, 0), DT, P)
    with pytest.raises(DynamicsError):
        step(VehicleState(0, 6, 20, 0), ControlInput(0, 0), 0.0, P)


def test_params_validation():
    with pytest.raises(ValueError):
        VehicleParams(a_min=1.0)
    with pytest.raises(ValueError):
        VehicleParams(length=0)


def test_standstill_holds_heading():
    s = step(VehicleState(0, 6, 0, 0), ControlInput(0, 0.3), DT, P)
    assert s == VehicleState(0.0, 6.0, 0.0, 0.0)


def test_jacobian_straight_row():
    A, _ = jacobians(VehicleState(0, 6, 20, 0), ControlInput(0, 0), DT, P)
    assert A[0][2] / DT == pytest.approx(1.0)


def test_jacobian_standstill_steering_column_is_zero():
    _, B = jacobians(VehicleState(0, 6, 0, 0), ControlInput(1, 0.1), DT, P)
    assert np.all(B[:, 1] == 0)


def _fd(s, u, h=1e-6):
    f = lambda s_, u_: step(VehicleState.from_array(s_), ControlInput(*u_), DT, P).as_array()
    A = np.column_stack([(f(s + h * e, u) - f(s - h * e, u)) / (2 * h) for e in np.eye(4)])
    B = np.column_stack([(f(s, u + h * e) - f(s, u - h * e)) / (2 * h) for e in np.eye(2)])
    return A, B


states = st.tuples(
    st.floats(-100, 100), st.floats(1, 11), st.floats(0.5, 39), st.floats(-3, 3),
)
controls = st.tuples(st.floats(-4.9, 2.9), st.floats(-0.29, 0.29))


@settings(max_examples=150, deadline=None)
@given(states, controls)
def test_jacobians_match_finite_differences(s, u):
    s, u = np.array(s), np.array(u)
    if abs(math.hypot(s[2], s[3]) + u[0] * DT - P.v_max) < 1e-3:
        return  # the clamp kink sits inside the difference stencil
    A, B = jacobians(VehicleState.from_array(s), ControlInput(*u), DT, P)
    Af, Bf = _fd(s, u)
    assert np.all(np.abs(A - Af) < 1e-5 * (1 + np.abs(Af)))
    assert np.all(np.abs(B - Bf) < 1e-5 * (1 + np.abs(Bf)))


@settings(max_examples=200, deadline=None)
@given(st.tuples(st.floats(-1e3, 1e3), st.floats(0, 12), st.floats(-60, 60), st.floats(-60, 60)),
       st.tuples(st.floats(-5, 3), st.floats(-0.3, 0.3)))
def test_speed_clamp(s, u):
    out = step(VehicleState(*s), ControlInput(*u), DT, P)
    assert 0.0 <= out.speed <= P.v_max + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 40), st.lists(st.floats(-5, 3), min_size=1, max_size=30))
def test_straight_line_consistency(v0, accels):
    s = VehicleState(0.0, 6.0, v0, 0.0)
    for a in accels:
        s = step(s, ControlInput(a, 0.0), DT, P)
        assert s.y == 6.0 and s.vy == 0.0


@settings(max_examples=50, deadline=None)
@given(states, controls)
def test_step_is_deterministic(s, u):
    a = step(VehicleState(*s), ControlInput(*u), DT, P)
    b = step(VehicleState(*s), ControlInput(*u), DT, P)
    assert a == b
