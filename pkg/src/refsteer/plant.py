"""Planar flying / hopping vehicle simulators and their inner-loop controllers.

Sign conventions: thrust acts along the body axis ``(-sin(theta), cos(theta))``
and the leg points the opposite way, so a positive pitch places the foot ahead
of the hip (+x) and accelerates the body toward -x.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .behavior import AERIAL, GROUND, LTISystem
from .errors import InvalidInputError, PlantFault

log = logging.getLogger(__name__)

DT = 1.0 / 200.0
EVENT_TIME_TOL = 1e-6


@dataclass
class FlyerParams:
    """Rigid-body and inner-loop parameters of the planar flyer.

    ``max_thrust`` defaults to ``twr * mass_true * gravity``.
    """

    mass_true: float = 3.65
    mass_model: float = 3.65
    inertia: float = 0.08
    gravity: float = 9.81
    thrust_lag_tau: float = 0.03
    torque_lag_tau: float = 0.03
    k_F: float = 1.2e-5
    twr: float = 1.15
    max_thrust: Optional[float] = None
    max_torque: float = 3.0
    kp_z: float = 40.0
    kd_z: float = 20.0
    kp_theta: float = 18.0
    kd_theta: float = 1.7

    def __post_init__(self):
        if not (self.mass_true > 0 and self.inertia > 0 and self.mass_model > 0):
            raise InvalidInputError("masses and inertia must be positive")
        if self.max_thrust is None:
            self.max_thrust = self.twr * self.mass_true * self.gravity
        if self.thrust_lag_tau < 0 or self.torque_lag_tau < 0:
            raise InvalidInputError("actuator lags must be >= 0")

    @property
    def thrust_to_weight(self):
        return self.max_thrust / (self.mass_true * self.gravity)

    def rotor_speed(self, thrust):
        """Rotor speed (rad/s) producing ``thrust`` shared across four rotors."""
        return math.sqrt(max(thrust, 0.0) / (4.0 * self.k_F))


@dataclass
class HopperParams(FlyerParams):
    """Flyer plus a massless prismatic spring leg."""

    r0: float = 0.25
    k: float = 2000.0
    c: float = 5.0

    def __post_init__(self):
        super().__post_init__()
        if not (self.k > 0 and self.r0 > 0):
            raise InvalidInputError("leg stiffness and rest length must be positive")


@dataclass
class PlantState:
    """Simulator state. ``r``/``rd``/``foot_x`` are meaningful in the ground phase."""

    x: float = 0.0
    z: float = 1.0
    theta: float = 0.0
    xd: float = 0.0
    zd: float = 0.0
    thetad: float = 0.0
    F: float = 0.0
    tau: float = 0.0
    phase: int = AERIAL
    foot_x: float = 0.0
    r: float = 0.0
    rd: float = 0.0
    time: float = 0.0

    def copy(self):
        return replace(self)

    def output(self):
        return np.array([self.z, self.theta])


@dataclass
class Event:
    kind: str
    time: float
    state: PlantState = field(repr=False)


def hover_state(params, z=1.0, x=0.0):
    """Equilibrium hover with actuators at their steady values."""
    return PlantState(x=x, z=z, F=params.mass_true * params.gravity)


def inner_loop(ref, state, params):
    """Height and leg-angle PD controller.

    Gravity feedforward uses ``mass_model``. Returns ``(F, tau, saturated)``.
    """
    z_d, th_d = float(ref[0]), float(ref[1])
    if not (math.isfinite(z_d) and math.isfinite(th_d)):
        raise InvalidInputError("reference must be finite")
    F = (params.mass_model * params.gravity + params.kp_z * (z_d - state.z)
         - params.kd_z * state.zd)
    tau = params.kp_theta * (th_d - state.theta) - params.kd_theta * state.thetad
    Fc = min(max(F, 0.0), params.max_thrust)
    tc = min(max(tau, -params.max_torque), params.max_torque)
    return Fc, tc, (Fc != F or tc != tau)


def _lag(cmd, act, tau):
    return 0.0 if tau == 0.0 else (cmd - act) / tau


def _aerial_rhs(s, cmd, p):
    x, z, th, xd, zd, thd, F, tq = s
    m = p.mass_true
    fx, fz = (cmd[2], cmd[3]) if len(cmd) > 2 else (0.0, 0.0)
    return np.array([
        xd, zd, thd,
        (fx - F * math.sin(th)) / m,
        (fz + F * math.cos(th)) / m - p.gravity,
        tq / p.inertia,
        _lag(cmd[0], F, p.thrust_lag_tau),
        _lag(cmd[1], tq, p.torque_lag_tau),
    ])


def _ground_rhs(s, cmd, p):
    r, th, rd, thd, F, tq = s
    m = p.mass_true
    spring = p.k * (p.r0 - r) - p.c * rd
    rdd = r * thd * thd - p.gravity * math.cos(th) + (spring + F) / m
    thdd = (tq + m * p.gravity * r * math.sin(th) - 2.0 * m * r * rd * thd) \
        / (m * r * r + p.inertia)
    return np.array([rd, thd, rdd, thdd,
                     _lag(cmd[0], F, p.thrust_lag_tau),
                     _lag(cmd[1], tq, p.torque_lag_tau)])


def _rk4(f, s, cmd, p, h):
    k1 = f(s, cmd, p)
    k2 = f(s + 0.5 * h * k1, cmd, p)
    k3 = f(s + 0.5 * h * k2, cmd, p)
    k4 = f(s + h * k3, cmd, p)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _pack_aerial(st):
    return np.array([st.x, st.z, st.theta, st.xd, st.zd, st.thetad, st.F, st.tau])


def _pack_ground(st):
    return np.array([st.r, st.theta, st.rd, st.thetad, st.F, st.tau])


def _actuator_passthrough(params, commands, st):
    if params.thrust_lag_tau == 0.0:
        st.F = float(commands[0])
    if params.torque_lag_tau == 0.0:
        st.tau = float(commands[1])


def step_aerial(state, commands, dt, params):
    """RK4 step of the free-flight dynamics with first-order actuator lag.

    ``commands`` is ``(F, tau)`` or ``(F, tau, fx, fz)`` with an external force.
    """
    if state.phase != AERIAL:
        raise InvalidInputError("step_aerial requires the aerial phase")
    st = state.copy()
    _actuator_passthrough(params, commands, st)
    s = _rk4(_aerial_rhs, _pack_aerial(st), commands, params, dt)
    st.x, st.z, st.theta, st.xd, st.zd, st.thetad, st.F, st.tau = map(float, s)
    _actuator_passthrough(params, commands, st)
    st.time = state.time + dt
    return st


def _ground_to_cartesian(st):
    sn, cs = math.sin(st.theta), math.cos(st.theta)
    st.x = st.foot_x - st.r * sn
    st.z = st.r * cs
    st.xd = -st.rd * sn - st.r * st.thetad * cs
    st.zd = st.rd * cs - st.r * st.thetad * sn


def step_ground(state, commands, dt, params):
    """RK4 step of the pinned-foot spring-leg dynamics in ``(r, theta)``."""
    if state.phase != GROUND:
        raise InvalidInputError("step_ground requires the ground phase")
    st = state.copy()
    _actuator_passthrough(params, commands, st)
    s = _rk4(_ground_rhs, _pack_ground(st), commands, params, dt)
    st.r, st.theta, st.rd, st.thetad, st.F, st.tau = map(float, s)
    _actuator_passthrough(params, commands, st)
    _ground_to_cartesian(st)
    st.time = state.time + dt
    if st.r <= 0.2 * params.r0:
        raise PlantFault("leg crushed", st.time)
    return st


def foot_height(state, params):
    return state.z - params.r0 * math.cos(state.theta)


def spring_force(state, params):
    return params.k * (params.r0 - state.r) - params.c * state.rd


def touchdown_map(state, params):
    """Aerial -> ground: pin the foot, keep the radial velocity, and conserve
    angular momentum about the foot for the pitch rate."""
    st = state.copy()
    sn, cs = math.sin(st.theta), math.cos(st.theta)
    st.phase = GROUND
    st.r = params.r0
    st.foot_x = st.x + params.r0 * sn
    # unit vector foot -> hip is (-sn, cs); tangential unit (-cs, -sn)
    vr = -st.xd * sn + st.zd * cs
    vt = -st.xd * cs - st.zd * sn
    m, r, I = params.mass_true, params.r0, params.inertia
    st.rd = vr
    st.thetad = (m * r * vt + I * st.thetad) / (m * r * r + I)
    _ground_to_cartesian(st)
    return st


def liftoff_map(state, params):
    """Ground -> aerial: body states carry over unchanged."""
    st = state.copy()
    _ground_to_cartesian(st)
    st.phase = AERIAL
    return st


def _event_value(kind, st, params):
    if kind == "touchdown":
        return foot_height(st, params)
    if kind == "liftoff":
        return spring_force(st, params) if st.rd > 0 else 1.0
    if kind == "apex":
        return st.zd
    raise ValueError(kind)


def detect_events(prev, nxt, params, has_leg=True):
    """Events whose guard changes sign between consecutive states (first wins)."""
    found = []
    if prev.phase == AERIAL:
        kinds = ["apex"] + (["touchdown"] if has_leg else [])
    else:
        kinds = ["liftoff"]
    for kind in kinds:
        a = _event_value(kind, prev, params)
        b = _event_value(kind, nxt, params)
        if a > 0.0 >= b:
            found.append(kind)
    return found


class HybridSimulator:
    """Fixed-step integrator with event localisation by bisection."""

    def __init__(self, params, has_leg=True, event_tol=EVENT_TIME_TOL):
        self.params = params
        self.has_leg = has_leg
        self.event_tol = event_tol
        self.saturations = 0

    def _raw_step(self, st, cmd, h):
        if st.phase == AERIAL:
            nxt = step_aerial(st, cmd, h, self.params)
            if not self.has_leg and nxt.z <= 0.0:
                raise PlantFault("body struck the ground", nxt.time)
            return nxt
        return step_ground(st, cmd, h, self.params)

    def advance(self, state, commands, dt=DT):
        """Integrate ``dt`` under held ``commands``; returns ``(state, events)``."""
        events = []
        st = state
        remaining = dt
        guard = 0
        while remaining > 1e-12:
            guard += 1
            if guard > 16:
                raise PlantFault("too many events in one step", st.time)
            nxt = self._raw_step(st, commands, remaining)
            kinds = detect_events(st, nxt, self.params, self.has_leg)
            if not kinds:
                st = nxt
                break
            # locate the earliest event
            best_h, best_kind = remaining, None
            for kind in kinds:
                h = self._bisect(st, commands, remaining, kind)
                if h < best_h or best_kind is None:
                    best_h, best_kind = h, kind
            at = self._raw_step(st, commands, best_h) if best_h > 0 else st.copy()
            if best_kind == "touchdown":
                at = touchdown_map(at, self.params)
            elif best_kind == "liftoff":
                at = liftoff_map(at, self.params)
            events.append(Event(best_kind, at.time, at.copy()))
            remaining -= best_h
            st = at
            if best_kind == "apex":
                # integrate past the apex without re-detecting it
                if remaining > 1e-12:
                    nxt = self._raw_step(st, commands, remaining)
                    kinds = [k for k in detect_events(st, nxt, self.params,
                                                      self.has_leg) if k != "apex"]
                    if not kinds:
                        st = nxt
                        break
                continue
        st = st.copy()
        st.time = state.time + dt
        return st, events

    def _bisect(self, st, cmd, horizon, kind):
        lo, hi = 0.0, horizon
        while hi - lo > self.event_tol:
            mid = 0.5 * (lo + hi)
            s_mid = self._raw_step(st, cmd, mid)
            if _event_value(kind, s_mid, self.params) > 0.0:
                lo = mid
            else:
                hi = mid
        return hi


@dataclass
class HopGait:
    """Nominal periodic-hop reference generator.

    In flight the desired height follows a parabola with effective gravity
    ``g_ref`` peaking at ``apex``; past the apex it is floored at
    ``floor`` (touchdown height minus a margin) so a late touchdown does not
    drag the reference away. The desired leg angle follows a Raibert law.
    """

    apex: float = 0.5
    xdot_des: float = 0.0
    g_ref: float = 9.81
    floor: float = -math.inf
    k_xdot: float = 0.08
    k_ff: float = 0.0
    theta_max: float = 0.25
    t_apex: float = 0.0

    def on_liftoff(self, state, t):
        """Re-anchor the parabola so that it passes the liftoff height now."""
        rise = max(self.apex - state.z, 0.0)
        self.t_apex = t + math.sqrt(2.0 * rise / self.g_ref)

    def height(self, t):
        t = np.asarray(t, dtype=float)
        z = self.apex - 0.5 * self.g_ref * (t - self.t_apex) ** 2
        return np.where(t > self.t_apex, np.maximum(z, self.floor), z)

    def leg_angle(self, xdot):
        th = self.k_xdot * (xdot - self.xdot_des) + self.k_ff * self.xdot_des
        return float(np.clip(th, -self.theta_max, self.theta_max))


def nominal_hopping_reference(state, gait, times):
    """Desired ``(z_d, theta_d)`` at ``times`` given the current state.

    In the ground phase the references hold the measured outputs.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if state.phase == GROUND:
        return np.column_stack([np.full(times.size, state.z),
                                np.full(times.size, state.theta)])
    th = gait.leg_angle(state.xd)
    return np.column_stack([gait.height(times), np.full(times.size, th)])


def step_lti(sys: LTISystem, x, u):
    """Exact discrete update; returns ``(x_next, y)``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.size != sys.n or u.size != sys.m:
        raise InvalidInputError(
            f"state/input sizes ({x.size}, {u.size}) do not match ({sys.n}, {sys.m})")
    return sys.A @ x + sys.B @ u, sys.C @ x + sys.D @ u


class FlyerRig:
    """Closed inner loop around the hybrid simulator, advanced one tick at a time.

    ``apply`` takes the reference ``(z_d, theta_d)`` for the coming tick.
    ``disturbances`` holds ``(t_start, t_stop, fx, fz)`` force pulses that act
    in flight.
    """

    def __init__(self, params, z0=1.0, has_leg=False, disturbances=()):
        self.params = params
        self.z0 = z0
        self.has_leg = has_leg
        self.disturbances = list(disturbances)
        self.dt = DT
        self.m = 2
        self.p = 2
        self.reset()

    def reset(self):
        self.sim = HybridSimulator(self.params, has_leg=self.has_leg)
        self.state = hover_state(self.params, z=self.z0)
        self.events = []
        self.saturations = 0
        self.episode = 0

    @property
    def time(self):
        return self.state.time

    @property
    def phase(self):
        return self.state.phase

    def measure(self):
        return self.state.output()

    def _force(self, t):
        fx = fz = 0.0
        for t0, t1, dx, dz in self.disturbances:
            if t0 <= t < t1:
                fx += dx
                fz += dz
        return fx, fz

    def apply(self, ref):
        F, tau, sat = inner_loop(ref, self.state, self.params)
        self.saturations += sat
        cmd = (F, tau) + self._force(self.state.time)
        self.state, ev = self.sim.advance(self.state, cmd, self.dt)
        for e in ev:
            self._on_event(e)
        self.events.extend(ev)
        return ev

    def _on_event(self, e):
        pass

    def snapshot(self):
        return {f"plant.{k}": v for k, v in vars(self.params).items()}


class HopperRig(FlyerRig):
    """Spring-leg hopper released from rest at the gait apex."""

    def __init__(self, params, gait, disturbances=()):
        self.gait = gait
        self._gait0 = replace(gait)
        super().__init__(params, z0=gait.apex, has_leg=True,
                         disturbances=disturbances)

    def reset(self):
        super().reset()
        self.gait = replace(self._gait0)
        self.gait.t_apex = 0.0

    def _on_event(self, e):
        if e.kind == "liftoff":
            self.gait.on_liftoff(e.state, e.time)
        elif e.kind == "touchdown":
            self.episode += 1

    def nominal(self, t):
        return nominal_hopping_reference(self.state, self.gait, [t])[0]

    def snapshot(self):
        out = super().snapshot()
        out.update({f"gait.{k}": v for k, v in vars(self._gait0).items()})
        return out


class LTIRig:
    """Strictly proper LTI plant driven directly by the logged input."""

    def __init__(self, sys, x0=None, dt=DT):
        if np.any(sys.D != 0):
            raise InvalidInputError("LTIRig needs D = 0 so y_k is measurable before u_k")
        self.sys = sys
        self.x0 = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float)
        self.dt = dt
        self.m = sys.m
        self.p = sys.p
        self.reset()

    def reset(self):
        self.x = self.x0.copy()
        self.k = 0
        self.episode = 0
        self.saturations = 0

    @property
    def time(self):
        return self.k * self.dt

    @property
    def phase(self):
        return AERIAL

    def measure(self):
        return self.sys.C @ self.x

    def apply(self, u):
        self.x, _ = step_lti(self.sys, self.x, u)
        self.k += 1
        return []

    def snapshot(self):
        return {"plant.n": self.sys.n, "plant.m": self.sys.m, "plant.p": self.sys.p}
