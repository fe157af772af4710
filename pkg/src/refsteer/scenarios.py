"""Scenario definitions: plants, desired trajectories, excitation plans, steering setup.

A scenario turns a flat config into the pieces the pipeline needs: rigs to
collect data on and to run the closed loop with, the nominal reference and
desired-output horizon at every tick, and the steering configuration.
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .behavior import GROUND, LTISystem
from .config import Settings
from .densemath import SolverSettings
from .errors import InvalidInputError
from .excitation import PRBSConfig, SmoothSweep
from .plant import DT, FlyerParams, FlyerRig, HopGait, HopperParams, HopperRig, LTIRig
from .predictor import SteeringConfig

SCENARIOS = ("lti-demo", "flying-ellipse", "hopping-periodic")

_PLANT_DEFAULTS = {
    "flying-ellipse": {"mass_model": 3.45, "kp_z": 80.0, "kd_z": 6.0},
    "hopping-periodic": {"mass_model": 3.45, "kp_z": 40.0, "kd_z": 10.0, "k": 10000.0,
                         "c": 5.0, "r0": 0.25},
}

_STEER_DEFAULTS = {
    "lti-demo": {"T_ini": 10, "T_f": 10, "Q": [10.0], "R": [0.01], "n_assumed": 2},
    "flying-ellipse": {"T_ini": 20, "T_f": 15, "Q": [10.0, 1.0], "R": [0.01, 0.01],
                       "n_assumed": 8},
    "hopping-periodic": {"T_ini": 20, "T_f": 25, "Q": [10.0, 1.0], "R": [0.01, 0.01],
                         "n_assumed": 8, "u_bounds": [-1.0, 1.0, -0.3, 0.3]},
}


@dataclass
class Plan:
    """What the nominal stack would do at one tick, plus the horizon to steer."""

    u_now: np.ndarray
    y_des: np.ndarray
    u_nom: np.ndarray


@dataclass
class CollectPlan:
    suffix: str
    rig: object
    base_refs: object
    prbs: PRBSConfig
    duration: float
    perturb_ground: bool = False


class Scenario:
    """Parsed scenario. ``settings.used`` afterwards holds every resolved value."""

    def __init__(self, raw, seed=None, steering=None):
        s = raw if isinstance(raw, Settings) else Settings(raw)
        if seed is not None:
            s.override("seed", int(seed))
        if steering is not None:
            s.override("steering", "on" if steering else "off")
        self.settings = s
        self.name = s.str("scenario")
        if self.name not in SCENARIOS:
            raise InvalidInputError(
                f"unknown scenario {self.name!r}; expected one of {', '.join(SCENARIOS)}")
        self.seed = s.int("seed", 0)
        self.steering = s.bool("steering", True)
        self.duration = s.float("duration", {"lti-demo": 20.0, "flying-ellipse": 16.0,
                                             "hopping-periodic": 30.0}[self.name])
        if not self.duration > 0:
            raise InvalidInputError("duration must be positive")
        self.disturbances = self._pulses()
        build = getattr(self, "_setup_" + self.name.replace("-", "_"))
        build()
        self.steer_cfg = self._steering_config()

    @property
    def dt(self):
        return self.rig_dt

    # plants

    def _params(self, cls):
        defaults = _PLANT_DEFAULTS.get(self.name, {})
        kw = {}
        for f in dataclasses.fields(cls):
            key = f"plant.{f.name}"
            default = defaults.get(f.name, f.default)
            if default is None and not self.settings.has(key):
                continue
            kw[f.name] = self.settings.float(key, default)
        return cls(**kw)

    def _pulses(self):
        if not self.settings.has("disturbance.pulses"):
            return []
        vals = self.settings.floats("disturbance.pulses")
        if vals.size % 4:
            raise InvalidInputError("disturbance.pulses takes groups of 't0 t1 fx fz'")
        return [tuple(v) for v in vals.reshape(-1, 4)]

    def _setup_lti_demo(self):
        s = self.settings
        a = s.floats("lti.a", [-1.5, 0.7])
        b = s.floats("lti.b", [0.1, 0.06])
        if a.size != b.size or a.size < 1:
            raise InvalidInputError("lti.a and lti.b need the same nonzero length")
        n = a.size
        A = np.zeros((n, n))
        A[:, 0] = -a
        A[:-1, 1:] = np.eye(n - 1)
        self.lti = LTISystem(A, b.reshape(n, 1), np.eye(1, n), np.zeros((1, 1)))
        self.rig_dt = s.float("lti.dt", 0.05)
        self.ref_amp = s.float("reference.amplitude", 1.0)
        self.ref_period = s.float("reference.period", 10.0)
        self.collect_duration = s.float("collect.duration", 50.0)
        self.collect_amp = s.float("collect.prbs.amplitude", 1.0)
        self.collect_hold = s.int("collect.prbs.bit_hold", 1)

    def _setup_flying_ellipse(self):
        s = self.settings
        self.params = self._params(FlyerParams)
        self.rig_dt = DT
        self.ax = s.float("ellipse.ax", 0.3)
        self.az = s.float("ellipse.az", 0.15)
        self.period = s.float("ellipse.period", 8.0)
        self.z0 = s.float("ellipse.z0", 1.0)
        self.kp_x = s.float("track.kp_x", 0.3)
        self.kd_x = s.float("track.kd_x", 0.4)
        self.theta_max = s.float("track.theta_max", 0.2)
        self.collect_duration = s.float("collect.duration", 30.0)
        self.collect_amp = s.floats("collect.prbs.amplitude", [0.01, 0.01])
        self.collect_hold = s.int("collect.prbs.bit_hold", 1)
        self.sweep_z = (s.float("collect.sweep.z_amplitude", 0.2),
                        s.floats("collect.sweep.z_freqs", [0.05, 0.13, 0.31]))
        self.sweep_x = (s.float("collect.sweep.x_amplitude", 0.6),
                        s.floats("collect.sweep.x_freqs", [0.04, 0.09, 0.23]))

    def _setup_hopping_periodic(self):
        s = self.settings
        self.params = self._params(HopperParams)
        self.rig_dt = DT
        kw = {}
        for f in dataclasses.fields(HopGait):
            if f.name == "t_apex":
                continue
            default = {"g_ref": 4.0, "floor": 0.23}.get(f.name, f.default)
            kw[f.name] = s.float(f"gait.{f.name}", default)
        self.gait = HopGait(**kw)
        self.min_ascend = s.int("hop.min_ascend", 5)
        self.skip_apexes = s.int("hop.skip_apexes", 1)
        self.T_d = s.int("hop.T_d", 10)
        self.T_a = s.int("hop.T_a", 10)
        self.max_fill_residual = s.float("hop.max_fill_residual", math.inf)
        self.collect_duration = s.float("collect.duration", 40.0)
        self.collect_amp = s.floats("collect.prbs.amplitude", [0.01, 0.01])
        self.collect_hold = s.int("collect.prbs.bit_hold", 1)
        self.aerial_duration = s.float("collect.aerial.duration", 30.0)
        self.aerial_z0 = s.float("collect.aerial.z0", 1.0)
        self.sweep_z = (s.float("collect.sweep.z_amplitude", 0.2),
                        s.floats("collect.sweep.z_freqs", [0.05, 0.13, 0.31]))
        self.sweep_theta = (s.float("collect.sweep.theta_amplitude", 0.1),
                            s.floats("collect.sweep.theta_freqs", [0.07, 0.17, 0.37]))

    def _steering_config(self):
        s = self.settings
        d = _STEER_DEFAULTS[self.name]
        solver = SolverSettings(
            eps_abs=s.float("solver.eps_abs", 1e-6), eps_rel=s.float("solver.eps_rel", 1e-6),
            max_iter=s.int("solver.max_iter", 4000), rho=s.float("solver.rho", 0.1),
            polish=s.bool("solver.polish", True))
        self.n_assumed = s.int("build.n_assumed", d["n_assumed"])

        def bounds(key, default):
            if not s.has(key) and default is None:
                return None
            v = s.floats(key, default)
            if v.size != 2 * self.m:
                raise InvalidInputError(f"{key} needs 'low high' for each of {self.m} channels")
            return v.reshape(self.m, 2)

        u_bounds = bounds("steer.u_bounds", d.get("u_bounds"))
        y_bounds = None
        if s.has("steer.y_bounds"):
            v = s.floats("steer.y_bounds")
            if v.size != 2 * self.p:
                raise InvalidInputError("steer.y_bounds needs 'low high' per output")
            y_bounds = v.reshape(self.p, 2)
        return SteeringConfig(
            T_ini=s.int("steer.T_ini", d["T_ini"]), T_f=s.int("steer.T_f", d["T_f"]),
            Q=s.floats("steer.Q", d["Q"]), R=s.floats("steer.R", d["R"]),
            lambda_sigma=s.float("steer.lambda_sigma", 1e5),
            lambda_g=s.float("steer.lambda_g", 1e-3),
            slack_weight=s.float("steer.slack_weight", math.inf),
            rcond=s.float("steer.rcond", 1e-10),
            input_penalty=s.str("steer.input_penalty", "deviation"),
            u_bounds=u_bounds, y_bounds=y_bounds, solver=solver)

    @property
    def m(self):
        return 1 if self.name == "lti-demo" else 2

    @property
    def p(self):
        return self.m

    @property
    def hopping(self):
        return self.name == "hopping-periodic"

    # rigs

    def make_rig(self, disturbed=True):
        pulses = self.disturbances if disturbed else ()
        if self.name == "lti-demo":
            return LTIRig(self.lti, dt=self.rig_dt)
        if self.name == "flying-ellipse":
            return FlyerRig(self.params, z0=self.z0, disturbances=pulses)
        return HopperRig(self.params, self.gait, disturbances=pulses)

    def collect_plans(self):
        """Datasets to record: ``(suffix, rig, base_refs, prbs, duration)``."""
        seed = self.seed
        if self.name == "lti-demo":
            cfg = PRBSConfig(self.collect_amp, self.collect_hold, seed)
            return [CollectPlan("", self.make_rig(False), lambda r, t: [0.0], cfg,
                                self.collect_duration)]
        if self.name == "flying-ellipse":
            zs = SmoothSweep([self.z0], [self.sweep_z[0]], [self.sweep_z[1]], seed + 101)
            xs = SmoothSweep([0.0], [self.sweep_x[0]], [self.sweep_x[1]], seed + 102)

            def base(rig, t):
                return zs(t)[0], self._x_pd(rig.state, xs(t)[0], 0.0)

            cfg = PRBSConfig(self.collect_amp, self.collect_hold, seed)
            return [CollectPlan("", self.make_rig(False), base, cfg, self.collect_duration)]
        zs = SmoothSweep([self.aerial_z0], [self.sweep_z[0]], [self.sweep_z[1]], seed + 101)
        ts = SmoothSweep([0.0], [self.sweep_theta[0]], [self.sweep_theta[1]], seed + 102)
        air = FlyerRig(self.params, z0=self.aerial_z0, has_leg=True)
        return [
            CollectPlan("", self.make_rig(False), lambda r, t: r.nominal(t),
                        PRBSConfig(self.collect_amp, self.collect_hold, seed + 1),
                        self.collect_duration),
            CollectPlan(".aerial", air, lambda r, t: (zs(t)[0], ts(t)[0]),
                        PRBSConfig(self.collect_amp, self.collect_hold, seed),
                        self.aerial_duration),
        ]

    # references

    def _x_pd(self, state, x_d, xdot_d):
        th = -(self.kp_x * (x_d - state.x) + self.kd_x * (xdot_d - state.xd))
        return float(np.clip(th, -self.theta_max, self.theta_max))

    def ellipse(self, t):
        """Desired ``(x, z, xdot)`` on the sagittal ellipse at time ``t``."""
        w = 2.0 * math.pi / self.period
        t = np.asarray(t, dtype=float)
        return (self.ax * np.sin(w * t), self.z0 + self.az * (1.0 - np.cos(w * t)),
                self.ax * w * np.cos(w * t))

    def plan(self, rig, t, T_f):
        ts = t + rig.dt * np.arange(T_f)
        if self.name == "lti-demo":
            r = self.ref_amp * np.sin(2.0 * math.pi * ts / self.ref_period)
            y_des = r.reshape(T_f, 1)
            return Plan(y_des[0].copy(), y_des, y_des)
        if self.name == "flying-ellipse":
            x_d, _, xdot_d = self.ellipse(t)
            th = self._x_pd(rig.state, float(x_d), float(xdot_d))
            y_des = np.column_stack([self.ellipse(ts)[1], np.full(T_f, th)])
            return Plan(y_des[0].copy(), y_des, y_des)
        u_now = np.asarray(rig.nominal(t), dtype=float)
        arc = rig.gait.height(ts)
        th = np.full(T_f, u_now[1])
        z_td = self.params.r0 * math.cos(rig.state.theta)
        y_des = np.column_stack([np.maximum(arc, z_td), th])
        if rig.phase == GROUND:
            y_des[0] = rig.measure()
        return Plan(u_now, y_des, np.column_stack([arc, th]))
