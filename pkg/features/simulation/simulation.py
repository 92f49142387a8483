"""
Simulation Feature Module
θ-scheme time stepping of the coupled plant w_t = w_xx + Σw, its boundary
observers and the closed loops, plus the Volterra transforms between plant
and target coordinates.
"""

import asyncio
import logging
import math
import re
import time
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import splu

from core.errors import (FamilyMismatchError, IncompatibleGridsError, InvalidProblemError,
                         MissingKernelsError, SingularSystemError, WrongScenarioError)
from features.kernels.kernels import (FAMILY_SOLVERS, GainSet, KernelFamily, KernelField,
                                      ObserverSetup, extract_gains)

logger = logging.getLogger('Backstep.Simulation')


class Scenario(str, Enum):
    OPEN_LOOP = "open_loop"
    STATE_FEEDBACK = "state_feedback"
    OUTPUT_FEEDBACK_ANTICOLLOCATED = "output_feedback_anticollocated"
    OUTPUT_FEEDBACK_COLLOCATED = "output_feedback_collocated"
    OBSERVER_ONLY_ANTICOLLOCATED = "observer_only_anticollocated"
    OBSERVER_ONLY_COLLOCATED = "observer_only_collocated"

    @property
    def setup(self) -> Optional[ObserverSetup]:
        if self.value.endswith("_anticollocated"):
            return ObserverSetup.ANTI_COLLOCATED
        if self.value.endswith("_collocated"):
            return ObserverSetup.COLLOCATED
        return None

    @property
    def has_observer(self) -> bool:
        return self.setup is not None

    @property
    def output_feedback(self) -> bool:
        return self.value.startswith("output_feedback")

    @property
    def observer_only(self) -> bool:
        return self.value.startswith("observer_only")


_PRESET_PATTERN = re.compile(r"^\s*([a-z_]+)\s*\(([^()]*)\)\s*$")


@dataclass(frozen=True)
class ICPreset:
    """Initial profile applied to one state component."""

    kind: str
    params: Tuple[float, ...]

    ARITY = {"cos_half_pi": 1, "constant": 1, "bump": 3}

    def __post_init__(self):
        arity = self.ARITY.get(self.kind)
        if arity is None:
            raise ValueError(f"unknown initial-condition preset '{self.kind}'")
        if len(self.params) != arity:
            raise ValueError(f"preset '{self.kind}' takes {arity} argument(s), got {len(self.params)}")
        if self.kind == "bump" and not self.params[1] > 0:
            raise ValueError("bump width must be positive")

    @classmethod
    def parse(cls, text: str) -> "ICPreset":
        match = _PRESET_PATTERN.match(text)
        if not match:
            raise ValueError(f"cannot read preset '{text}', expected name(args)")
        args = [a.strip() for a in match.group(2).split(",") if a.strip()]
        return cls(match.group(1), tuple(float(a) for a in args))

    def sample(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "cos_half_pi":
            return self.params[0] * np.cos(0.5 * np.pi * x)
        if self.kind == "constant":
            return np.full_like(x, self.params[0], dtype=float)
        center, width, amplitude = self.params
        return amplitude * np.exp(-((x - center) / width) ** 2)

    def __str__(self) -> str:
        return f"{self.kind}({', '.join(repr(p) for p in self.params)})"


@dataclass(frozen=True)
class FieldPair:
    """(u, v) on the uniform grid x_j = j/nx."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape or self.u.ndim != 1:
            raise IncompatibleGridsError(f"component shapes {self.u.shape} and {self.v.shape} differ")

    @property
    def nx(self) -> int:
        return self.u.size - 1

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx + 1)

    @classmethod
    def zeros(cls, nx: int) -> "FieldPair":
        return cls(np.zeros(nx + 1), np.zeros(nx + 1))

    @classmethod
    def from_presets(cls, nx: int, u_preset: ICPreset, v_preset: Optional[ICPreset] = None) -> "FieldPair":
        x = np.linspace(0.0, 1.0, nx + 1)
        return cls(u_preset.sample(x), (v_preset or u_preset).sample(x))

    @classmethod
    def from_stacked(cls, z: np.ndarray) -> "FieldPair":
        m = z.size // 2
        return cls(z[:m].copy(), z[m:].copy())

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u, self.v])

    def __sub__(self, other: "FieldPair") -> "FieldPair":
        return FieldPair(self.u - other.u, self.v - other.v)


@dataclass(frozen=True)
class SimConfig:
    lambda1: float
    lambda2: float
    scenario: Scenario
    nx: int = 200
    dt: float = 1e-4
    t_final: float = 2.0
    theta: float = 0.5
    ic: ICPreset = ICPreset("cos_half_pi", (1.0,))
    ic_v: Optional[ICPreset] = None
    observer_ic: ICPreset = ICPreset("constant", (0.0,))
    observer_ic_v: Optional[ICPreset] = None
    record_every: int = 100
    startup_steps: int = 2
    plant_control: str = "feedback"
    actuation: str = "implicit"

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "lambda1", float(self.lambda1))
        object.__setattr__(self, "lambda2", float(self.lambda2))

    def validate(self):
        if not self.dt > 0:
            raise InvalidProblemError(f"dt must be positive, got {self.dt}")
        if self.t_final < self.dt:
            raise InvalidProblemError(f"t_final={self.t_final} is shorter than one step")
        if self.nx < 16:
            raise InvalidProblemError(f"nx={self.nx} must be at least 16")
        if not 0.0 <= self.theta <= 1.0:
            raise InvalidProblemError(f"theta={self.theta} outside [0, 1]")
        if self.record_every < 1 or self.startup_steps < 0:
            raise InvalidProblemError("record_every must be ≥ 1 and startup_steps ≥ 0")
        if self.plant_control not in ("feedback", "zero"):
            raise InvalidProblemError(f"plant_control must be 'feedback' or 'zero', got '{self.plant_control}'")
        if self.actuation not in ("implicit", "lagged"):
            raise InvalidProblemError(f"actuation must be 'implicit' or 'lagged', got '{self.actuation}'")
        if not (math.isfinite(self.lambda1) and math.isfinite(self.lambda2)):
            raise InvalidProblemError("coupling constants must be finite")

    @property
    def sigma(self) -> np.ndarray:
        return np.array([[0.0, self.lambda1], [self.lambda2, 0.0]])

    @property
    def num_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def snapshot_count(self) -> int:
        return self.num_steps // self.record_every + 1

    @property
    def uses_feedback(self) -> bool:
        s = self.scenario
        return (s is Scenario.STATE_FEEDBACK or s.output_feedback
                or (s.observer_only and self.plant_control == "feedback"))


@dataclass(frozen=True)
class Trajectory:
    """Recorded snapshots of one run. Arrays are read-only."""

    scenario: Scenario
    times: np.ndarray
    plant: Tuple[FieldPair, ...]
    observer: Optional[Tuple[FieldPair, ...]]
    controls: np.ndarray
    measurements: np.ndarray
    config: SimConfig

    def errors(self) -> Tuple[FieldPair, ...]:
        """Observer errors w − ŵ per snapshot."""
        if self.observer is None:
            raise WrongScenarioError(f"scenario {self.scenario.value} has no observer")
        return tuple(w - w_hat for w, w_hat in zip(self.plant, self.observer))


@dataclass(frozen=True)
class KernelBundle:
    """Kernels and gains one scenario consumes."""

    control: Optional[KernelField] = None
    observer: Optional[KernelField] = None
    inverse: Optional[KernelField] = None
    gains: Optional[GainSet] = None

    def observer_gains(self, setup: ObserverSetup) -> GainSet:
        if self.gains is not None and self.gains.has_observer:
            if self.gains.setup is not setup:
                raise FamilyMismatchError(
                    f"gains were designed for {self.gains.setup.value}, scenario needs {setup.value}")
            return self.gains
        if self.observer is None:
            raise MissingKernelsError(f"{setup.value} observer needs an observer kernel or gains")
        return extract_gains(self.observer, setup)


def required_families(cfg: SimConfig) -> List[KernelFamily]:
    families = []
    if cfg.uses_feedback:
        families.append(KernelFamily.CONTROL)
    if cfg.scenario.has_observer:
        families.append(cfg.scenario.setup.family)
    return families


def build_kernels(cfg: SimConfig, n: int, tol: float = 1e-12, max_iter: int = 200) -> KernelBundle:
    """Solve exactly the families the scenario needs."""
    solved = {family: FAMILY_SOLVERS[family](cfg.lambda1, cfg.lambda2, n, tol, max_iter)
              for family in required_families(cfg)}
    observer = None
    if cfg.scenario.has_observer:
        observer = solved[cfg.scenario.setup.family]
    return KernelBundle(control=solved.get(KernelFamily.CONTROL), observer=observer)


def trapezoid_weights(nx: int) -> np.ndarray:
    w = np.full(nx + 1, 1.0 / nx)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def resample_kernel(kf: KernelField, nx: int) -> np.ndarray:
    """Stored kernel components on the nx-grid as a (2, 2, nx+1, nx+1) array.

    Bilinear interpolation; the first superdiagonal is filled by linear
    extension so cells straddling y = x interpolate from smooth data.
    """
    stack = kf.stack()
    if kf.n == nx:
        return stack
    n = kf.n
    src = kf.grid
    dst = np.linspace(0.0, 1.0, nx + 1)
    X, Y = np.meshgrid(dst, dst, indexing="ij")
    points = np.stack([X.ravel(), Y.ravel()], axis=-1)
    lower = np.tri(nx + 1, dtype=bool)
    i = np.arange(n)

    out = np.zeros((2, 2, nx + 1, nx + 1))
    for a in range(2):
        for b in range(2):
            full = stack[a, b].copy()
            full[i, i + 1] = full[i + 1, i + 1] + full[i, i] - full[i + 1, i]
            interpolator = RegularGridInterpolator((src, src), full, method="linear")
            out[a, b] = np.where(lower, interpolator(points).reshape(nx + 1, nx + 1), 0.0)
    return out


def feedback_weights(control: KernelField, nx: int) -> np.ndarray:
    """Rows W with U = W @ [u; v], the trapezoid quadrature of K(1, y) w(y)."""
    if control.family is not KernelFamily.CONTROL:
        raise FamilyMismatchError(f"feedback needs a control kernel, got {control.family.value}")
    edge = resample_kernel(control, nx)[:, :, nx, :]
    omega = trapezoid_weights(nx)
    return np.array([np.concatenate([omega * edge[r, 0], omega * edge[r, 1]]) for r in range(2)])


class ThetaStepper:
    """θ-scheme for z = [u; v] with Neumann x = 0 and Dirichlet x = 1.

    The implicit operator is constant, so its sparse LU is built once per θ.
    With `feedback` rows the Dirichlet rows become z_b = W z at the new level.
    """

    def __init__(self, nx: int, dt: float, sigma: np.ndarray, theta: float = 0.5,
                 feedback: Optional[np.ndarray] = None):
        self.nx = nx
        self.m = nx + 1
        self.dt = dt
        self.theta = theta
        self.feedback = feedback
        self.boundary = np.array([self.m - 1, 2 * self.m - 1])
        self.A = self._operator(nx, sigma)
        self._factors: Dict[float, tuple] = {}

    @staticmethod
    def _operator(nx: int, sigma: np.ndarray) -> sparse.csr_matrix:
        m = nx + 1
        h2 = (1.0 / nx) ** 2
        upper = np.ones(m - 1)
        upper[0] = 2.0  # ghost node w₋₁ = w₁
        lap = sparse.diags([np.ones(m - 1), -2.0 * np.ones(m), upper], [-1, 0, 1]) / h2
        full = sparse.kron(sparse.identity(2), lap) + sparse.kron(sparse.csr_matrix(sigma), sparse.identity(m))
        interior = np.ones(2 * m)
        interior[[m - 1, 2 * m - 1]] = 0.0
        return (sparse.diags(interior) @ full).tocsr()

    def _factor(self, theta: float):
        if theta not in self._factors:
            size = 2 * self.m
            identity = sparse.identity(size, format="csr")
            implicit = (identity - theta * self.dt * self.A).tolil()
            if self.feedback is not None:
                for k, row in enumerate(self.boundary):
                    dense = -self.feedback[k].copy()
                    dense[row] += 1.0
                    implicit[row, :] = dense
            try:
                lu = splu(implicit.tocsc())
            except RuntimeError as e:
                raise SingularSystemError(f"θ-scheme operator is singular: {e}") from e
            explicit = (identity + (1.0 - theta) * self.dt * self.A).tocsr()
            self._factors[theta] = (lu, explicit)
            logger.debug(f"Factorized θ={theta} operator for nx={self.nx}, dt={self.dt:g}")
        return self._factors[theta]

    def step(self, z: np.ndarray, boundary: Optional[Sequence[float]] = None,
             forcing: Optional[np.ndarray] = None, theta: Optional[float] = None) -> np.ndarray:
        lu, explicit = self._factor(self.theta if theta is None else theta)
        rhs = explicit @ z
        if forcing is not None:
            rhs += self.dt * forcing
        if self.feedback is not None:
            rhs[self.boundary] = 0.0
        else:
            rhs[self.boundary] = (0.0, 0.0) if boundary is None else boundary
        return lu.solve(rhs)


@lru_cache(maxsize=16)
def plain_stepper(nx: int, dt: float, theta: float, lambda1: float, lambda2: float) -> ThetaStepper:
    return ThetaStepper(nx, dt, np.array([[0.0, lambda1], [lambda2, 0.0]]), theta)


def _check_grid(state: FieldPair, cfg: SimConfig):
    if state.nx != cfg.nx:
        raise IncompatibleGridsError(f"state has nx={state.nx}, configuration expects {cfg.nx}")


def step_plant(state: FieldPair, U: Sequence[float], cfg: SimConfig,
               stepper: Optional[ThetaStepper] = None, theta: Optional[float] = None) -> FieldPair:
    """Advance the plant one step with w(1) = U at the new time level.

    A stepper built with feedback rows sets w(1) = W w itself and ignores U.
    """
    _check_grid(state, cfg)
    stepper = stepper or plain_stepper(cfg.nx, cfg.dt, cfg.theta, cfg.lambda1, cfg.lambda2)
    return FieldPair.from_stacked(stepper.step(state.stacked(), boundary=U, theta=theta))


def sensor_output(state: FieldPair, setup: Optional[ObserverSetup]) -> float:
    """u(0) for the anti-collocated sensor, one-sided u_x(1) for the collocated one."""
    if setup is ObserverSetup.COLLOCATED:
        u = state.u
        return float((3.0 * u[-1] - 4.0 * u[-2] + u[-3]) * state.nx / 2.0)
    return float(state.u[0])


def gains_on_grid(gains: GainSet, nx: int) -> np.ndarray:
    """Injection profile [p1; p2] linearly interpolated to the nx-grid."""
    if not gains.has_observer:
        raise MissingKernelsError("gain set carries no observer gains")
    src = np.linspace(0.0, 1.0, gains.n + 1)
    dst = np.linspace(0.0, 1.0, nx + 1)
    return np.concatenate([np.interp(dst, src, gains.p1), np.interp(dst, src, gains.p2)])


def step_observer(obs: FieldPair, measurement: float, U: Sequence[float], gains: GainSet,
                  cfg: SimConfig, stepper: Optional[ThetaStepper] = None,
                  theta: Optional[float] = None) -> FieldPair:
    """Advance the observer one step; the injection p·(y − ŷ) is explicit."""
    _check_grid(obs, cfg)
    setup = cfg.scenario.setup
    if setup is None or gains.setup is not setup:
        raise WrongScenarioError(f"gains for {gains.setup} do not fit scenario {cfg.scenario.value}")
    stepper = stepper or plain_stepper(cfg.nx, cfg.dt, cfg.theta, cfg.lambda1, cfg.lambda2)
    innovation = measurement - sensor_output(obs, setup)
    forcing = gains_on_grid(gains, cfg.nx) * innovation
    return FieldPair.from_stacked(stepper.step(obs.stacked(), boundary=U, forcing=forcing, theta=theta))


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


def _freeze_pair(state: FieldPair) -> FieldPair:
    pair = FieldPair(state.u.copy(), state.v.copy())
    pair.u.setflags(write=False)
    pair.v.setflags(write=False)
    return pair


def run_scenario(cfg: SimConfig, kernels: KernelBundle) -> Trajectory:
    """Time-step the configured scenario and record every `record_every` steps.

    Observer-only runs advance the error w̃ = w − ŵ with step_observer under
    zero input and zero measurement and report ŵ = w − w̃, so the error never
    sees the plant's control path.

    Raises:
        MissingKernelsError: if a kernel or gain the scenario needs is absent.
    """
    cfg.validate()
    scenario = cfg.scenario
    setup = scenario.setup
    nx = cfg.nx
    start = time.perf_counter()

    W = None
    if cfg.uses_feedback:
        if kernels.control is None:
            raise MissingKernelsError(f"scenario {scenario.value} needs the control kernel")
        W = feedback_weights(kernels.control, nx)
    gains = kernels.observer_gains(setup) if setup else None

    implicit = cfg.actuation == "implicit"
    plain = plain_stepper(nx, cfg.dt, cfg.theta, cfg.lambda1, cfg.lambda2)
    closed = ThetaStepper(nx, cfg.dt, cfg.sigma, cfg.theta, feedback=W) if (W is not None and implicit) else None
    plant_feedback = scenario is Scenario.STATE_FEEDBACK or (
        scenario.observer_only and cfg.plant_control == "feedback")
    no_input = (0.0, 0.0)

    plant = FieldPair.from_presets(nx, cfg.ic, cfg.ic_v)
    observer = FieldPair.from_presets(nx, cfg.observer_ic, cfg.observer_ic_v) if setup else None
    error = plant - observer if scenario.observer_only else None

    if scenario.output_feedback:
        applied = W @ observer.stacked()
    elif plant_feedback:
        applied = W @ plant.stacked()
    else:
        applied = np.zeros(2)

    times, plants, observers, controls, readings = [], [], [], [], []

    def record(k):
        times.append(k * cfg.dt)
        plants.append(_freeze_pair(plant))
        if observer is not None:
            observers.append(_freeze_pair(observer))
        controls.append(np.array(applied, dtype=float))
        readings.append(sensor_output(plant, setup))

    record(0)
    logger.info(f"Running {scenario.value} for {cfg.num_steps} steps (nx={nx}, dt={cfg.dt:g}, "
                f"{cfg.snapshot_count} snapshots)")

    for k in range(cfg.num_steps):
        theta = 1.0 if k < cfg.startup_steps else cfg.theta

        if scenario.output_feedback:
            measurement = sensor_output(plant, setup)
            if implicit:
                observer = step_observer(observer, measurement, no_input, gains, cfg, closed, theta)
                applied = np.array([observer.u[-1], observer.v[-1]])
            else:
                applied = W @ observer.stacked()
                observer = step_observer(observer, measurement, applied, gains, cfg, plain, theta)
            plant = step_plant(plant, applied, cfg, plain, theta)
        else:
            if plant_feedback and implicit:
                plant = step_plant(plant, no_input, cfg, closed, theta)
                applied = np.array([plant.u[-1], plant.v[-1]])
            else:
                applied = W @ plant.stacked() if plant_feedback else np.zeros(2)
                plant = step_plant(plant, applied, cfg, plain, theta)
            if error is not None:
                error = step_observer(error, 0.0, no_input, gains, cfg, plain, theta)
                observer = plant - error

        if (k + 1) % cfg.record_every == 0:
            record(k + 1)

    logger.info(f"Finished {scenario.value}: {len(times)} snapshots in {time.perf_counter() - start:.2f}s")
    return Trajectory(
        scenario=scenario,
        times=_frozen(times),
        plant=tuple(plants),
        observer=tuple(observers) if setup else None,
        controls=_frozen(controls),
        measurements=_frozen(readings),
        config=cfg,
    )


class TransformDirection(str, Enum):
    FORWARD = "forward"
    INVERSE = "inverse"
    OBSERVER_FORWARD = "observer_forward"
    OBSERVER_INVERSE = "observer_inverse"


_DIRECTION_FAMILIES = {
    TransformDirection.FORWARD: (KernelFamily.CONTROL,),
    TransformDirection.INVERSE: (KernelFamily.INVERSE,),
    TransformDirection.OBSERVER_FORWARD: (KernelFamily.OBSERVER_ANTICOLLOCATED, KernelFamily.OBSERVER_COLLOCATED),
    TransformDirection.OBSERVER_INVERSE: (KernelFamily.OBSERVER_ANTICOLLOCATED, KernelFamily.OBSERVER_COLLOCATED),
}


def _volterra_matrix(stack: np.ndarray, upper: bool) -> np.ndarray:
    m = stack.shape[-1]
    h = 1.0 / (m - 1)
    idx = np.arange(m)
    if upper:
        # ∫_x^1 P(x, y) w(y) dy with P(x_i, y_j) stored at [j, i]
        weights = np.triu(np.full((m, m), h))
        weights[idx, idx] = 0.5 * h
        weights[:, -1] = 0.5 * h
        weights[-1, -1] = 0.0
        blocks = [[weights * stack[a, b].T for b in range(2)] for a in range(2)]
    else:
        weights = np.tril(np.full((m, m), h))
        weights[idx, idx] = 0.5 * h
        weights[:, 0] = 0.5 * h
        weights[0, 0] = 0.0
        blocks = [[weights * stack[a, b] for b in range(2)] for a in range(2)]
    return np.block(blocks)


class VolterraOperator:
    """Transform between plant and target coordinates on a fixed nx-grid."""

    def __init__(self, kernel: KernelField, nx: int, direction: TransformDirection,
                 interpolate: bool = True):
        direction = TransformDirection(direction)
        if kernel.family not in _DIRECTION_FAMILIES[direction]:
            raise FamilyMismatchError(
                f"{direction.value} transform cannot use a {kernel.family.value} kernel")
        if kernel.n != nx and not interpolate:
            raise IncompatibleGridsError(f"kernel grid n={kernel.n} differs from state grid nx={nx}")
        self.direction = direction
        self.nx = nx
        matrix = _volterra_matrix(resample_kernel(kernel, nx), upper=kernel.swapped)
        self._lu = None
        if direction is TransformDirection.FORWARD or direction is TransformDirection.OBSERVER_FORWARD:
            self.matrix = np.eye(2 * (nx + 1)) - matrix
        elif direction is TransformDirection.INVERSE:
            self.matrix = np.eye(2 * (nx + 1)) + matrix
        else:
            self.matrix = np.eye(2 * (nx + 1)) - matrix
            self._lu = lu_factor(self.matrix)

    def apply(self, state: FieldPair) -> FieldPair:
        if state.nx != self.nx:
            raise IncompatibleGridsError(f"operator built for nx={self.nx}, state has nx={state.nx}")
        if self._lu is not None:
            return FieldPair.from_stacked(lu_solve(self._lu, state.stacked()))
        return FieldPair.from_stacked(self.matrix @ state.stacked())


def apply_transform(state: FieldPair, kernel: KernelField, direction: TransformDirection,
                    interpolate: bool = True) -> FieldPair:
    """γ = w − ∫₀ˣKw (FORWARD), w = γ + ∫₀ˣLγ (INVERSE), observer-error variants.

    Observer transforms integrate over [0, x] (anti-collocated) or [x, 1]
    (collocated); OBSERVER_INVERSE solves the Volterra system for γ̃.
    """
    return VolterraOperator(kernel, state.nx, direction, interpolate).apply(state)


class SimulationCommands:
    """`simulate` command: run one scenario and export snapshots, norms and controls."""

    def __init__(self, toolkit):
        self.toolkit = toolkit

    async def simulate(self, args) -> int:
        from utils.config import load_run_config
        from utils.csv_io import (RunManifest, write_controls_csv, write_manifest,
                                  write_norms_csv, write_snapshot_csv)
        from features.analysis.analysis import lyapunov_monitor, norm_series

        cfg, options = load_run_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest.start("simulate", cfg, options)

        solved = await asyncio.gather(*[
            self.toolkit.kernel(family, cfg.lambda1, cfg.lambda2, options.n, options.tol, options.max_iter)
            for family in required_families(cfg)
        ])
        by_family = dict(zip(required_families(cfg), solved))
        for kf in solved:
            manifest.add_kernel(kf)
        bundle = KernelBundle(
            control=by_family.get(KernelFamily.CONTROL),
            observer=by_family.get(cfg.scenario.setup.family) if cfg.scenario.setup else None,
        )

        traj = await asyncio.to_thread(run_scenario, cfg, bundle)
        norms = norm_series(traj)
        if cfg.scenario is Scenario.OUTPUT_FEEDBACK_ANTICOLLOCATED:
            report = lyapunov_monitor(traj, bundle.control, bundle.observer_gains(cfg.scenario.setup),
                                      bundle.observer)
            norms["V_lyap"] = report.V
            self.toolkit.logger.info(f"Lyapunov bound {'holds' if report.bound_ok else 'violated'} "
                                     f"(A={report.A:.4g})")

        manifest.add_output(write_snapshot_csv(out / "snapshots.csv", traj))
        manifest.add_output(write_norms_csv(out / "norms.csv", norms))
        manifest.add_output(write_controls_csv(out / "controls.csv", traj))
        write_manifest(out, manifest)
        print(f"✅ Trajectory written to {out}")
        return 0


async def setup(toolkit):
    """Register the simulate command."""
    toolkit.add_command('simulate', SimulationCommands(toolkit).simulate,
                        "run one closed- or open-loop scenario and export CSV time series")
