"""
Analysis Feature Module
Norms, decay-rate fits, the modal growth oracle, kernel residuals and the
Lyapunov monitor for anti-collocated output feedback.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import linregress

from core.errors import (ComplexSpectrumError, FamilyMismatchError, GridMismatchError,
                         InvalidProblemError, NonPositiveNormError, WrongScenarioError)
from features.kernels.kernels import (GainSet, KernelFamily, KernelField, ObserverSetup,
                                      edge_derivative, family_pairs, pde_orientation)
from features.simulation.simulation import (FieldPair, Scenario, TransformDirection, Trajectory,
                                            VolterraOperator)

logger = logging.getLogger('Backstep.Analysis')

SLOWEST_MODE = (math.pi / 2) ** 2


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit ln‖·‖ ≈ intercept − rate·t over a window."""

    rate: float
    intercept: float
    window: Tuple[float, float]
    r_squared: float
    samples: int

    def kappa(self, initial_norm: float) -> float:
        """Overshoot constant of ‖w(t)‖ ≤ κ‖w(0)‖e^{−rate·t}."""
        return math.exp(self.intercept) / initial_norm


@dataclass(frozen=True)
class LyapunovReport:
    Q1: np.ndarray
    Q2: np.ndarray
    C: float
    D: float
    A: float
    times: np.ndarray
    V: np.ndarray
    bound_ok: bool
    monotone: bool


def l2_norm(state: FieldPair) -> float:
    """√∫(u² + v²) by the trapezoid rule."""
    return math.sqrt(trapezoid(state.u ** 2 + state.v ** 2, state.grid))


def _component_energy(values: np.ndarray, x: np.ndarray) -> float:
    return float(trapezoid(values ** 2, x))


def norm_series(traj: Trajectory) -> Dict[str, np.ndarray]:
    """Columns t, l2_u, l2_v, l2_w, l2_err; l2_err is NaN without an observer."""
    x = traj.plant[0].grid
    series = {
        "t": np.asarray(traj.times),
        "l2_u": np.array([math.sqrt(_component_energy(s.u, x)) for s in traj.plant]),
        "l2_v": np.array([math.sqrt(_component_energy(s.v, x)) for s in traj.plant]),
        "l2_w": np.array([l2_norm(s) for s in traj.plant]),
    }
    if traj.observer is not None:
        series["l2_err"] = np.array([l2_norm(e) for e in traj.errors()])
    else:
        series["l2_err"] = np.full(len(traj.times), np.nan)
    return series


def fit_decay(times, norms, window: Optional[Tuple[float, float]] = None,
              min_samples: int = 10) -> DecayFit:
    """Decay rate from a linear regression of ln‖·‖ on t (positive = decaying).

    The default window is the tail [t_end/2, t_end].
    """
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if window is None:
        window = (0.5 * times[-1], float(times[-1]))
    t_start, t_end = window
    if not t_start < t_end:
        raise InvalidProblemError(f"empty fit window {window}")

    slack = 1e-9 * max(1.0, abs(t_end))
    selected = (times >= t_start - slack) & (times <= t_end + slack)
    if selected.sum() < min_samples:
        raise InvalidProblemError(
            f"fit window {window} holds {selected.sum()} samples, need {min_samples}")
    values = norms[selected]
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise NonPositiveNormError(f"norm series has non-positive samples in window {window}")

    fit = linregress(times[selected], np.log(values))
    return DecayFit(rate=-float(fit.slope), intercept=float(fit.intercept),
                    window=(float(t_start), float(t_end)),
                    r_squared=float(fit.rvalue ** 2), samples=int(selected.sum()))


def modal_rate_oracle(lambda1: float, lambda2: float) -> float:
    """Dominant open-loop growth rate √(λ₁λ₂) − (π/2)²."""
    product = lambda1 * lambda2
    if product < 0:
        raise ComplexSpectrumError(
            f"λ₁λ₂ = {product:g} < 0 gives complex coupling eigenvalues")
    return math.sqrt(product) - SLOWEST_MODE


def _check_same_grid(*fields: KernelField):
    sizes = {kf.n for kf in fields}
    if len(sizes) > 1:
        raise GridMismatchError(f"kernels on different grids: n = {sorted(sizes)}")


def reciprocity_residual(K: KernelField, L: KernelField) -> float:
    """max over nodes of the Frobenius norm of L − K − ∫_y^x K(x,s)L(s,y)ds."""
    _check_same_grid(K, L)
    if K.family is not KernelFamily.CONTROL or L.family is not KernelFamily.INVERSE:
        raise FamilyMismatchError(
            f"reciprocity pairs a control and an inverse kernel, got {K.family.value}, {L.family.value}")
    h = K.h
    Ks, Ls = K.stack(), L.stack()
    residual = np.zeros_like(Ks)
    for a in range(2):
        for b in range(2):
            composed = np.zeros_like(Ks[0, 0])
            for c in range(2):
                Kac, Lcb = Ks[a, c], Ls[c, b]
                composed += h * (Kac @ Lcb)
                composed -= 0.5 * h * (Kac * np.diag(Lcb)[None, :] + np.diag(Kac)[:, None] * Lcb)
            residual[a, b] = Ls[a, b] - Ks[a, b] - composed
    nodewise = np.sqrt(np.sum(residual ** 2, axis=(0, 1)))
    return float(np.max(np.where(np.tri(K.n + 1, dtype=bool), nodewise, 0.0)))


def kernel_pde_residual(kf: KernelField) -> float:
    """Max interior residual of the family's wave system by centred differences."""
    if kf.n < 32:
        raise InvalidProblemError(f"residual check needs n ≥ 32, got {kf.n}")
    h2 = kf.h ** 2
    comps = kf.components()
    sign = pde_orientation(kf.family)
    interior = np.tri(kf.n - 1, k=-1, dtype=bool)
    worst = 0.0
    for pair in family_pairs(kf.family, kf.lambda1, kf.lambda2):
        for name, partner, coupling in ((pair.g, pair.h, pair.a), (pair.h, pair.g, pair.b)):
            F = comps[name]
            Fxx = (F[2:, 1:-1] - 2 * F[1:-1, 1:-1] + F[:-2, 1:-1]) / h2
            Fyy = (F[1:-1, 2:] - 2 * F[1:-1, 1:-1] + F[1:-1, :-2]) / h2
            R = Fxx - Fyy - sign * 4.0 * coupling * comps[partner][1:-1, 1:-1]
            worst = max(worst, float(np.max(np.abs(R[interior]), initial=0.0)))
    return worst


def scaled_second_difference(component: np.ndarray) -> float:
    """Max |Δ²|/h² along x and y over nodes whose stencil stays in the triangle."""
    n = component.shape[0] - 1
    h2 = (1.0 / n) ** 2
    interior = np.tri(n - 1, k=-1, dtype=bool)
    dxx = (component[2:, 1:-1] - 2 * component[1:-1, 1:-1] + component[:-2, 1:-1]) / h2
    dyy = (component[1:-1, 2:] - 2 * component[1:-1, 1:-1] + component[1:-1, :-2]) / h2
    return float(max(np.max(np.abs(dxx[interior]), initial=0.0),
                     np.max(np.abs(dyy[interior]), initial=0.0)))


def neumann_edge_defect(kf: KernelField) -> float:
    """Max one-sided |K_y(x, 0)| over components; meaningful for Neumann families."""
    if kf.family is KernelFamily.OBSERVER_ANTICOLLOCATED:
        raise FamilyMismatchError("the anti-collocated kernel carries no Neumann edge")
    return float(max(np.max(np.abs(edge_derivative(c, kf.h)[2:])) for c in kf.components().values()))


def kernel_bounds(K: KernelField, L: KernelField) -> Tuple[float, float, float]:
    """(K∞, L∞, (1+K∞)(1+L∞)): sup norms and the resulting overshoot bound."""
    k_inf, l_inf = K.max_norm(), L.max_norm()
    return k_inf, l_inf, (1.0 + k_inf) * (1.0 + l_inf)


def _trapezoid_lower(n: int) -> np.ndarray:
    h = 1.0 / n
    idx = np.arange(n + 1)
    weights = np.tril(np.full((n + 1, n + 1), h))
    weights[idx, idx] = 0.5 * h
    weights[:, 0] = 0.5 * h
    weights[0, 0] = 0.0
    return weights


def lyapunov_monitor(traj: Trajectory, K: KernelField, gains: GainSet, P: KernelField,
                     tol_fit: float = 0.01) -> LyapunovReport:
    """Evaluate V = A/2‖α̃‖² + ½(‖α̂‖² + ‖β̃‖² + ‖β̂‖²) along an output-feedback run.

    γ̂ = (α̂, β̂) is the forward transform of ŵ and γ̃ = (α̃, β̃) the observer-error
    state recovered from w̃ through P.
    """
    if traj.scenario is not Scenario.OUTPUT_FEEDBACK_ANTICOLLOCATED or traj.observer is None:
        raise WrongScenarioError(
            f"Lyapunov monitor needs an anti-collocated output-feedback run, got {traj.scenario.value}")
    if K.family is not KernelFamily.CONTROL:
        raise FamilyMismatchError(f"expected the control kernel, got {K.family.value}")
    if gains.setup is not ObserverSetup.ANTI_COLLOCATED or not gains.has_observer:
        raise FamilyMismatchError("expected anti-collocated observer gains")
    _check_same_grid(K, P)
    if gains.n != K.n:
        raise GridMismatchError(f"gains on n={gains.n}, kernel on n={K.n}")

    weights = _trapezoid_lower(K.n)
    Q1 = (weights * K.Kuu) @ gains.p1 + (weights * K.Kuv) @ gains.p2
    Q2 = (weights * K.Kvu) @ gains.p1 + (weights * K.Kvv) @ gains.p2
    C = max(0.0, float(np.max(gains.p1 - Q1)))
    D = max(0.0, float(np.max(gains.p2 - Q2)))
    A = 2.0 * (C ** 2 + D ** 2)

    nx = traj.plant[0].nx
    x = traj.plant[0].grid
    forward = VolterraOperator(K, nx, TransformDirection.FORWARD)
    recover = VolterraOperator(P, nx, TransformDirection.OBSERVER_INVERSE)

    V = []
    for w, w_hat in zip(traj.plant, traj.observer):
        target = forward.apply(w_hat)
        error = recover.apply(w - w_hat)
        V.append(0.5 * A * _component_energy(error.u, x)
                 + 0.5 * (_component_energy(target.u, x)
                          + _component_energy(error.v, x)
                          + _component_energy(target.v, x)))
    V = np.array(V)
    times = np.asarray(traj.times)

    envelope = V[0] * np.exp(-times / 4.0) * (1.0 + tol_fit)
    bound_ok = bool(np.all(V <= envelope))
    monotone = bool(np.all(np.diff(V[1:]) <= 1e-10))
    logger.info(f"Lyapunov monitor: A={A:.4g}, V0={V[0]:.4g}, bound_ok={bound_ok}, monotone={monotone}")
    return LyapunovReport(Q1=Q1, Q2=Q2, C=C, D=D, A=A, times=times, V=V,
                          bound_ok=bound_ok, monotone=monotone)


class AnalysisCommands:
    """`spectrum` command: print the open-loop modal growth rate."""

    def __init__(self, toolkit):
        self.toolkit = toolkit

    async def spectrum(self, args) -> int:
        from utils.config import load_run_config

        cfg, _ = load_run_config(args)
        rate = modal_rate_oracle(cfg.lambda1, cfg.lambda2)
        print(f"{rate:.4f}")
        self.toolkit.logger.info(
            f"Modal growth rate for λ=({cfg.lambda1:g}, {cfg.lambda2:g}): {rate:.6f}")
        return 0


async def setup(toolkit):
    """Register the spectrum command."""
    toolkit.add_command('spectrum', AnalysisCommands(toolkit).spectrum,
                        "print the dominant open-loop growth rate")
