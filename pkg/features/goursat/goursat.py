"""
Goursat Feature Module
Successive-approximation solver for one coupled pair of hyperbolic Goursat
problems G_ξη = a·H, H_ξη = b·G on the triangle 0 ≤ y ≤ x ≤ 1.

The integral equations are evaluated on the full (ξ, η) lattice of spacing
h = 1/n, ξ = x + y ∈ [0, 2], η = x − y ∈ [0, min(ξ, 2 − ξ)]. Lattice nodes
with p + q even are the (x, y) triangle nodes; the others sit at cell
centres and only feed the quadrature.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Tuple

import numpy as np

from core.errors import InvalidProblemError, IterationLimitError

logger = logging.getLogger('Backstep.Goursat')


class Side(str, Enum):
    """Condition imposed on the line ξ = η (the y = 0 edge)."""

    REFLECTION_NEUMANN = "reflection_neumann"
    ZERO_DIRICHLET = "zero_dirichlet"


@dataclass(frozen=True)
class KernelProblem:
    """One coupled Goursat pair with constant coupling and linear diagonal data."""

    a: float
    b: float
    c_g: float
    c_h: float
    side: Side
    n: int
    tol: float = 1e-12
    max_iter: int = 200

    def validate(self):
        if self.n < 8:
            raise InvalidProblemError(f"grid resolution n={self.n} must be at least 8")
        if not self.tol > 0:
            raise InvalidProblemError(f"tolerance must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise InvalidProblemError(f"max_iter must be at least 1, got {self.max_iter}")
        values = (self.a, self.b, self.c_g, self.c_h)
        if not all(math.isfinite(v) for v in values):
            raise InvalidProblemError(f"non-finite problem data {values}")
        if not isinstance(self.side, Side):
            raise InvalidProblemError(f"unknown side condition {self.side!r}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    def bound_constant(self) -> float:
        """Constant M of the factorial increment bound and of |G|, |H| ≤ M e^{2M}."""
        return max(1.0, 3 * abs(self.a), 3 * abs(self.b),
                   math.sqrt(abs(self.c_g) + abs(self.c_h)))


@dataclass(frozen=True)
class PairSolution:
    """Converged (G, H) sampled on the (x, y) triangle.

    G[i, j] holds G(ξ, η) at x = i/n, y = j/n for j ≤ i; entries above the
    diagonal are zero.
    """

    G: np.ndarray
    H: np.ndarray
    iterations_used: int
    final_increment: float
    increment_history: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def n(self) -> int:
        return self.G.shape[0] - 1


def triangle_mask(n: int) -> np.ndarray:
    """Boolean (n+1, n+1) mask of the nodes 0 ≤ y ≤ x ≤ 1."""
    return np.tri(n + 1, dtype=bool)


def _lattice_mask(n: int) -> np.ndarray:
    p = np.arange(2 * n + 1)[:, None]
    q = np.arange(n + 1)[None, :]
    return q <= np.minimum(p, 2 * n - p)


def _to_triangle(A: np.ndarray, n: int) -> np.ndarray:
    i, j = np.tril_indices(n + 1)
    out = np.zeros((n + 1, n + 1))
    out[i, j] = A[i + j, i - j]
    return out


class _LatticeQuadrature:
    """Iterated trapezoid integrals of a lattice field F(τ, s).

    inner[k, q]  = ∫₀^{qh} F(kh, s) ds
    ramp[q]      = ∫₀^{qh} inner(τ, τ) dτ
    strip[p, q]  = ∫_{qh}^{ph} inner(τ, qh) dτ
    """

    def __init__(self, n: int):
        self.n = n
        self.h = 1.0 / n
        self.mask = _lattice_mask(n)
        rows = np.arange(2 * n + 1)[:, None]
        cols = np.arange(n + 1)[None, :]
        self.upper = rows >= cols
        self.diag_index = np.arange(n + 1)

    def integrals(self, F: np.ndarray):
        h = self.h
        S = np.cumsum(F, axis=1)
        inner = h * (S - 0.5 * F[:, :1] - 0.5 * F)

        diag = inner[self.diag_index, self.diag_index]
        ramp = h * (np.cumsum(diag) - 0.5 * diag[0] - 0.5 * diag)

        masked = np.where(self.upper, inner, 0.0)
        T = np.cumsum(masked, axis=0)
        strip = h * (T - 0.5 * diag[None, :] - 0.5 * masked)
        return ramp, strip

    def operator(self, F: np.ndarray, coupling: float, side: Side) -> np.ndarray:
        """Linear part Ω of the integral equation applied to the partner field."""
        if coupling == 0.0:
            return np.zeros_like(F)
        ramp, strip = self.integrals(F)
        if side is Side.REFLECTION_NEUMANN:
            out = coupling * (2.0 * ramp[None, :] + strip)
        else:
            out = coupling * strip
        return np.where(self.mask, out, 0.0)


def _data_term(problem: KernelProblem, slope: float) -> np.ndarray:
    n = problem.n
    xi = np.arange(2 * n + 1)[:, None] * problem.h
    eta = np.arange(n + 1)[None, :] * problem.h
    if problem.side is Side.REFLECTION_NEUMANN:
        data = slope * (xi + eta)
    else:
        data = slope * (xi - eta)
    return np.where(_lattice_mask(n), data, 0.0)


def solve_pair(problem: KernelProblem) -> PairSolution:
    """Solve the pair by successive approximation J^{k+1} = Θ + Ω[J^k], J⁰ = 0.

    Raises:
        InvalidProblemError: if the problem data are out of range.
        IterationLimitError: if the increment stays above tol after max_iter terms.
    """
    problem.validate()
    quad = _LatticeQuadrature(problem.n)

    dG = _data_term(problem, problem.c_g)
    dH = _data_term(problem, problem.c_h)
    G = np.zeros_like(dG)
    H = np.zeros_like(dH)
    history = []

    for k in range(1, problem.max_iter + 1):
        G += dG
        H += dH
        increment = float(max(np.max(np.abs(dG)), np.max(np.abs(dH))))
        history.append(increment)
        logger.debug(f"iteration {k}: increment {increment:.3e}")

        if increment <= problem.tol:
            logger.info(
                f"Pair solved (a={problem.a:g}, b={problem.b:g}, side={problem.side.value}, "
                f"n={problem.n}) in {k} iterations, last increment {increment:.3e}")
            return PairSolution(
                G=_to_triangle(G, problem.n),
                H=_to_triangle(H, problem.n),
                iterations_used=k,
                final_increment=increment,
                increment_history=tuple(history),
            )

        dG, dH = (quad.operator(dH, problem.a, problem.side),
                  quad.operator(dG, problem.b, problem.side))

    logger.error(f"Successive approximation stalled at {history[-1]:.3e} after {problem.max_iter} iterations")
    raise IterationLimitError(history[-1], problem.max_iter)


def increment_bound_holds(solution: PairSolution, problem: KernelProblem) -> bool:
    """Check increment_history[k] ≤ M^{k+1} 2^k / k! for every recorded term."""
    M = problem.bound_constant()
    for k, increment in enumerate(solution.increment_history):
        log_bound = (k + 1) * math.log(M) + k * math.log(2.0) - math.lgamma(k + 1)
        if increment > 0 and math.log(increment) > log_bound + 1e-12:
            return False
    return True


def solution_bound_holds(solution: PairSolution, problem: KernelProblem) -> bool:
    M = problem.bound_constant()
    bound = M * math.exp(2 * M)
    return bool(np.max(np.abs(solution.G)) <= bound and np.max(np.abs(solution.H)) <= bound)


def decoupled_reference(problem: KernelProblem) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form (G, H) on the triangle for a pair with a = 0.

    With a = 0, G is its linear data term and H adds b times the iterated
    integral of that linear G.
    """
    if problem.a != 0.0:
        raise InvalidProblemError("closed form only exists for a = 0")
    n = problem.n
    x = np.arange(n + 1)[:, None] / n
    y = np.arange(n + 1)[None, :] / n
    xi, eta = x + y, x - y
    band = eta * (xi ** 2 - eta ** 2) / 2
    if problem.side is Side.REFLECTION_NEUMANN:
        G = problem.c_g * (xi + eta)
        H = problem.c_h * (xi + eta) + problem.b * problem.c_g * (
            eta ** 3 + band + eta ** 2 * (xi - eta) / 2)
    else:
        G = problem.c_g * (xi - eta)
        H = problem.c_h * (xi - eta) + problem.b * problem.c_g * (
            band - eta ** 2 * (xi - eta) / 2)
    mask = triangle_mask(n)
    return np.where(mask, G, 0.0), np.where(mask, H, 0.0)


async def setup(toolkit):
    """The solver carries no command of its own."""
    toolkit.logger.debug("Goursat solver ready")
