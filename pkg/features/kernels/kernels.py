"""
Kernels Feature Module
Poses the control, inverse and observer kernel systems as Goursat pairs,
assembles the 2×2 kernel fields and extracts controller/observer gains.
"""

import asyncio
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from core.errors import FamilyMismatchError, InvalidProblemError
from features.goursat.goursat import KernelProblem, Side, solve_pair

logger = logging.getLogger('Backstep.Kernels')

COMPONENTS = ("Kuu", "Kuv", "Kvu", "Kvv")


class KernelFamily(str, Enum):
    CONTROL = "control"
    INVERSE = "inverse"
    OBSERVER_ANTICOLLOCATED = "observer_anticollocated"
    OBSERVER_COLLOCATED = "observer_collocated"


class ObserverSetup(str, Enum):
    ANTI_COLLOCATED = "anti_collocated"
    COLLOCATED = "collocated"

    @property
    def family(self) -> KernelFamily:
        if self is ObserverSetup.ANTI_COLLOCATED:
            return KernelFamily.OBSERVER_ANTICOLLOCATED
        return KernelFamily.OBSERVER_COLLOCATED


@dataclass(frozen=True)
class PairSpec:
    """One Goursat pair of a family: G couples to H through a, H to G through b."""

    g: str
    h: str
    a: float
    b: float
    c_g: float
    c_h: float
    side: Side


def family_pairs(family: KernelFamily, lambda1: float, lambda2: float) -> Tuple[PairSpec, PairSpec]:
    """Goursat data of a family, in the coordinates the solver works in.

    Control and inverse kernels are solved in place. The anti-collocated
    observer kernel is solved under (x, y) → (1 − y, 1 − x), the collocated
    one with its arguments swapped.
    """
    q1, q2 = lambda1 / 4.0, lambda2 / 4.0
    neumann, dirichlet = Side.REFLECTION_NEUMANN, Side.ZERO_DIRICHLET

    if family is KernelFamily.CONTROL:
        return (PairSpec("Kuu", "Kuv", q2, q1, 0.0, -q1, neumann),
                PairSpec("Kvv", "Kvu", q1, q2, 0.0, -q2, neumann))
    if family is KernelFamily.INVERSE:
        return (PairSpec("Kuu", "Kvu", -q1, -q2, 0.0, -q2, neumann),
                PairSpec("Kvv", "Kuv", -q2, -q1, 0.0, -q1, neumann))
    if family is KernelFamily.OBSERVER_ANTICOLLOCATED:
        return (PairSpec("Kuu", "Kvu", q1, q2, 0.0, q2, dirichlet),
                PairSpec("Kvv", "Kuv", q2, q1, 0.0, q1, dirichlet))
    if family is KernelFamily.OBSERVER_COLLOCATED:
        return (PairSpec("Kuu", "Kvu", q1, q2, 0.0, -q2, neumann),
                PairSpec("Kvv", "Kuv", q2, q1, 0.0, -q1, neumann))
    raise FamilyMismatchError(f"unknown kernel family {family!r}")


def pde_orientation(family: KernelFamily) -> float:
    """Sign relating stored components to the solver's wave operator."""
    return -1.0 if family is KernelFamily.OBSERVER_ANTICOLLOCATED else 1.0


@dataclass(frozen=True)
class KernelField:
    """The four kernel components on the triangle 0 ≤ y ≤ x ≤ 1.

    The collocated observer kernel lives on x ≤ y; it is stored swapped,
    Kuu[i, j] = P^uu(y_j, x_i). Use `matrix` for original coordinates.
    """

    n: int
    Kuu: np.ndarray
    Kuv: np.ndarray
    Kvu: np.ndarray
    Kvv: np.ndarray
    family: KernelFamily
    lambda1: float
    lambda2: float
    metadata: Dict[str, object] = field(default_factory=dict, compare=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)

    @property
    def swapped(self) -> bool:
        return self.family is KernelFamily.OBSERVER_COLLOCATED

    def components(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in COMPONENTS}

    def stack(self) -> np.ndarray:
        """Components as a (2, 2, n+1, n+1) array indexed [row, col, i, j]."""
        return np.array([[self.Kuu, self.Kuv], [self.Kvu, self.Kvv]])

    def matrix(self, i: int, j: int) -> np.ndarray:
        """2×2 kernel value at (x_i, y_j) in the family's original coordinates."""
        if self.swapped:
            i, j = j, i
        if j > i:
            raise IndexError(f"node ({i}, {j}) lies outside the kernel's triangle")
        return self.stack()[:, :, i, j]

    def max_norm(self) -> float:
        """Bounding constant max |K| over components and nodes."""
        return float(max(np.max(np.abs(c)) for c in self.components().values()))


@dataclass(frozen=True)
class GainSet:
    """Feedback row K(1, ·) and/or observer injection gains, on the n-grid."""

    n: int
    feedback_row: Optional[np.ndarray] = None
    p1: Optional[np.ndarray] = None
    p2: Optional[np.ndarray] = None
    setup: Optional[ObserverSetup] = None
    L_gain: float = 0.0

    @classmethod
    def combine(cls, feedback: "GainSet", observer: "GainSet") -> "GainSet":
        if feedback.n != observer.n:
            raise FamilyMismatchError(
                f"feedback gains on n={feedback.n} and observer gains on n={observer.n}")
        return cls(n=feedback.n, feedback_row=feedback.feedback_row,
                   p1=observer.p1, p2=observer.p2, setup=observer.setup)

    @property
    def has_feedback(self) -> bool:
        return self.feedback_row is not None

    @property
    def has_observer(self) -> bool:
        return self.p1 is not None and self.p2 is not None


def solve_family(family: KernelFamily, lambda1: float, lambda2: float, n: int,
                 tol: float = 1e-12, max_iter: int = 200) -> KernelField:
    """Solve both pairs of a family and assemble the stored kernel field."""
    if not (np.isfinite(lambda1) and np.isfinite(lambda2)):
        raise InvalidProblemError(f"non-finite coupling constants ({lambda1}, {lambda2})")
    start = time.perf_counter()
    fields: Dict[str, np.ndarray] = {}
    metadata: Dict[str, object] = {"iterations": [], "final_increments": []}

    for pair in family_pairs(family, lambda1, lambda2):
        problem = KernelProblem(a=pair.a, b=pair.b, c_g=pair.c_g, c_h=pair.c_h,
                                side=pair.side, n=n, tol=tol, max_iter=max_iter)
        solution = solve_pair(problem)
        G, H = solution.G, solution.H
        if family is KernelFamily.OBSERVER_ANTICOLLOCATED:
            # P[i, j] = P̄[n − j, n − i]
            G, H = G[::-1, ::-1].T.copy(), H[::-1, ::-1].T.copy()
        fields[pair.g] = G
        fields[pair.h] = H
        metadata["iterations"].append(solution.iterations_used)
        metadata["final_increments"].append(solution.final_increment)

    metadata["seconds"] = time.perf_counter() - start
    logger.info(f"Solved {family.value} kernel for λ=({lambda1:g}, {lambda2:g}) at n={n} "
                f"in {metadata['seconds']:.2f}s")
    return KernelField(n=n, family=family, lambda1=float(lambda1), lambda2=float(lambda2),
                       metadata=metadata, **fields)


def control_kernel(lambda1: float, lambda2: float, n: int, tol: float = 1e-12,
                   max_iter: int = 200) -> KernelField:
    """Kernel K of the forward transformation γ = w − ∫₀ˣ K w."""
    return solve_family(KernelFamily.CONTROL, lambda1, lambda2, n, tol, max_iter)


def inverse_kernel(lambda1: float, lambda2: float, n: int, tol: float = 1e-12,
                   max_iter: int = 200) -> KernelField:
    """Kernel L of the inverse transformation w = γ + ∫₀ˣ L γ."""
    return solve_family(KernelFamily.INVERSE, lambda1, lambda2, n, tol, max_iter)


def observer_kernel_anticollocated(lambda1: float, lambda2: float, n: int, tol: float = 1e-12,
                                   max_iter: int = 200) -> KernelField:
    """Observer-error kernel for the sensor at x = 0; vanishes on x = 1."""
    return solve_family(KernelFamily.OBSERVER_ANTICOLLOCATED, lambda1, lambda2, n, tol, max_iter)


def observer_kernel_collocated(lambda1: float, lambda2: float, n: int, tol: float = 1e-12,
                               max_iter: int = 200) -> KernelField:
    """Observer-error kernel for the sensor at x = 1, stored swapped."""
    return solve_family(KernelFamily.OBSERVER_COLLOCATED, lambda1, lambda2, n, tol, max_iter)


FAMILY_SOLVERS = {
    KernelFamily.CONTROL: control_kernel,
    KernelFamily.INVERSE: inverse_kernel,
    KernelFamily.OBSERVER_ANTICOLLOCATED: observer_kernel_anticollocated,
    KernelFamily.OBSERVER_COLLOCATED: observer_kernel_collocated,
}


def expected_diagonal(kf: KernelField) -> Dict[str, np.ndarray]:
    """Goursat data each stored component must carry on its diagonal."""
    x = kf.grid
    values = {name: np.zeros_like(x) for name in COMPONENTS}
    for pair in family_pairs(kf.family, kf.lambda1, kf.lambda2):
        for name, slope in ((pair.g, pair.c_g), (pair.h, pair.c_h)):
            if kf.family is KernelFamily.OBSERVER_ANTICOLLOCATED:
                values[name] = 2.0 * slope * (1.0 - x)
            else:
                values[name] = 2.0 * slope * x
    return values


def diagonal_defect(kf: KernelField) -> float:
    """Max deviation of the stored diagonals from their Goursat data."""
    expected = expected_diagonal(kf)
    return float(max(np.max(np.abs(np.diag(getattr(kf, name)) - expected[name]))
                     for name in COMPONENTS))


def edge_derivative(component: np.ndarray, h: float) -> np.ndarray:
    """One-sided second-order ∂_y at y = 0 for every row with at least three nodes."""
    return (-3.0 * component[:, 0] + 4.0 * component[:, 1] - component[:, 2]) / (2.0 * h)


def _anticollocated_gain(component: np.ndarray, h: float) -> np.ndarray:
    gain = edge_derivative(component, h)
    # rows 0 and 1 lack three nodes; quadratic extrapolation from rows 2..4
    gain[1] = 3.0 * gain[2] - 3.0 * gain[3] + gain[4]
    gain[0] = 3.0 * gain[1] - 3.0 * gain[2] + gain[3]
    return gain


def extract_gains(kf: KernelField, setup: Optional[ObserverSetup] = None) -> GainSet:
    """Read the feedback row (setup=None) or the observer gains of `setup`.

    Raises:
        FamilyMismatchError: if kf is not the family the request needs.
    """
    if setup is None:
        if kf.family is not KernelFamily.CONTROL:
            raise FamilyMismatchError(f"feedback row needs a control kernel, got {kf.family.value}")
        row = kf.stack()[:, :, kf.n, :].copy()
        return GainSet(n=kf.n, feedback_row=row)

    setup = ObserverSetup(setup)
    if kf.family is not setup.family:
        raise FamilyMismatchError(
            f"{setup.value} gains need a {setup.family.value} kernel, got {kf.family.value}")

    if setup is ObserverSetup.ANTI_COLLOCATED:
        p1 = _anticollocated_gain(kf.Kuu, kf.h)
        p2 = _anticollocated_gain(kf.Kvu, kf.h)
    else:
        p1 = kf.Kuu[kf.n, :].copy()
        p2 = kf.Kvu[kf.n, :].copy()
    return GainSet(n=kf.n, p1=p1, p2=p2, setup=setup)


class KernelCommands:
    """`kernels` command: solve every family and export surfaces and gain curves."""

    def __init__(self, toolkit):
        self.toolkit = toolkit

    async def kernels(self, args) -> int:
        from utils.config import load_run_config
        from utils.csv_io import RunManifest, write_gain_csv, write_kernel_csv, write_manifest
        from features.analysis.analysis import scaled_second_difference

        cfg, options = load_run_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest.start("kernels", cfg, options)

        fields = await asyncio.gather(*[
            self.toolkit.kernel(family, cfg.lambda1, cfg.lambda2, options.n,
                                options.tol, options.max_iter)
            for family in KernelFamily
        ])
        by_family = dict(zip(KernelFamily, fields))

        for family, kf in by_family.items():
            path = write_kernel_csv(out / f"kernel_{family.value}.csv", kf)
            manifest.add_output(path)
            manifest.add_kernel(kf)
            smooth = max(scaled_second_difference(c) for c in kf.components().values())
            self.toolkit.logger.info(f"{family.value}: max scaled second difference {smooth:.4g}")

        grid = by_family[KernelFamily.CONTROL].grid
        row = extract_gains(by_family[KernelFamily.CONTROL]).feedback_row
        manifest.add_output(write_gain_csv(
            out / "gains_feedback.csv", "y", grid,
            {"Kuu": row[0, 0], "Kuv": row[0, 1], "Kvu": row[1, 0], "Kvv": row[1, 1]}))
        for setup in ObserverSetup:
            gains = extract_gains(by_family[setup.family], setup)
            manifest.add_output(write_gain_csv(
                out / f"gains_observer_{setup.value.replace('_', '')}.csv", "x", grid,
                {"p1": gains.p1, "p2": gains.p2}))

        write_manifest(out, manifest)
        print(f"✅ Kernels written to {out}")
        return 0


async def setup(toolkit):
    """Register the kernels command."""
    toolkit.add_command('kernels', KernelCommands(toolkit).kernels,
                        "solve all kernel families and export CSV surfaces and gains")
