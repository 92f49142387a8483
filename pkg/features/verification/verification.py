"""
Verification Feature Module
Acceptance suite over kernels, simulations and the Lyapunov monitor. Checks
run concurrently and are merged sorted by name.
"""

import asyncio
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from features.analysis.analysis import (SLOWEST_MODE, fit_decay, kernel_bounds, kernel_pde_residual,
                                        l2_norm, lyapunov_monitor, modal_rate_oracle, neumann_edge_defect,
                                        reciprocity_residual, scaled_second_difference)
from features.goursat.goursat import KernelProblem, increment_bound_holds, solve_pair
from features.kernels.kernels import (KernelFamily, KernelField, ObserverSetup, diagonal_defect,
                                      extract_gains, family_pairs)
from features.simulation.simulation import (FieldPair, ICPreset, KernelBundle, Scenario, SimConfig,
                                            TransformDirection, VolterraOperator, feedback_weights,
                                            run_scenario)

logger = logging.getLogger('Backstep.Verify')


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    bound: float
    passed: bool
    comparison: str = "<="
    detail: str = ""


def at_most(name: str, value: float, bound: float, detail: str = "") -> CheckResult:
    return CheckResult(name, float(value), float(bound), bool(value <= bound), "<=", detail)


def at_least(name: str, value: float, bound: float, detail: str = "") -> CheckResult:
    return CheckResult(name, float(value), float(bound), bool(value >= bound), ">=", detail)


def reported(name: str, value: float, detail: str = "") -> CheckResult:
    """Informational row; always passes."""
    return CheckResult(name, float(value), float(value), True, "=", detail)


@dataclass
class VerificationContext:
    """Run configuration plus the kernels solved up front for every check."""

    cfg: SimConfig
    n: int
    tol: float = 1e-12
    max_iter: int = 200
    kernels: Dict[Tuple[KernelFamily, int], KernelField] = field(default_factory=dict)

    @property
    def resolutions(self) -> Tuple[int, int]:
        return self.n, 2 * self.n

    def kernel(self, family: KernelFamily, n: Optional[int] = None) -> KernelField:
        return self.kernels[(family, n or self.n)]

    def simulate(self, scenario: Scenario, **changes):
        cfg = replace(self.cfg, scenario=scenario, **changes)
        bundle = KernelBundle(
            control=self.kernel(KernelFamily.CONTROL),
            observer=self.kernel(scenario.setup.family) if scenario.setup else None,
        )
        return run_scenario(cfg, bundle)


def check_diagonal_data(ctx: VerificationContext) -> List[CheckResult]:
    defect = max(diagonal_defect(ctx.kernel(family)) for family in KernelFamily)
    return [at_most("kernel_diagonal_data", defect, 1e-12)]


def check_successive_approximation(ctx: VerificationContext) -> List[CheckResult]:
    iterations, bound_ok = 0, True
    for pair in family_pairs(KernelFamily.CONTROL, ctx.cfg.lambda1, ctx.cfg.lambda2):
        problem = KernelProblem(pair.a, pair.b, pair.c_g, pair.c_h, pair.side, ctx.n, ctx.tol, ctx.max_iter)
        solution = solve_pair(problem)
        iterations = max(iterations, solution.iterations_used)
        bound_ok = bound_ok and increment_bound_holds(solution, problem)
    return [at_most("goursat_iterations", iterations, 60),
            at_least("goursat_increment_bound", float(bound_ok), 1.0, "factorial increment bound")]


def check_reciprocity(ctx: VerificationContext) -> List[CheckResult]:
    coarse, fine = (reciprocity_residual(ctx.kernel(KernelFamily.CONTROL, n),
                                         ctx.kernel(KernelFamily.INVERSE, n)) for n in ctx.resolutions)
    ratio = coarse / fine if fine > 0 else math.inf
    return [at_least("reciprocity_refinement", ratio, 3.5, f"residuals {coarse:.3e} -> {fine:.3e}"),
            at_most("reciprocity_residual", fine, 1e-3)]


def check_pde_residuals(ctx: VerificationContext) -> List[CheckResult]:
    results = []
    for family in KernelFamily:
        coarse, fine = (kernel_pde_residual(ctx.kernel(family, n)) for n in ctx.resolutions)
        if fine <= 1e-10:
            results.append(at_most(f"pde_residual_{family.value}", fine, 1e-10, "exact to round-off"))
        else:
            results.append(at_least(f"pde_residual_{family.value}", coarse / fine, 3.5,
                                    f"residuals {coarse:.3e} -> {fine:.3e}"))
    return results


def check_neumann_edge(ctx: VerificationContext) -> List[CheckResult]:
    coarse, fine = (neumann_edge_defect(ctx.kernel(KernelFamily.CONTROL, n)) for n in ctx.resolutions)
    if fine <= 1e-10:
        return [at_most("neumann_edge_control", fine, 1e-10, "exact to round-off")]
    return [at_least("neumann_edge_control", coarse / fine, 3.0, f"defects {coarse:.3e} -> {fine:.3e}")]


def check_smoothness(ctx: VerificationContext) -> List[CheckResult]:
    worst = 0.0
    for name in ("Kuu", "Kuv"):
        coarse, fine = (scaled_second_difference(getattr(ctx.kernel(KernelFamily.CONTROL, n), name))
                        for n in ctx.resolutions)
        if coarse > 1e-8:
            worst = max(worst, fine / coarse)
    return [at_most("kernel_smoothness", worst, 1.25, "growth of max |Δ²K|/h² under refinement")]


def check_heat_oracle(ctx: VerificationContext) -> List[CheckResult]:
    def error(nx, dt):
        cfg = SimConfig(0.0, 0.0, Scenario.OPEN_LOOP, nx=nx, dt=dt, t_final=0.5, record_every=int(round(0.5 / dt)),
                        ic=ICPreset("cos_half_pi", (1.0,)), ic_v=ICPreset("constant", (0.0,)), startup_steps=0)
        final = run_scenario(cfg, KernelBundle()).plant[-1]
        exact = FieldPair(np.exp(-SLOWEST_MODE * 0.5) * np.cos(0.5 * np.pi * final.grid), np.zeros(nx + 1))
        return l2_norm(final - exact) / l2_norm(exact)

    accuracy = error(200, 1e-4)
    coarse, fine = error(50, 2e-3), error(100, 1e-3)
    return [at_most("heat_oracle", accuracy, 1e-3),
            at_least("scheme_order", coarse / fine, 3.5, f"errors {coarse:.3e} -> {fine:.3e}")]


def _norms(states: Iterable[FieldPair]) -> np.ndarray:
    return np.array([l2_norm(s) for s in states])


def check_open_loop(ctx: VerificationContext) -> List[CheckResult]:
    oracle = modal_rate_oracle(ctx.cfg.lambda1, ctx.cfg.lambda2)
    every = max(1, int(round(0.02 / ctx.cfg.dt)))
    traj = ctx.simulate(Scenario.OPEN_LOOP, t_final=1.0, record_every=every)
    growth = -fit_decay(traj.times, _norms(traj.plant), window=(0.5, 1.0)).rate
    return [at_most("open_loop_growth", abs(growth - oracle) / abs(oracle), 0.03,
                    f"fitted {growth:.4f}, oracle {oracle:.4f}")]


def check_state_feedback(ctx: VerificationContext) -> List[CheckResult]:
    horizon = max(ctx.cfg.t_final, 2.0)
    every = max(1, int(round(0.02 / ctx.cfg.dt)))
    traj = ctx.simulate(Scenario.STATE_FEEDBACK, t_final=horizon, record_every=every)
    fit = fit_decay(traj.times, _norms(traj.plant), window=(1.0, 2.0))

    forward = VolterraOperator(ctx.kernel(KernelFamily.CONTROL), ctx.cfg.nx, TransformDirection.FORWARD)
    boundary = 0.0
    for state in traj.plant[1:]:
        gamma = forward.apply(state)
        boundary = max(boundary, math.hypot(gamma.u[-1], gamma.v[-1]) / max(l2_norm(gamma), 1e-300))

    W = feedback_weights(ctx.kernel(KernelFamily.CONTROL), ctx.cfg.nx)
    mismatch = max(float(np.max(np.abs(u - W @ s.stacked()))) for u, s in zip(traj.controls, traj.plant))
    k_inf, l_inf, overshoot = kernel_bounds(ctx.kernel(KernelFamily.CONTROL), ctx.kernel(KernelFamily.INVERSE))
    kappa = fit.kappa(l2_norm(traj.plant[0]))
    return [at_most("state_feedback_decay", abs(fit.rate - SLOWEST_MODE) / SLOWEST_MODE, 0.10,
                    f"fitted {fit.rate:.4f}"),
            at_most("state_feedback_target_boundary", boundary, 5e-3, "|γ(1,t)| / ‖γ‖"),
            at_most("state_feedback_control_consistency", mismatch, 1e-12),
            at_most("state_feedback_overshoot", kappa, overshoot, "fitted κ against (1+K∞)(1+L∞)"),
            reported("state_feedback_rate", fit.rate, "fitted ε of ‖w‖ ≤ κ‖w(0)‖e^{−εt}"),
            reported("control_kernel_sup_norm", k_inf, "K∞"),
            reported("inverse_kernel_sup_norm", l_inf, "L∞")]


def _observer_checks(ctx: VerificationContext, scenario: Scenario) -> List[CheckResult]:
    label = scenario.setup.value.replace("_", "")
    every = max(1, int(round(0.02 / ctx.cfg.dt)))
    traj = ctx.simulate(scenario, record_every=every)
    errors = _norms(traj.errors())
    t_end = float(traj.times[-1])
    fit = fit_decay(traj.times, errors, window=(0.5 * t_end, t_end))

    short = dict(t_final=0.1, record_every=max(1, int(round(0.01 / ctx.cfg.dt))))
    fed = ctx.simulate(scenario, plant_control="feedback", **short).errors()
    free = ctx.simulate(scenario, plant_control="zero", **short).errors()
    gap = max(float(np.max(np.abs(a.stacked() - b.stacked()))) for a, b in zip(fed, free))
    return [at_most(f"observer_decay_{label}", abs(fit.rate - SLOWEST_MODE) / SLOWEST_MODE, 0.10,
                    f"fitted {fit.rate:.4f}"),
            at_most(f"observer_error_autonomy_{label}", gap, 1e-10)]


def check_observers(ctx: VerificationContext) -> List[CheckResult]:
    return (_observer_checks(ctx, Scenario.OBSERVER_ONLY_ANTICOLLOCATED)
            + _observer_checks(ctx, Scenario.OBSERVER_ONLY_COLLOCATED))


def check_output_feedback(ctx: VerificationContext) -> List[CheckResult]:
    results = []
    target = math.exp(-0.5 * SLOWEST_MODE * ctx.cfg.t_final)
    for scenario in (Scenario.OUTPUT_FEEDBACK_ANTICOLLOCATED, Scenario.OUTPUT_FEEDBACK_COLLOCATED):
        traj = ctx.simulate(scenario)
        total = _norms(traj.plant) + _norms(traj.errors())
        results.append(at_most(f"output_feedback_{scenario.setup.value.replace('_', '')}",
                               total[-1] / total[0], target, "(‖w‖+‖w̃‖)(T) / initial"))

        if scenario is Scenario.OUTPUT_FEEDBACK_ANTICOLLOCATED:
            observer = ctx.kernel(KernelFamily.OBSERVER_ANTICOLLOCATED)
            report = lyapunov_monitor(traj, ctx.kernel(KernelFamily.CONTROL),
                                      extract_gains(observer, ObserverSetup.ANTI_COLLOCATED), observer)
            envelope = report.V[0] * np.exp(-report.times / 4.0)
            ratio = float(np.max(report.V / envelope)) if report.V[0] > 0 else 0.0
            results.append(at_most("lyapunov_certificate", ratio, 1.01, f"A={report.A:.4g}"))
    return results


CHECKS: Dict[str, Callable[[VerificationContext], List[CheckResult]]] = {
    "diagonal": check_diagonal_data,
    "goursat": check_successive_approximation,
    "reciprocity": check_reciprocity,
    "pde_residual": check_pde_residuals,
    "neumann_edge": check_neumann_edge,
    "smoothness": check_smoothness,
    "heat": check_heat_oracle,
    "open_loop": check_open_loop,
    "state_feedback": check_state_feedback,
    "observers": check_observers,
    "output_feedback": check_output_feedback,
}


def _guarded(name: str, check, ctx: VerificationContext) -> List[CheckResult]:
    try:
        results = check(ctx)
    except Exception as e:
        logger.exception(f"Check group {name} raised")
        return [CheckResult(name, math.nan, math.nan, False, "", f"error: {e}")]
    for result in results:
        level = logging.INFO if result.passed else logging.WARNING
        logger.log(level, f"{'PASS' if result.passed else 'FAIL'} {result.name}: "
                          f"{result.value:.6g} {result.comparison} {result.bound:.6g}")
    return results


async def run_checks(ctx: VerificationContext, groups: Optional[Iterable[str]] = None) -> List[CheckResult]:
    """Run check groups concurrently; results come back sorted by name."""
    selected = list(groups) if groups is not None else list(CHECKS)
    batches = await asyncio.gather(*[
        asyncio.to_thread(_guarded, name, CHECKS[name], ctx) for name in selected
    ])
    return sorted((r for batch in batches for r in batch), key=lambda r: r.name)


def write_report(out_dir, results: List[CheckResult]) -> Tuple[Path, Path]:
    """Plain-text and CSV report (name, value, bound, passed)."""
    out_dir = Path(out_dir)
    text_path = out_dir / "verification_report.txt"
    csv_path = out_dir / "verification_report.csv"

    passed = sum(r.passed for r in results)
    lines = [f"Verification: {passed}/{len(results)} checks passed", ""]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status}  {r.name:<44} {r.value:.6g} {r.comparison} {r.bound:.6g}"
                     + (f"  ({r.detail})" if r.detail else ""))
    text_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["name", "value", "bound", "passed"])
        for r in results:
            writer.writerow([r.name, f"{r.value:.17g}", f"{r.bound:.17g}", "pass" if r.passed else "fail"])
    return text_path, csv_path


class VerificationCommands:
    """`verify` command: run the acceptance suite and write the report."""

    def __init__(self, toolkit):
        self.toolkit = toolkit

    async def verify(self, args) -> int:
        from utils.config import load_run_config
        from utils.csv_io import RunManifest, write_manifest

        cfg, options = load_run_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest.start("verify", cfg, options)

        ctx = VerificationContext(cfg=cfg, n=options.n, tol=options.tol, max_iter=options.max_iter)
        requests = [(family, n) for family in KernelFamily for n in ctx.resolutions]
        solved = await asyncio.gather(*[
            self.toolkit.kernel(family, cfg.lambda1, cfg.lambda2, n, options.tol, options.max_iter)
            for family, n in requests
        ])
        ctx.kernels = dict(zip(requests, solved))
        for kf in solved:
            manifest.add_kernel(kf)

        results = await run_checks(ctx)
        for path in write_report(out, results):
            manifest.add_output(path)
        write_manifest(out, manifest)

        failed = [r.name for r in results if not r.passed]
        if failed:
            print(f"❌ {len(failed)} of {len(results)} checks failed: {', '.join(failed)}")
            return 1
        print(f"✅ All {len(results)} checks passed")
        return 0


async def setup(toolkit):
    """Register the verify command."""
    toolkit.add_command('verify', VerificationCommands(toolkit).verify,
                        "run the acceptance suite and write the verification report")
