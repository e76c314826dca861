"""The acceptance suite: nine executable criteria with frozen tolerances.

Each criterion function runs one falsifiable check of the library
against an analytic oracle or a structural property, and returns a
:class:`CriterionResult` carrying pass/fail, the measured quantities
and the runtime.  ``run_all`` executes the requested subset in order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field
from typing import List, Optional

import numpy as np

from .averaging import (
    average_invariance_residual,
    average_properties_check,
    corrector_solve,
    ergodic_average,
    gyro_average_closed_form,
    rotation_average_closed_form,
)
from .fields import gyrokinetic_field, rotation_field, rotation_weights
from .flow import FlowIntegratorConfig
from .lab import TimeSampledVectorField, convergence_study, two_scale_pairing
from .pde import Grid, GridFunction, gaussian_on_grid, pull_back, solve_filtered, solve_limit, solve_stiff
from .transport import (
    box_quadrature,
    constant_matrix_field,
    field_linear_combination,
    group_apply,
    identity_matrix_field,
    random_polynomial_field,
    weighted_l2_norm,
)

ANALYTIC = FlowIntegratorConfig(method="analytic")


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    runtime_s: float
    details: List[str] = dc_field(default_factory=list)
    failures: List[str] = dc_field(default_factory=list)

    def summary_line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = "" if self.passed else " | " + "; ".join(self.failures)
        return f"{tag}  criterion {self.number}: {self.name} ({self.runtime_s:.1f}s){extra}"


class _Check:
    def __init__(self, number, name):
        self.number = number
        self.name = name
        self.details: List[str] = []
        self.failures: List[str] = []
        self.t0 = time.time()

    def expect(self, ok: bool, label: str, value: float, bound: str):
        self.details.append(f"{label} = {value:.3e} ({bound})")
        if not ok:
            self.failures.append(f"{label} = {value:.3e} violates {bound}")

    def result(self) -> CriterionResult:
        return CriterionResult(self.number, self.name, not self.failures,
                               time.time() - self.t0, self.details, self.failures)


def criterion_1_rotation_average() -> CriterionResult:
    """Averaged identity tensor of the anisotropic rotation hits its closed form."""
    c = _Check(1, "rotation-average closed form")
    field = rotation_field(1.0, 4.0)
    avg = ergodic_average(identity_matrix_field(2), field, ANALYTIC, s_nodes=256)
    quad = box_quadrature(dim=2, n_per_axis=64)
    vals = avg.average.eval(quad.nodes)
    expected = rotation_average_closed_form(1.0, 4.0)
    err = float(np.max(np.abs(vals - expected)))
    c.expect(err <= 1e-8, "max node deviation from diag(2.5, 0.625)", err, "<= 1e-8")
    return c.result()


def criterion_2_gyro_average() -> CriterionResult:
    """Averaged velocity-identity tensor of the drift-kinetic flow, both frequencies."""
    c = _Check(2, "drift-kinetic average closed form")
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(20, 6))
    D = constant_matrix_field(np.diag([0.0, 0.0, 0.0, 1.0, 1.0, 1.0]))
    for wc in (1.0, 2.0):
        field = gyrokinetic_field(wc)
        avg = ergodic_average(D, field, ANALYTIC, s_nodes=256)
        err = float(np.max(np.abs(avg.average.eval(pts) - gyro_average_closed_form(wc))))
        c.expect(err <= 1e-7, f"max entry deviation (wc={wc:g})", err, "<= 1e-7")
    return c.result()


def _group_suite_field(seed=10):
    # positive polynomial bump plus half the invariant weight: coercive
    # with constant 0.5 in the weighted sense, decaying modulo the
    # invariant part.  The envelope is kept narrow so the bump's tail
    # paired against the non-decaying invariant part stays below the
    # unitarity tolerance on the default box.
    p, _ = rotation_weights(1.0, 1.0)
    bump = random_polynomial_field(dim=2, degree=2, seed=seed, psd=True,
                                   envelope_width=0.8)
    return field_linear_combination([bump, constant_matrix_field(p)], [1.0, 0.5],
                                    name="group_suite_field")


def criterion_3_group_properties() -> CriterionResult:
    """Unitarity, group law, symmetry, positivity, coercivity of the push-forward."""
    c = _Check(3, "push-forward group property suite")
    field = rotation_field(1.0, 1.0)
    quad = box_quadrature(dim=2, n_per_axis=64)
    A = _group_suite_field()
    base = weighted_l2_norm(A, quad)
    vals = A.eval(quad.nodes)
    alpha = float(np.min(np.linalg.eigvalsh(vals)))
    t_other = 0.7
    for s in (0.3, 1.0, 2.7):
        moved = group_apply(s, A, field, ANALYTIC)
        mvals = moved.eval(quad.nodes)
        rel = abs(weighted_l2_norm(moved, quad) - base) / base
        c.expect(rel <= 1e-6, f"unitarity relative defect (s={s})", rel, "<= 1e-6")
        once = group_apply(s + t_other, A, field, ANALYTIC).eval(quad.nodes)
        twice = group_apply(s, group_apply(t_other, A, field, ANALYTIC), field,
                            ANALYTIC).eval(quad.nodes)
        law = float(np.max(np.linalg.norm(twice - once, axis=(-2, -1))))
        c.expect(law <= 1e-6, f"group law residual (s={s})", law, "<= 1e-6")
        asym = float(np.max(np.abs(mvals - np.swapaxes(mvals, -1, -2))))
        c.expect(asym <= 1e-9, f"symmetry defect (s={s})", asym, "<= 1e-9")
        mineig = float(np.min(np.linalg.eigvalsh(mvals)))
        c.expect(mineig >= -1e-9, f"positivity floor (s={s})", mineig, ">= -1e-9")
        c.expect(mineig >= alpha - 1e-6, f"coercivity margin (s={s})", mineig - alpha,
                 ">= -1e-6")
    return c.result()


def criterion_4_average_properties() -> CriterionResult:
    """Structure preserved by averaging: symmetry, positivity, coercivity, norms."""
    c = _Check(4, "averaging property suite")
    field = rotation_field(1.0, 4.0)
    p, q = rotation_weights(1.0, 4.0)
    quad = box_quadrature(dim=2, n_per_axis=48,
                          p_field=constant_matrix_field(p),
                          q_field=constant_matrix_field(q))
    bump = random_polynomial_field(dim=2, degree=2, seed=11, psd=True)
    A = field_linear_combination([bump, constant_matrix_field(p)], [1.0, 0.5])
    avg = ergodic_average(A, field, ANALYTIC, s_nodes=256)
    qh = quad.q_sqrt_nodes
    weighted = np.einsum("nik,nkl,nlj->nij", qh, A.eval(quad.nodes), qh)
    alpha = float(np.min(np.linalg.eigvalsh(weighted)))
    report = average_properties_check(A, avg, quad, alpha=alpha)
    c.expect(report.symmetric_ok, "max asymmetry of average", report.max_asymmetry,
             "<= 1e-9")
    c.expect(report.positive_ok, "min eigenvalue of average", report.min_eig_average,
             ">= -1e-9")
    c.expect(report.coercive_ok, "coercivity margin", report.coercivity_margin,
             ">= -1e-6")
    c.expect(report.l2_contract_ok, "weighted L2 excess",
             report.l2_norm_average - report.l2_norm_input, "<= 1e-8")
    c.expect(report.sup_contract_ok, "weighted sup excess",
             report.sup_norm_average - report.sup_norm_input, "<= 1e-8")
    pts = np.random.default_rng(3).uniform(-2.5, 2.5, size=(40, 2))
    again = ergodic_average(avg.average, field, ANALYTIC, s_nodes=256)
    idem = float(np.max(np.abs(again.average.eval(pts) - avg.average.eval(pts))))
    c.expect(idem <= 1e-6, "idempotence defect", idem, "<= 1e-6")
    T = field.period
    base_vals = avg.average.eval(pts)
    for r in (0.37 * T, 0.81 * T):
        shifted = ergodic_average(A, field, ANALYTIC, s_nodes=256,
                                  base_point=r).average.eval(pts)
        dev = float(np.max(np.abs(shifted - base_vals)))
        c.expect(dev <= 1e-8, f"base-point dependence (r={r:.3f})", dev, "<= 1e-8")
    inv = average_invariance_residual(avg, [0.2, 0.9, 1.4, 2.2, 3.0], pts)
    c.expect(inv <= 1e-5, "push-forward invariance residual", inv, "<= 1e-5")
    return c.result()


def criterion_5_corrector_closure() -> CriterionResult:
    """The corrector closes the fluctuation: D = <D> + generator(C), <C> = 0."""
    c = _Check(5, "corrector closure")
    field = rotation_field(1.0, 1.0)
    D = constant_matrix_field(np.diag([2.0, 0.0]))
    avg = ergodic_average(D, field, ANALYTIC, s_nodes=256)
    quad = box_quadrature(dim=2, n_per_axis=32)
    res = corrector_solve(D, avg, field, ANALYTIC, quad=quad)
    c.expect(res.residual <= 1e-4, "node-wise closure residual", res.residual, "<= 1e-4")
    c.expect(res.mean_norm <= 1e-6, "re-averaged corrector norm", res.mean_norm,
             "<= 1e-6")
    hand = np.array([[0.0, -0.5], [-0.5, 0.0]])
    got = res.corrector.eval(np.array([[0.4, -0.9]]))[0]
    dev = float(np.max(np.abs(got - hand)))
    c.expect(dev <= 1e-8, "deviation from the hand-computed corrector", dev, "<= 1e-8")
    return c.result()


def criterion_6_solver_energy() -> CriterionResult:
    """Energy identities, mass conservation and the heat oracle for all solvers."""
    c = _Check(6, "solver energy identities")
    # stiff solve with transport and anisotropic tensor
    field = rotation_field(1.0, 1.0)
    D = constant_matrix_field(np.diag([2.5, 0.5]))
    grid = Grid(dim=2, half_width=np.pi, n=128)
    u0 = gaussian_on_grid(grid, sigma=0.5)
    stiff = solve_stiff(field, D, eps=0.05, u_in=u0, t_end=0.05, dt=1e-3,
                        output_times=[0.025, 0.05])
    c.expect(stiff.l2_monotonicity_violation() <= 1e-10, "stiff L2 monotonicity excess",
             stiff.l2_monotonicity_violation(), "<= 1e-10")
    c.expect(stiff.energy_balance_residual() <= 1e-8, "stiff energy balance residual",
             stiff.energy_balance_residual(), "<= 1e-8")
    masses = [s.mass() for s in [u0] + stiff.states]
    mass_dev = float(np.max(np.abs(np.diff(masses))))
    c.expect(mass_dev <= 1e-10, "stiff mass drift", mass_dev, "<= 1e-10")
    # filtered solve with the oscillating tensor
    filt = solve_filtered(field, D, eps=0.05, u_in=u0, t_end=0.05, dt=1e-3)
    c.expect(filt.l2_monotonicity_violation() <= 1e-10, "filtered L2 monotonicity excess",
             filt.l2_monotonicity_violation(), "<= 1e-10")
    c.expect(filt.energy_balance_residual() <= 1e-8, "filtered energy balance residual",
             filt.energy_balance_residual(), "<= 1e-8")
    mass_dev = abs(filt.states[-1].mass() - u0.mass())
    c.expect(mass_dev <= 1e-10, "filtered mass drift", mass_dev, "<= 1e-10")
    # limit solve monotone trace
    avg = ergodic_average(identity_matrix_field(2), rotation_field(1.0, 4.0),
                          ANALYTIC, s_nodes=64)
    lim = solve_limit(avg, u0, t_end=0.1, dt=1e-3)
    c.expect(lim.l2_monotonicity_violation() <= 1e-10, "limit L2 monotonicity excess",
             lim.l2_monotonicity_violation(), "<= 1e-10")
    c.expect(lim.energy_balance_residual() <= 1e-8, "limit energy balance residual",
             lim.energy_balance_residual(), "<= 1e-8")
    mass_dev = abs(lim.states[-1].mass() - u0.mass())
    c.expect(mass_dev <= 1e-10, "limit mass drift", mass_dev, "<= 1e-10")
    # heat-decay oracle, pure diffusion with the identity tensor (1-D)
    g1 = Grid(dim=1, half_width=np.pi, n=128)
    sine = GridFunction(g1, np.sin(g1.axis))
    heat = solve_stiff(None, identity_matrix_field(1), eps=1.0, u_in=sine,
                       t_end=1.0, dt=1e-3)
    expected = sine.l2_norm() * np.exp(-1.0)
    rel = abs(heat.states[-1].l2_norm() - expected) / expected
    c.expect(rel <= 0.01, "heat decay-rate relative error", rel, "<= 1e-2")
    # Fourier oracle for the averaged tensor: mode (1,0) decays at 2.5 (pi/L)^2
    g2 = Grid(dim=2, half_width=np.pi, n=64)
    xs = g2.cell_centers()[:, 0].reshape(g2.shape)
    mode = GridFunction(g2, np.sin(xs))
    lim2 = solve_limit(avg, mode, t_end=0.25, dt=5e-4)
    expected = mode.l2_norm() * np.exp(-2.5 * 0.25)
    rel = abs(lim2.states[-1].l2_norm() - expected) / expected
    c.expect(rel <= 0.01, "averaged-tensor decay-rate relative error", rel, "<= 1e-2")
    return c.result()


# frozen experiment design for the convergence criterion: containment
# L >= 8.5 sigma keeps the periodic wrap below 2e-5 of the peak, the
# diffusion number D*T/sigma^2 ~ 0.16 keeps the sup-in-time envelope
# flat, and 48 snapshots resolve the oscillation phase at eps = 0.025
CONVERGENCE_BOX = 17.0
CONVERGENCE_SIGMA = 2.0
CONVERGENCE_SNAPSHOTS = 48


def criterion_7_convergence(n: int = 128) -> CriterionResult:
    """First-order convergence of the stiff problem to the averaged model."""
    c = _Check(7, "stiff-to-averaged convergence rate")
    field = rotation_field(1.0, 1.0)
    D = constant_matrix_field(np.diag([2.0, 0.0]) + 0.5 * np.eye(2))
    grid = Grid(dim=2, half_width=CONVERGENCE_BOX, n=n)
    u0 = gaussian_on_grid(grid, sigma=CONVERGENCE_SIGMA)
    rep = convergence_study(field, D, u0, T=0.5, eps_ladder=[0.2, 0.1, 0.05, 0.025],
                            use_corrector=True, n_snapshots=CONVERGENCE_SNAPSHOTS)
    decreasing = all(b < a for a, b in zip(rep.errors_linf_l2, rep.errors_linf_l2[1:]))
    c.expect(decreasing, "state errors strictly decreasing (1 = yes)",
             float(decreasing), "== 1")
    c.expect(rep.fitted_rate >= 0.9, "fitted state rate", rep.fitted_rate, ">= 0.9")
    c.expect(rep.fitted_rate_grad >= 0.9, "fitted gradient rate", rep.fitted_rate_grad,
             ">= 0.9")
    gain = rep.errors_linf_l2[-1] - rep.corrected_errors[-1]
    c.expect(gain >= 0.0, "corrector gain at smallest eps", gain, ">= 0")
    c.details.append("state errors: " + ", ".join(f"{e:.3e}" for e in rep.errors_linf_l2))
    c.details.append("gradient errors: " + ", ".join(f"{e:.3e}" for e in rep.errors_grad_xp))
    c.details.append("corrected errors: " + ", ".join(f"{e:.3e}" for e in rep.corrected_errors))
    return c.result()


def pairing_experiment(eps_ladder=(0.2, 0.1, 0.05), T: float = 1.0, quad_n: int = 48):
    """The builtin slow-fast pairing configuration (also used by the CLI)."""
    field = rotation_field(1.0, 1.0)
    D = constant_matrix_field(np.diag([2.0, 0.0]))
    quad = box_quadrature(dim=2, lo=-5.0, hi=5.0, n_per_axis=quad_n)
    y = quad.nodes
    a, b = 0.7, 1.2
    g = np.exp(-(y[:, 0] ** 2 / (2 * a * a) + y[:, 1] ** 2 / (2 * b * b)))
    grad = np.stack([-y[:, 0] / (a * a) * g, -y[:, 1] / (b * b) * g], axis=-1)
    theta = TimeSampledVectorField(np.array([0.0]), grad[None])
    rep = two_scale_pairing(theta, theta, D, field, ANALYTIC, T=T,
                            eps_ladder=list(eps_ladder), quad=quad)
    return rep, quad, grad


def criterion_8_two_scale_pairing() -> CriterionResult:
    """Slow-fast pairing converges to the averaged pairing at the expected rate."""
    c = _Check(8, "two-scale pairing limit")
    rep, quad, grad = pairing_experiment()
    ratio = rep.deviations[-1] / rep.deviations[0]
    c.expect(ratio <= 0.5, "deviation ratio eps=0.05 vs eps=0.2", ratio, "<= 0.5")
    # dense-quadrature oracle of the limit pairing (8192-node one-period rule)
    N = 8192
    acc = np.zeros((2, 2))
    for k in range(N):
        s = 2.0 * np.pi * k / N
        R = np.array([[np.cos(s), -np.sin(s)], [np.sin(s), np.cos(s)]])
        acc += R @ np.diag([2.0, 0.0]) @ R.T
    acc /= N
    dense = float(np.sum(quad.weights * np.einsum("ni,ij,nj->n", grad, acc, grad)))
    c.expect(abs(dense - rep.limit_value) <= 1e-3, "dense oracle vs limit pairing",
             abs(dense - rep.limit_value), "<= 1e-3")
    # closed-form oracle of each deviation (partial-period primitive)
    M1 = float(np.sum(quad.weights * (grad[:, 0] ** 2 - grad[:, 1] ** 2)))
    for eps, dev in zip(rep.eps_ladder, rep.deviations):
        S = 1.0 / eps
        sig = S - np.pi * np.floor(S / np.pi)
        oracle = eps * abs(0.5 * np.sin(2.0 * sig) * M1)
        rel = abs(dev - oracle) / abs(oracle)
        c.expect(rel <= 1e-3, f"deviation vs closed-form oracle (eps={eps})", rel,
                 "<= 1e-3")
    return c.result()


def criterion_9_filtered_stiff(n: int = 128) -> CriterionResult:
    """Filtered and stiff solves agree after composing with the flow."""
    c = _Check(9, "filtered-stiff coordinate equivalence")
    field = rotation_field(1.0, 1.0)
    D = constant_matrix_field(np.diag([2.5, 0.5]))
    grid = Grid(dim=2, half_width=8.5, n=n)
    u0 = gaussian_on_grid(grid, sigma=1.2)
    eps = 0.1
    times = [0.05, 0.1]
    stiff = solve_stiff(field, D, eps, u0, 0.1, 1e-3, output_times=times)
    filt = solve_filtered(field, D, eps, u0, 0.1, 1e-3, output_times=times)
    for t, us, fs in zip(times, stiff.states, filt.states):
        ve = pull_back(us, field, ANALYTIC, t / eps, order=3)
        err = float(np.sqrt(grid.cell_volume * np.sum((ve.values - fs.values) ** 2)))
        c.expect(err <= 1e-2, f"coordinate mismatch at t={t}", err, "<= 1e-2")
    return c.result()


CRITERIA = {
    1: criterion_1_rotation_average,
    2: criterion_2_gyro_average,
    3: criterion_3_group_properties,
    4: criterion_4_average_properties,
    5: criterion_5_corrector_closure,
    6: criterion_6_solver_energy,
    7: criterion_7_convergence,
    8: criterion_8_two_scale_pairing,
    9: criterion_9_filtered_stiff,
}


def run_all(numbers: Optional[List[int]] = None, report=None) -> List[CriterionResult]:
    """Run the requested criteria (all by default), reporting each line as it lands."""
    numbers = sorted(CRITERIA) if numbers is None else list(numbers)
    results = []
    for k in numbers:
        if k not in CRITERIA:
            raise KeyError(f"unknown criterion {k}")
        res = CRITERIA[k]()
        results.append(res)
        if report is not None:
            report(res.summary_line())
    return results
