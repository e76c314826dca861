"""Convergence and two-scale pairing experiments.

The central experiment compares, along a ladder of stiffness parameters
eps, the stiff solve against the averaged limit solve composed with the
fast flow, measuring the sup-in-time L2 state error and the P-weighted
time-L2 gradient error, and fits the observed order in eps.  With the
corrector enabled it also subtracts the first-order oscillation
reconstructed from the corrector field and reports the corrected error.

Errors are measured in the filtered frame (the stiff state composed
with the forward flow against the limit profile); the lab-frame
comparison (limit profile composed with the backward flow) is reported
alongside.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from .averaging import AverageResult, bilinear_matrix_interpolant, ergodic_average
from .errors import (
    ConfigurationError,
    DegenerateFitError,
    DimensionMismatchError,
    InvalidParameterError,
)
from .fields import FrameSpec, VectorFieldSpec
from .flow import FlowIntegratorConfig, default_integrator
from .pde import Grid, GridFunction, SolveResult, SpatialOperators, pull_back, solve_limit, solve_stiff
from .transport import MatrixFieldFn, WeightedQuadrature, pushforward_states


@dataclass
class ConvergenceReport:
    """Per-eps error norms and the fitted convergence order."""

    eps_ladder: List[float]
    errors_linf_l2: List[float]
    errors_grad_xp: List[float]
    errors_lab_frame: List[float]
    corrected_errors: Optional[List[float]]
    fitted_rate: float
    fitted_rate_grad: float
    with_corrector: bool
    rate_threshold: float
    passed: bool


@dataclass
class PairingReport:
    """Slow-fast pairing values along the eps ladder against the averaged limit."""

    eps_ladder: List[float]
    pairing_values: List[float]
    limit_value: float
    deviations: List[float]
    passed: bool


@dataclass
class TimeSampledVectorField:
    """Vector-field samples w(t_k, node) on a fixed time lattice.

    ``values`` has shape (n_times, n_nodes, dim); a single time row is
    treated as constant in time.  Linear interpolation in t is used when
    the pairing quadrature refines the lattice.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[0] != self.times.size:
            raise DimensionMismatchError("values must have shape (n_times, n_nodes, dim)")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0.0):
            raise InvalidParameterError("time lattice must be strictly increasing")

    def at(self, t: float) -> np.ndarray:
        if self.times.size == 1:
            return self.values[0]
        t = float(np.clip(t, self.times[0], self.times[-1]))
        k = int(np.clip(np.searchsorted(self.times, t) - 1, 0, self.times.size - 2))
        lam = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return (1.0 - lam) * self.values[k] + lam * self.values[k + 1]


def rate_fit(eps_ladder: Sequence[float], errors: Sequence[float]):
    """Least-squares slope and intercept of log error against log eps."""
    eps = np.asarray(list(eps_ladder), dtype=float)
    err = np.asarray(list(errors), dtype=float)
    if eps.size < 3:
        raise InvalidParameterError("rate fitting needs at least three ladder points")
    if np.any(err <= 0.0) or np.any(eps <= 0.0):
        raise DegenerateFitError("rate fitting requires strictly positive errors and eps")
    x = np.log(eps)
    y = np.log(err)
    xm, ym = x.mean(), y.mean()
    slope = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    intercept = float(ym - slope * xm)
    return slope, intercept


def _materialize_corrector(C: MatrixFieldFn, grid: Grid, reach: float) -> MatrixFieldFn:
    """Sample the corrector on a lattice covering the flowed corner points."""
    lim = reach * grid.half_width * np.sqrt(2.0) + 2.0 * grid.spacing
    axes = np.linspace(-lim, lim, 2 * grid.n + 1)
    xg, yg = np.meshgrid(axes, axes, indexing="ij")
    vals = C.eval(np.stack([xg, yg], axis=-1))
    return bilinear_matrix_interpolant(axes, vals, symmetric=C.symmetric)


def _flow_reach(field: VectorFieldSpec) -> float:
    # worst-case stretch of the builtin linear flows over one period
    if field.name == "rotation":
        beta = field.params["beta"]
        gamma = field.params["gamma"]
        r = np.sqrt(max(beta, gamma) / min(beta, gamma))
        return float(r)
    return 1.5


def corrector_filtered_increment(C_corner_at, v_state: GridFunction, ops: SpatialOperators,
                                 base_corners: np.ndarray, s: float) -> np.ndarray:
    """Filtered-frame first-order oscillation div((G(s)C - C) grad v) on the grid."""
    delta = C_corner_at(s) - base_corners
    return ops.diffusion_matrix(delta) @ v_state.values.ravel()


def corrector_evaluate(C: MatrixFieldFn, v_states: SolveResult, field: VectorFieldSpec,
                       cfg: FlowIntegratorConfig, t: float, s: float,
                       order: int = 1) -> GridFunction:
    """First-order oscillation profile at slow time t and fast time s, lab frame.

    Reconstructs div((G(s)C) grad v(t)) - div(C grad v(t)) with the
    solver's discrete divergence and composes it with the backward flow.
    The profile vanishes identically at s = 0.  The slow time t is
    interpolated linearly between the stored limit states.
    """
    grid = v_states.states[0].grid
    times = np.asarray(v_states.times, dtype=float)
    if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
        raise ConfigurationError(f"time {t} outside the stored solution range")
    k = int(np.clip(np.searchsorted(times, t) - 1, 0, times.size - 2)) if times.size > 1 else 0
    if times.size == 1:
        v_vals = v_states.states[0].values
    else:
        lam = np.clip((t - times[k]) / (times[k + 1] - times[k]), 0.0, 1.0)
        v_vals = (1.0 - lam) * v_states.states[k].values + lam * v_states.states[k + 1].values
    v_state = GridFunction(grid, v_vals)
    ops = SpatialOperators(grid)
    corners = grid.corner_points()
    base = np.asarray(C.eval(corners), dtype=float)

    def corner_at(sv):
        if sv == 0.0:
            return base
        pos, jinv = pushforward_states(field, cfg, sv, corners)
        vals = np.asarray(C.eval(pos), dtype=float)
        return np.einsum("nik,nkl,njl->nij", jinv, vals, jinv)

    w1 = corrector_filtered_increment(corner_at, v_state, ops, base, float(s))
    w1_state = GridFunction(grid, w1.reshape(grid.shape))
    if s == 0.0:
        return w1_state
    return pull_back(w1_state, field, cfg, -float(s), order=order)


def _grad_p_norm_sq(ops: SpatialOperators, diff_vals: np.ndarray,
                    p_corner: Optional[np.ndarray], vol: float) -> float:
    g = np.stack([gm @ diff_vals.ravel() for gm in ops.grad], axis=-1)
    if p_corner is None:
        return float(np.sum(g * g)) * vol
    return float(np.einsum("nij,ni,nj->", p_corner, g, g)) * vol


def convergence_study(field: VectorFieldSpec, D: MatrixFieldFn, u_in: GridFunction,
                      T: float, eps_ladder: Sequence[float], use_corrector: bool = False,
                      cfg: Optional[FlowIntegratorConfig] = None,
                      avg: Optional[AverageResult] = None,
                      corrector: Optional[MatrixFieldFn] = None,
                      n_snapshots: int = 16, s_nodes: int = 256,
                      dt_limit: float = 1e-3,
                      dt_stiff: Optional[Callable[[float], float]] = None,
                      p_field: Optional[MatrixFieldFn] = None,
                      rate_threshold: float = 0.9,
                      interp_order: int = 3) -> ConvergenceReport:
    """Run the eps-ladder comparison of the stiff solve against the limit solve.

    For each eps the stiff problem is solved and composed with the
    forward flow at every snapshot; the limit problem is solved once.
    The report carries the sup-in-time L2 state errors, the P-weighted
    gradient errors integrated over [0, T], the lab-frame comparison,
    optionally the corrector-corrected errors, and rates fitted on the
    last three ladder points.
    """
    eps_ladder = [float(e) for e in eps_ladder]
    if any(b >= a for a, b in zip(eps_ladder, eps_ladder[1:])):
        raise InvalidParameterError("eps ladder must be strictly decreasing")
    cfg = cfg or default_integrator(field)
    grid = u_in.grid
    ops = SpatialOperators(grid)
    vol = grid.cell_volume
    if avg is None:
        avg = ergodic_average(D, field, cfg, s_nodes=s_nodes)
    snap_times = [T * (k + 1) / n_snapshots for k in range(n_snapshots)]
    dt_snap = T / n_snapshots
    v_result = solve_limit(avg, u_in, T, dt_limit, output_times=snap_times, p_field=p_field)
    p_corner = None
    if p_field is not None:
        p_corner = np.asarray(p_field.eval(grid.corner_points()), dtype=float)

    corner_pts = grid.corner_points()
    corrector_interp = None
    base_corners = None
    if use_corrector:
        if corrector is None:
            from .averaging import corrector_solve
            from .transport import box_quadrature
            quad = box_quadrature(dim=2, lo=-grid.half_width, hi=grid.half_width, n_per_axis=32)
            corrector = corrector_solve(D, avg, field, cfg, s_nodes=s_nodes, quad=quad).corrector
        corrector_interp = _materialize_corrector(corrector, grid, _flow_reach(field))
        base_corners = np.asarray(corrector_interp.eval(corner_pts), dtype=float)

    def pushed_corrector_corners(s):
        pos, jinv = pushforward_states(field, cfg, s, corner_pts)
        vals = np.asarray(corrector_interp.eval(pos), dtype=float)
        return np.einsum("nik,nkl,njl->nij", jinv, vals, jinv)

    errors_state, errors_grad, errors_lab, errors_corr = [], [], [], []
    dt_rule = dt_stiff or (lambda e: min(1e-3, e / 20.0))
    for eps in eps_ladder:
        u_result = solve_stiff(field, D, eps, u_in, T, dt_rule(eps),
                               output_times=snap_times, p_field=p_field)
        sup_state = 0.0
        sup_lab = 0.0
        sup_corr = 0.0
        grad_acc = 0.0
        for t, u_state, v_state in zip(u_result.times, u_result.states, v_result.states):
            s_fast = t / eps
            v_eps = pull_back(u_state, field, cfg, s_fast, order=interp_order)
            diff = v_eps.values - v_state.values
            sup_state = max(sup_state, float(np.sqrt(vol * np.sum(diff ** 2))))
            grad_acc += dt_snap * _grad_p_norm_sq(ops, diff, p_corner, vol)
            v_lab = pull_back(v_state, field, cfg, -s_fast, order=interp_order)
            lab_diff = u_state.values - v_lab.values
            sup_lab = max(sup_lab, float(np.sqrt(vol * np.sum(lab_diff ** 2))))
            if use_corrector:
                w1 = corrector_filtered_increment(pushed_corrector_corners, v_state, ops,
                                                  base_corners, s_fast)
                cdiff = diff - eps * w1.reshape(grid.shape)
                sup_corr = max(sup_corr, float(np.sqrt(vol * np.sum(cdiff ** 2))))
        errors_state.append(sup_state)
        errors_grad.append(np.sqrt(grad_acc))
        errors_lab.append(sup_lab)
        if use_corrector:
            errors_corr.append(sup_corr)

    tail = min(3, len(eps_ladder))
    rate_state, _ = rate_fit(eps_ladder[-tail:], errors_state[-tail:]) if tail >= 3 else (np.nan, 0.0)
    rate_grad, _ = rate_fit(eps_ladder[-tail:], errors_grad[-tail:]) if tail >= 3 else (np.nan, 0.0)
    decreasing = all(b < a for a, b in zip(errors_state, errors_state[1:]))
    passed = bool(decreasing and rate_state >= rate_threshold and rate_grad >= rate_threshold)
    if use_corrector and errors_corr:
        passed = passed and errors_corr[-1] <= errors_state[-1]
    return ConvergenceReport(
        eps_ladder=eps_ladder,
        errors_linf_l2=errors_state,
        errors_grad_xp=errors_grad,
        errors_lab_frame=errors_lab,
        corrected_errors=errors_corr if use_corrector else None,
        fitted_rate=float(rate_state),
        fitted_rate_grad=float(rate_grad),
        with_corrector=use_corrector,
        rate_threshold=rate_threshold,
        passed=passed,
    )


def two_scale_pairing(theta: TimeSampledVectorField, w: TimeSampledVectorField,
                      D: MatrixFieldFn, field: VectorFieldSpec, cfg: FlowIntegratorConfig,
                      T: float, eps_ladder: Sequence[float], quad: WeightedQuadrature,
                      avg: Optional[AverageResult] = None, s_nodes: int = 256,
                      points_per_oscillation: int = 128,
                      min_time_nodes: int = 129) -> PairingReport:
    """Pairing of slow test fields against the fast-oscillating tensor.

    Evaluates int_0^T sum_nodes w_q theta . (pushforward(D)(t/eps)) w dt
    by a time trapezoid refined to resolve the fast oscillation, and the
    limit pairing with the averaged tensor.  The deviation per eps is
    their absolute difference.
    """
    nodes = quad.nodes
    for f in (theta, w):
        if f.values.shape[1] != nodes.shape[0] or f.values.shape[2] != quad.dim:
            raise DimensionMismatchError("sampled fields do not match the quadrature lattice")
    if theta.values.shape[1:] != w.values.shape[1:]:
        raise DimensionMismatchError("theta and w live on different lattices")
    eps_ladder = [float(e) for e in eps_ladder]
    if avg is None:
        avg = ergodic_average(D, field, cfg, s_nodes=s_nodes)
    avg_nodes = np.asarray(avg.average.eval(nodes), dtype=float)

    def pair_with(tensor_nodes, th_vals, w_vals):
        return float(np.sum(quad.weights * np.einsum("ni,nij,nj->n", th_vals, tensor_nodes, w_vals)))

    # limit pairing: time trapezoid on the coarse lattice is enough (slow fields)
    coarse_t = np.linspace(0.0, T, max(theta.times.size, w.times.size, 33))
    limit_vals = [pair_with(avg_nodes, theta.at(t), w.at(t)) for t in coarse_t]
    limit_value = float(np.trapezoid(limit_vals, coarse_t))

    period = field.period if field.period is not None else 1.0
    pairing_values = []
    for eps in eps_ladder:
        n_cycles = T / (eps * period)
        n_t = max(min_time_nodes, int(np.ceil(n_cycles * points_per_oscillation)) + 1)
        t_lattice = np.linspace(0.0, T, n_t)
        vals = np.empty(n_t)
        for i, t in enumerate(t_lattice):
            pos, jinv = pushforward_states(field, cfg, t / eps, nodes)
            tensor = np.einsum("nik,nkl,njl->nij", jinv, np.asarray(D.eval(pos), float), jinv)
            vals[i] = pair_with(tensor, theta.at(t), w.at(t))
        pairing_values.append(float(np.trapezoid(vals, t_lattice)))
    deviations = [abs(p - limit_value) for p in pairing_values]
    passed = bool(deviations[-1] <= 0.5 * deviations[0]) if len(deviations) >= 2 else True
    return PairingReport(eps_ladder=eps_ladder, pairing_values=pairing_values,
                         limit_value=limit_value, deviations=deviations, passed=passed)


def frame_gradient(state: GridFunction, frame: FrameSpec) -> np.ndarray:
    """Directional derivatives of a grid function along the frame fields.

    Returns an array of shape (m,) + grid.shape whose i-th slice is
    b_i . grad(u) computed with centered differences, the discrete
    version of the frame gradient diagnostic.
    """
    grid = state.grid
    ops = SpatialOperators(grid)
    flat = state.values.ravel()
    grad_cells = np.stack([c @ flat for c in ops.cent], axis=-1)
    centers = grid.cell_centers()
    out = []
    for bi in frame.fields:
        vals = np.asarray(bi.eval(centers), dtype=float)
        out.append(np.sum(vals * grad_cells, axis=-1).reshape(grid.shape))
    return np.stack(out, axis=0)
