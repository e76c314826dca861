"""Long-time averages of matrix fields along a flow, and correctors.

For a periodic flow the average of a matrix field over one period equals
its projection onto the fields invariant under the push-forward group;
for general flows a Cesaro mean over a finite horizon approximates the
same projection.  The zero-mean corrector C solves "generator of the
group applied to C equals D minus its average", which is what upgrades
plain convergence of the stiff problem to a first-order rate.

Both of the closed-form averages that are known analytically (the planar
rotation field with a flow-constant diagonal tensor, and the
drift-kinetic field with a velocity-space identity tensor) are provided
as oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, InvalidParameterError, UnsupportedModeError
from .fields import VectorFieldSpec
from .flow import FlowIntegratorConfig, flow_sweep
from .transport import (
    MatrixFieldFn,
    WeightedQuadrature,
    box_quadrature,
    field_linear_combination,
    generator_residual,
    group_apply,
    weighted_l2_norm,
    weighted_sup_norm,
)

_MIN_S_NODES = 16


@dataclass(frozen=True)
class AverageResult:
    """An averaged matrix field and the quadrature that produced it."""

    average: MatrixFieldFn
    quadrature_nodes_in_s: int
    mode: str
    cesaro_horizon: Optional[float] = None
    base_point: float = 0.0
    field: Optional[VectorFieldSpec] = None
    integrator: Optional[FlowIntegratorConfig] = None

    def materialize(self, axes: np.ndarray) -> MatrixFieldFn:
        """Sample the average on a 2-D tensor lattice and return a bilinear interpolant."""
        if self.average.dim != 2:
            raise UnsupportedModeError("lattice materialization is implemented for 2-D fields")
        axes = np.asarray(axes, dtype=float)
        xg, yg = np.meshgrid(axes, axes, indexing="ij")
        pts = np.stack([xg, yg], axis=-1)
        vals = self.average.eval(pts)
        return bilinear_matrix_interpolant(axes, vals, symmetric=self.average.symmetric)


def bilinear_matrix_interpolant(axes: np.ndarray, values: np.ndarray,
                                symmetric: bool = True) -> MatrixFieldFn:
    """Bilinear interpolation of matrix samples on a square tensor lattice.

    Off-lattice queries clamp to the lattice hull; the interpolant is
    meant for evaluation inside the sampled box.
    """
    axes = np.asarray(axes, dtype=float)
    values = np.asarray(values, dtype=float)
    n = axes.size
    m = values.shape[-1]

    def _eval(y):
        y = np.asarray(y, dtype=float)
        out_shape = y.shape[:-1] + (m, m)
        pts = y.reshape(-1, 2)
        idx = np.clip(np.searchsorted(axes, pts, side="right") - 1, 0, n - 2)
        i0, j0 = idx[:, 0], idx[:, 1]
        hx = axes[i0 + 1] - axes[i0]
        hy = axes[j0 + 1] - axes[j0]
        tx = np.clip((pts[:, 0] - axes[i0]) / hx, 0.0, 1.0)
        ty = np.clip((pts[:, 1] - axes[j0]) / hy, 0.0, 1.0)
        tx = tx[:, None, None]
        ty = ty[:, None, None]
        v00 = values[i0, j0]
        v10 = values[i0 + 1, j0]
        v01 = values[i0, j0 + 1]
        v11 = values[i0 + 1, j0 + 1]
        out = ((1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10
               + (1 - tx) * ty * v01 + tx * ty * v11)
        return out.reshape(out_shape)

    return MatrixFieldFn(dim=2, eval=_eval, symmetric=symmetric, name="lattice_interpolant")


def _average_quadrature(mode: str, field: VectorFieldSpec, s_nodes: int,
                        cesaro_horizon: Optional[float], base_point: float):
    if mode == "one_period":
        if field.period is None:
            raise ConfigurationError("one_period averaging requires a field with a declared period")
        T = field.period
        s_vals = base_point + np.arange(s_nodes) * (T / s_nodes)
        weights = np.full(s_nodes, 1.0 / s_nodes)
        return s_vals, weights
    if mode == "cesaro":
        if cesaro_horizon is None or cesaro_horizon <= 0.0:
            raise ConfigurationError("cesaro averaging requires a positive horizon")
        S = float(cesaro_horizon)
        s_vals = base_point + np.linspace(0.0, S, s_nodes)
        h = S / (s_nodes - 1)
        weights = np.full(s_nodes, h / S)
        weights[0] *= 0.5
        weights[-1] *= 0.5
        return s_vals, weights
    raise ConfigurationError(f"unknown averaging mode '{mode}'")


def ergodic_average(A: MatrixFieldFn, field: VectorFieldSpec, cfg: FlowIntegratorConfig,
                    s_nodes: int = 256, mode: str = "one_period",
                    cesaro_horizon: Optional[float] = None,
                    base_point: float = 0.0) -> AverageResult:
    """Average the push-forward of A over flow time.

    ``one_period`` integrates (1/T) int_0^T over one flow period with the
    uniform (periodic trapezoid) rule, which is spectrally accurate for
    smooth integrands; ``cesaro`` integrates (1/S) int_0^S over the given
    horizon with the trapezoid rule.  The result evaluates lazily: each
    query point runs the s-quadrature on demand.
    """
    if A.dim != field.dim:
        raise InvalidParameterError("matrix field and flow field dimensions differ")
    if s_nodes < _MIN_S_NODES:
        raise InvalidParameterError(f"s_nodes must be at least {_MIN_S_NODES}")
    s_vals, s_weights = _average_quadrature(mode, field, s_nodes, cesaro_horizon, base_point)

    def _eval(z):
        z = np.asarray(z, dtype=float)
        acc = np.zeros(z.shape[:-1] + (field.dim, field.dim))
        for w, (pos, jinv) in zip(s_weights, flow_sweep(field, cfg, s_vals, z)):
            vals = A.eval(pos)
            acc += w * np.einsum("...ik,...kl,...jl->...ij", jinv, vals, jinv)
        return acc

    avg_field = MatrixFieldFn(dim=field.dim, eval=_eval, symmetric=A.symmetric,
                              name=f"average({A.name})")
    return AverageResult(average=avg_field, quadrature_nodes_in_s=s_nodes, mode=mode,
                         cesaro_horizon=cesaro_horizon, base_point=base_point,
                         field=field, integrator=cfg)


def average_invariance_residual(avg: AverageResult, s_values, points: np.ndarray) -> float:
    """Max Frobenius residual of push-forward invariance of the average."""
    field, cfg = avg.field, avg.integrator
    base = avg.average.eval(points)
    worst = 0.0
    for s in s_values:
        moved = group_apply(float(s), avg.average, field, cfg).eval(points)
        worst = max(worst, float(np.max(np.linalg.norm(moved - base, axis=(-2, -1)))))
    return worst


@dataclass(frozen=True)
class AveragePropertyReport:
    """Structural checks of an averaged field against its input."""

    max_asymmetry: float
    symmetric_ok: bool
    min_eig_input: float
    min_eig_average: float
    positive_ok: bool
    coercivity_alpha: float
    coercivity_margin: float
    coercive_ok: bool
    l2_norm_input: float
    l2_norm_average: float
    l2_contract_ok: bool
    sup_norm_input: float
    sup_norm_average: float
    sup_contract_ok: bool

    @property
    def all_ok(self) -> bool:
        return (self.symmetric_ok and self.positive_ok and self.coercive_ok
                and self.l2_contract_ok and self.sup_contract_ok)


def average_properties_check(A: MatrixFieldFn, avg: AverageResult, quad: WeightedQuadrature,
                             alpha: float) -> AveragePropertyReport:
    """Check symmetry, positivity, coercivity and norm contraction of the average.

    Failures are reported in the returned record, never raised; the
    caller decides which checks are meaningful for its input (the
    positivity check, for instance, only expresses a theorem when the
    input field is positive semidefinite).
    """
    nodes = quad.nodes
    avg_vals = avg.average.eval(nodes)
    in_vals = A.eval(nodes)
    asym = float(np.max(np.abs(avg_vals - np.swapaxes(avg_vals, -1, -2))))
    sym_avg = 0.5 * (avg_vals + np.swapaxes(avg_vals, -1, -2))
    sym_in = 0.5 * (in_vals + np.swapaxes(in_vals, -1, -2))
    min_eig_avg = float(np.min(np.linalg.eigvalsh(sym_avg)))
    min_eig_in = float(np.min(np.linalg.eigvalsh(sym_in)))
    if quad.q_sqrt_nodes is None:
        weighted_avg = sym_avg
    else:
        qh = quad.q_sqrt_nodes
        weighted_avg = np.einsum("nik,nkl,nlj->nij", qh, sym_avg, qh)
    coercivity_floor = float(np.min(np.linalg.eigvalsh(weighted_avg)))
    l2_in = weighted_l2_norm(A, quad)
    l2_avg = weighted_l2_norm(avg.average, quad)
    sup_in = weighted_sup_norm(A, quad)
    sup_avg = weighted_sup_norm(avg.average, quad)
    return AveragePropertyReport(
        max_asymmetry=asym,
        symmetric_ok=asym <= 1e-9,
        min_eig_input=min_eig_in,
        min_eig_average=min_eig_avg,
        positive_ok=min_eig_avg >= -1e-9,
        coercivity_alpha=float(alpha),
        coercivity_margin=coercivity_floor - float(alpha),
        coercive_ok=coercivity_floor >= float(alpha) - 1e-6,
        l2_norm_input=l2_in,
        l2_norm_average=l2_avg,
        l2_contract_ok=l2_avg <= l2_in + 1e-8,
        sup_norm_input=sup_in,
        sup_norm_average=sup_avg,
        sup_contract_ok=sup_avg <= sup_in + 1e-8,
    )


@dataclass(frozen=True)
class CorrectorResult:
    """Zero-mean corrector with its certification residuals."""

    corrector: MatrixFieldFn
    residual: float
    mean_norm: float


def corrector_solve(D: MatrixFieldFn, avg: AverageResult, field: VectorFieldSpec,
                    cfg: FlowIntegratorConfig, s_nodes: Optional[int] = None,
                    quad: Optional[WeightedQuadrature] = None,
                    fd_step: float = 1e-3, mean_sample: int = 49) -> CorrectorResult:
    """Solve for the zero-mean corrector C of the fluctuation D minus its average.

    The construction integrates the double s-quadrature
    -(1/T) int_0^T int_0^s (pushforward of the fluctuation) over one flow
    period.  On the uniform s-lattice this double integral is evaluated
    exactly on the trigonometric interpolant of the samples: with
    fluctuation samples g_j and discrete Fourier coefficients g_hat_k,
    the corrector is sum_{k != 0} g_hat_k / (i w_k).  The fluctuation has
    exact zero discrete mean by construction, the average being computed
    on the same lattice.

    Certification is independent of the construction: ``residual`` is
    the node-wise central-difference generator residual against the
    fluctuation over the whole quadrature lattice, and ``mean_norm`` the
    norm of the re-averaged corrector.  Re-averaging the corrector costs
    a full s-sweep per query point, so the mean is certified on a
    deterministic subsample of the lattice (at most ``mean_sample``
    points).
    """
    if field.period is None:
        raise UnsupportedModeError("corrector construction requires a periodic flow")
    if D.dim != field.dim:
        raise InvalidParameterError("tensor and flow dimensions differ")
    N = int(s_nodes) if s_nodes is not None else avg.quadrature_nodes_in_s
    if N < _MIN_S_NODES:
        raise InvalidParameterError(f"s_nodes must be at least {_MIN_S_NODES}")
    T = field.period
    s_vals = np.arange(N) * (T / N)
    omega = 2.0 * np.pi * np.fft.fftfreq(N, d=T / N)
    keep = np.ones(N, dtype=bool)
    keep[0] = False
    if N % 2 == 0:
        keep[N // 2] = False  # Nyquist mode has no usable antiderivative phase
    inv_iw = np.zeros(N, dtype=complex)
    inv_iw[keep] = 1.0 / (1j * omega[keep])
    m = field.dim

    def _eval(z):
        z = np.asarray(z, dtype=float)
        avg_z = avg.average.eval(z)
        g = np.empty((N,) + z.shape[:-1] + (m, m))
        for j, (pos, jinv) in enumerate(flow_sweep(field, cfg, s_vals, z)):
            g[j] = np.einsum("...ik,...kl,...jl->...ij", jinv, D.eval(pos), jinv) - avg_z
        ghat = np.fft.fft(g, axis=0) / N
        shape = (N,) + (1,) * (g.ndim - 1)
        return np.real(np.sum(ghat * inv_iw.reshape(shape), axis=0))

    corrector = MatrixFieldFn(dim=m, eval=_eval, symmetric=D.symmetric and avg.average.symmetric,
                              name=f"corrector({D.name})")

    if quad is None:
        if field.dim > 2:
            raise ConfigurationError("a quadrature must be supplied for dimensions above 2")
        quad = box_quadrature(dim=field.dim)
    fluctuation = field_linear_combination([D, avg.average], [1.0, -1.0], name="fluctuation")
    residual = generator_residual(fluctuation, corrector, field, cfg, fd_step, quad)
    mean_field = ergodic_average(corrector, field, cfg, s_nodes=max(_MIN_S_NODES, min(N, 64))).average
    stride = max(1, quad.nodes.shape[0] // mean_sample)
    mean_vals = mean_field.eval(quad.nodes[::stride])
    mean_norm = float(np.max(np.linalg.norm(mean_vals, axis=(-2, -1))))
    return CorrectorResult(corrector=corrector, residual=residual, mean_norm=mean_norm)


def rotation_average_closed_form(beta: float, gamma: float, lam1: float = 1.0,
                                 lam2: float = 1.0) -> np.ndarray:
    """Averaged tensor for the rotation field and a flow-constant diag(lam1, lam2)."""
    if not (beta > 0.0) or not (gamma > 0.0):
        raise InvalidParameterError("closed-form average requires beta > 0 and gamma > 0")
    return np.diag([
        0.5 * lam1 + gamma / (2.0 * beta) * lam2,
        beta / (2.0 * gamma) * lam1 + 0.5 * lam2,
    ])


def gyro_average_closed_form(omega_c: float) -> np.ndarray:
    """Averaged 6x6 tensor for the drift-kinetic field and velocity-space identity.

    Averaging the velocity-space identity over the cyclotron rotation
    produces diffusion in the perpendicular position block (2 I / wc^2),
    antisymmetric position-velocity coupling blocks (-E/wc and E/wc with
    E the quarter-turn rotation), the identity in perpendicular
    velocity, a unit parallel-velocity entry, and a zero parallel
    position row and column.
    """
    if omega_c == 0.0:
        raise InvalidParameterError("closed-form average requires omega_c != 0")
    wc = float(omega_c)
    E = np.array([[0.0, 1.0], [-1.0, 0.0]])
    out = np.zeros((6, 6))
    out[0:2, 0:2] = 2.0 * np.eye(2) / wc ** 2
    out[0:2, 3:5] = -E / wc
    out[3:5, 0:2] = E / wc
    out[3:5, 3:5] = np.eye(2)
    out[5, 5] = 1.0
    return out


__all__ = [
    "AverageResult",
    "AveragePropertyReport",
    "CorrectorResult",
    "average_invariance_residual",
    "average_properties_check",
    "bilinear_matrix_interpolant",
    "corrector_solve",
    "ergodic_average",
    "gyro_average_closed_form",
    "rotation_average_closed_form",
]
