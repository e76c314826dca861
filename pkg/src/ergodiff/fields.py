"""Divergence-free drift fields, their frames and weight matrices.

A drift field is described by a :class:`VectorFieldSpec` carrying the
field itself, its analytic Jacobian and divergence, a linear growth
bound, and (for the builtin cases) the closed-form flow map.  Builtins
cover the planar linear rotation field b(y) = (gamma*y2, -beta*y1) and
the six-dimensional drift-kinetic field whose fast motion is the
cyclotron rotation in the perpendicular velocity plane.

A :class:`FrameSpec` packages a basis of vector fields commuting with
the drift (the columns of R^{-1}) together with the induced weight
matrices Q = R^T R and P = Q^{-1} used by the weighted norms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatchError, InvalidParameterError

_LATTICE_POINTS_PER_AXIS = 10
_RANDOM_SAMPLE_COUNT = 100
_SAMPLE_SEED = 20260808


@dataclass(frozen=True)
class VectorFieldSpec:
    """A smooth divergence-free vector field with analytic Jacobian.

    ``eval``, ``jacobian`` and ``divergence`` accept points of shape
    ``(..., dim)`` and return arrays of shape ``(..., dim)``,
    ``(..., dim, dim)`` and ``(...)`` respectively.  ``flow`` and
    ``flow_jacobian``, when present, give the closed-form flow map and
    its Jacobian for a scalar flow time ``s``.
    """

    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    divergence: Callable[[np.ndarray], np.ndarray]
    growth_bound: float
    period: Optional[float] = None
    kind: str = "user_defined"
    name: str = "user"
    params: dict = field(default_factory=dict)
    flow: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    flow_jacobian: Optional[Callable[[float, np.ndarray], np.ndarray]] = None

    @property
    def has_analytic_flow(self) -> bool:
        return self.flow is not None and self.flow_jacobian is not None


@dataclass(frozen=True)
class FrameSpec:
    """A pointwise basis of fields commuting with the drift.

    The columns of ``r_inverse(y)`` are the frame fields evaluated at
    ``y``; ``r`` is its matrix inverse, and ``q``/``p`` the induced
    symmetric positive definite weights Q = R^T R, P = Q^{-1}.
    """

    fields: tuple
    r_inverse: Callable[[np.ndarray], np.ndarray]
    r: Callable[[np.ndarray], np.ndarray]
    q: Callable[[np.ndarray], np.ndarray]
    p: Callable[[np.ndarray], np.ndarray]


def sample_points(dim: int, half_width: float = 4.0, seed: int = _SAMPLE_SEED) -> np.ndarray:
    """Deterministic validation sample: a cell-centered lattice plus seeded random points.

    For dim <= 2 the lattice has 10 points per axis; in higher dimension
    only the 100 random points are used (a tensor lattice would explode).
    """
    rng = np.random.default_rng(seed)
    pts = [rng.uniform(-half_width, half_width, size=(_RANDOM_SAMPLE_COUNT, dim))]
    if dim <= 2:
        axis = -half_width + (np.arange(_LATTICE_POINTS_PER_AXIS) + 0.5) * (
            2.0 * half_width / _LATTICE_POINTS_PER_AXIS
        )
        mesh = np.meshgrid(*([axis] * dim), indexing="ij")
        pts.append(np.stack([m.ravel() for m in mesh], axis=-1))
    return np.concatenate(pts, axis=0)


def validate_field(spec: VectorFieldSpec, half_width: float = 4.0, tol: float = 1e-10) -> None:
    """Check the sampled invariants of a field spec.

    Raises InvalidParameterError if the declared divergence disagrees
    with the Jacobian trace, the growth bound is violated, or (when a
    period and a closed-form flow are declared) the flow fails to close
    after one period.
    """
    pts = sample_points(spec.dim, half_width)
    div = np.asarray(spec.divergence(pts), dtype=float)
    tr = np.trace(np.asarray(spec.jacobian(pts), dtype=float), axis1=-2, axis2=-1)
    if np.max(np.abs(div - tr)) > tol:
        raise InvalidParameterError(
            f"divergence disagrees with Jacobian trace by {np.max(np.abs(div - tr)):.3e}"
        )
    vals = np.asarray(spec.eval(pts), dtype=float)
    norms = np.linalg.norm(vals, axis=-1)
    bound = spec.growth_bound * (1.0 + np.linalg.norm(pts, axis=-1))
    if np.any(norms > bound + tol):
        raise InvalidParameterError("field magnitude exceeds declared linear growth bound")
    if spec.period is not None and spec.has_analytic_flow:
        closed = spec.flow(spec.period, pts)
        err = np.max(np.linalg.norm(closed - pts, axis=-1))
        if err > 1e-8 * (1.0 + half_width):
            raise InvalidParameterError(f"flow does not close after one period (residual {err:.3e})")


def rotation_field(beta: float, gamma: float) -> VectorFieldSpec:
    """Planar linear field b(y) = (gamma*y2, -beta*y1).

    The flow is the elliptic rotation of period 2*pi/sqrt(beta*gamma);
    both the flow map and its (point-independent) Jacobian are closed
    form, so the field supports the analytic integrator.
    """
    if not (beta > 0.0) or not (gamma > 0.0):
        raise InvalidParameterError("rotation_field requires beta > 0 and gamma > 0")
    beta = float(beta)
    gamma = float(gamma)
    omega = np.sqrt(beta * gamma)
    jac = np.array([[0.0, gamma], [-beta, 0.0]])

    def _eval(y):
        y = np.asarray(y, dtype=float)
        return np.stack([gamma * y[..., 1], -beta * y[..., 0]], axis=-1)

    def _jacobian(y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(jac, y.shape[:-1] + (2, 2)).copy()

    def _divergence(y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape[:-1])

    def _flow_matrix(s):
        # Y(s; y) = M(s) y with M(s) the elliptic rotation by angle -omega*s.
        c = np.cos(omega * s)
        sn = np.sin(omega * s)
        return np.array(
            [[c, np.sqrt(gamma / beta) * sn], [-np.sqrt(beta / gamma) * sn, c]]
        )

    def _flow(s, y):
        y = np.asarray(y, dtype=float)
        return y @ _flow_matrix(s).T

    def _flow_jacobian(s, y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(_flow_matrix(s), y.shape[:-1] + (2, 2)).copy()

    return VectorFieldSpec(
        dim=2,
        eval=_eval,
        jacobian=_jacobian,
        divergence=_divergence,
        growth_bound=max(beta, gamma),
        period=2.0 * np.pi / omega,
        kind="analytic_builtin",
        name="rotation",
        params={"beta": beta, "gamma": gamma},
        flow=_flow,
        flow_jacobian=_flow_jacobian,
    )


def gyrokinetic_field(omega_c: float) -> VectorFieldSpec:
    """Six-dimensional drift field (v1, v2, 0, wc*v2, -wc*v1, 0).

    Coordinates are (x1, x2, x3, v1, v2, v3).  The perpendicular
    velocity rotates at the cyclotron frequency wc while the guiding
    center drifts; the flow is closed form and 2*pi/|wc|-periodic.
    """
    if omega_c == 0.0:
        raise InvalidParameterError("gyrokinetic_field requires omega_c != 0")
    wc = float(omega_c)
    perp = np.array([[0.0, 1.0], [-1.0, 0.0]])  # maps (v1, v2) to (v2, -v1)
    jac = np.zeros((6, 6))
    jac[0, 3] = 1.0
    jac[1, 4] = 1.0
    jac[3, 4] = wc
    jac[4, 3] = -wc

    def _eval(y):
        y = np.asarray(y, dtype=float)
        v1, v2 = y[..., 3], y[..., 4]
        zeros = np.zeros_like(v1)
        return np.stack([v1, v2, zeros, wc * v2, -wc * v1, zeros], axis=-1)

    def _jacobian(y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(jac, y.shape[:-1] + (6, 6)).copy()

    def _divergence(y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape[:-1])

    def _rot(theta):
        c, sn = np.cos(theta), np.sin(theta)
        return np.array([[c, -sn], [sn, c]])

    def _flow_matrix(s):
        # The flow is linear in (x, v); perpendicular velocities rotate by
        # -wc*s and the perpendicular position picks up (I - Rot(-wc*s))/wc
        # applied to the perpendicular velocity.
        rot = _rot(-wc * s)
        M = np.eye(6)
        M[3:5, 3:5] = rot
        M[0:2, 3:5] = (np.eye(2) - rot) @ perp / wc
        return M

    def _flow(s, y):
        y = np.asarray(y, dtype=float)
        return y @ _flow_matrix(s).T

    def _flow_jacobian(s, y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(_flow_matrix(s), y.shape[:-1] + (6, 6)).copy()

    return VectorFieldSpec(
        dim=6,
        eval=_eval,
        jacobian=_jacobian,
        divergence=_divergence,
        growth_bound=max(1.0, abs(wc)),
        period=2.0 * np.pi / abs(wc),
        kind="analytic_builtin",
        name="gyrokinetic",
        params={"omega_c": wc},
        flow=_flow,
        flow_jacobian=_flow_jacobian,
    )


def lie_bracket_vectors(a: VectorFieldSpec, c: VectorFieldSpec, y: np.ndarray) -> np.ndarray:
    """Lie bracket [a, c](y) = (a.grad)c - (c.grad)a from the analytic Jacobians."""
    if a.dim != c.dim:
        raise DimensionMismatchError(f"bracket of a {a.dim}-d and a {c.dim}-d field")
    y = np.asarray(y, dtype=float)
    ja = np.asarray(a.jacobian(y), dtype=float)
    jc = np.asarray(c.jacobian(y), dtype=float)
    va = np.asarray(a.eval(y), dtype=float)
    vc = np.asarray(c.eval(y), dtype=float)
    return np.einsum("...ij,...j->...i", jc, va) - np.einsum("...ij,...j->...i", ja, vc)


def _linear_field(matrix: np.ndarray, name: str, growth: float) -> VectorFieldSpec:
    M = np.asarray(matrix, dtype=float)
    m = M.shape[0]

    def _eval(y):
        y = np.asarray(y, dtype=float)
        return y @ M.T

    def _jacobian(y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(M, y.shape[:-1] + (m, m)).copy()

    def _divergence(y):
        y = np.asarray(y, dtype=float)
        return np.full(y.shape[:-1], float(np.trace(M)))

    return VectorFieldSpec(
        dim=m,
        eval=_eval,
        jacobian=_jacobian,
        divergence=_divergence,
        growth_bound=growth,
        kind="analytic_builtin",
        name=name,
    )


def rotation_frame(beta: float, gamma: float) -> FrameSpec:
    """The radial/angular frame commuting with the rotation field.

    The fields b1(y) = y and b2(y) = b(y)/sqrt(beta*gamma) are linear,
    commute with the drift, and span the plane away from the origin,
    where the frame necessarily degenerates (det R^{-1}(0) = 0).
    """
    b = rotation_field(beta, gamma)
    omega = np.sqrt(beta * gamma)
    radial = _linear_field(np.eye(2), "radial", 1.0)
    angular = _linear_field(np.array([[0.0, gamma], [-beta, 0.0]]) / omega, "angular", max(beta, gamma) / omega)

    def r_inverse(y):
        y = np.asarray(y, dtype=float)
        cols = np.stack([radial.eval(y), angular.eval(y)], axis=-1)
        return cols

    def r(y):
        return np.linalg.inv(r_inverse(y))

    def q(y):
        rm = r(y)
        return np.einsum("...ki,...kj->...ij", rm, rm)

    def p(y):
        ri = r_inverse(y)
        return np.einsum("...ik,...jk->...ij", ri, ri)

    return FrameSpec(fields=(radial, angular), r_inverse=r_inverse, r=r, q=q, p=p)


def rotation_weights(beta: float, gamma: float):
    """Constant weight pair (P, Q) invariant under the rotation drift.

    Rescaling coordinates by diag(sqrt(beta), sqrt(gamma)) turns the
    elliptic rotation into a rigid one, so Q = diag(beta, gamma) and
    P = Q^{-1} satisfy the transport-invariance condition
    (b.grad)P - (d_y b)P - P(d_y b)^T = 0 exactly, for every beta, gamma.
    """
    if not (beta > 0.0) or not (gamma > 0.0):
        raise InvalidParameterError("rotation_weights requires beta > 0 and gamma > 0")
    q = np.diag([float(beta), float(gamma)])
    p = np.diag([1.0 / beta, 1.0 / gamma])
    return p, q


def validate_frame(frame: FrameSpec, drift: VectorFieldSpec, half_width: float = 4.0,
                   bracket_tol: float = 1e-8) -> None:
    """Check frame invariants on the sampled lattice.

    Verifies det R^{-1} != 0, P Q = I to 1e-10, symmetry/positivity of
    P and Q, and the commutation of every frame field with the drift.
    Lattice points too close to a frame degeneracy (|det| < 1e-6) are
    skipped; the rotation frame legitimately degenerates at the origin.
    """
    pts = sample_points(drift.dim, half_width)
    ri = frame.r_inverse(pts)
    dets = np.linalg.det(ri)
    keep = np.abs(dets) > 1e-6
    if not np.any(keep):
        raise InvalidParameterError("frame degenerate on the entire sample")
    pts = pts[keep]
    pv = frame.p(pts)
    qv = frame.q(pts)
    pq = np.einsum("...ik,...kj->...ij", pv, qv)
    eye = np.eye(drift.dim)
    if np.max(np.abs(pq - eye)) > 1e-10:
        raise InvalidParameterError("P Q differs from the identity beyond 1e-10")
    for mat, tag in ((pv, "P"), (qv, "Q")):
        if np.max(np.abs(mat - np.swapaxes(mat, -1, -2))) > 1e-10:
            raise InvalidParameterError(f"{tag} not symmetric on the sample")
        if np.min(np.linalg.eigvalsh(mat)) <= 0.0:
            raise InvalidParameterError(f"{tag} not positive definite on the sample")
    for bi in frame.fields:
        res = np.max(np.linalg.norm(lie_bracket_vectors(drift, bi, pts), axis=-1))
        if res > bracket_tol:
            raise InvalidParameterError(
                f"frame field '{bi.name}' does not commute with the drift (residual {res:.3e})"
            )


def field_from_config(cfg: dict) -> VectorFieldSpec:
    """Build a builtin field from a config mapping like {"kind": "rotation", ...}."""
    try:
        kind = cfg["kind"]
    except (TypeError, KeyError):
        raise InvalidParameterError("field config requires a 'kind' entry")
    if kind == "rotation":
        return rotation_field(cfg.get("beta", 1.0), cfg.get("gamma", 1.0))
    if kind == "gyrokinetic":
        return gyrokinetic_field(cfg.get("omega_c", 1.0))
    raise InvalidParameterError(f"unknown field kind '{kind}'")
