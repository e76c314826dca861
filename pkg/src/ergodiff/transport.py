"""Push-forward of matrix fields along a flow, and weighted norms.

The push-forward of a matrix field A by flow time s is
(z -> dY(-s; Y(s; z)) A(Y(s; z)) dY(-s; Y(s; z))^T), a one-parameter
group of transformations that is unitary for the L2 norm weighted by an
invariant matrix Q, preserves symmetry, positivity and coercivity, and
whose generator is the matrix transport bracket
(b.grad)A - (d_y b) A - A (d_y b)^T.

Norms over the unbounded domain are approximated by midpoint
quadrature on a truncated box; the truncation is an explicit knob and
all tolerances quoted in the tests are stated at the defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .errors import (
    CapabilityError,
    DimensionMismatchError,
    InvalidParameterError,
    WeightMatrixError,
)
from .fields import VectorFieldSpec
from .flow import FlowIntegratorConfig, flow_state

_EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class MatrixFieldFn:
    """An m x m matrix-valued field, evaluable at batches of points.

    ``eval`` maps points of shape (..., dim) to matrices of shape
    (..., dim, dim).  ``deriv``, when present, returns the stacked
    partial derivatives with shape (..., dim, dim, dim) where the first
    matrix axis indexes the differentiation direction.
    """

    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    symmetric: bool = False
    deriv: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "matrix_field"

    def __call__(self, y):
        return self.eval(np.asarray(y, dtype=float))


def constant_matrix_field(matrix: np.ndarray, name: str = "constant") -> MatrixFieldFn:
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidParameterError("constant_matrix_field requires a square matrix")
    m = M.shape[0]
    sym = bool(np.max(np.abs(M - M.T)) <= 1e-14)

    def _eval(y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(M, y.shape[:-1] + (m, m)).copy()

    def _deriv(y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape[:-1] + (m, m, m))

    return MatrixFieldFn(dim=m, eval=_eval, symmetric=sym, deriv=_deriv, name=name)


def identity_matrix_field(dim: int) -> MatrixFieldFn:
    return constant_matrix_field(np.eye(dim), name="identity")


def field_linear_combination(fields, coeffs, name: str = "combination") -> MatrixFieldFn:
    """Pointwise linear combination of matrix fields."""
    fields = list(fields)
    coeffs = [float(c) for c in coeffs]
    if len(fields) != len(coeffs) or not fields:
        raise InvalidParameterError("need matching, nonempty fields and coefficients")
    dim = fields[0].dim
    if any(f.dim != dim for f in fields):
        raise DimensionMismatchError("cannot combine fields of different dimensions")
    sym = all(f.symmetric for f in fields)
    have_derivs = all(f.deriv is not None for f in fields)

    def _eval(y):
        return sum(c * f.eval(y) for f, c in zip(fields, coeffs))

    _deriv = (lambda y: sum(c * f.deriv(y) for f, c in zip(fields, coeffs))) if have_derivs else None
    return MatrixFieldFn(dim=dim, eval=_eval, symmetric=sym, deriv=_deriv, name=name)


def _monomial_exponents(dim: int, degree: int) -> np.ndarray:
    expo = [()]
    out = []

    def rec(prefix, remaining):
        if len(prefix) == dim:
            out.append(prefix)
            return
        for k in range(remaining + 1):
            rec(prefix + (k,), remaining - k)

    rec((), degree)
    del expo
    return np.array(out, dtype=int)


def random_polynomial_field(dim: int = 2, degree: int = 2, seed: int = 0,
                            envelope_width: float = 1.0, psd: bool = False) -> MatrixFieldFn:
    """Seeded symmetric polynomial field damped by a Gaussian envelope.

    Raw polynomials are not square integrable on the whole space, so the
    entries are polynomials times exp(-|y|^2 / (2 w^2)); the envelope
    keeps box truncation negligible in the weighted norms.  With
    ``psd=True`` the field is B(y)^T B(y) times the envelope, hence
    positive semidefinite everywhere.  Analytic first derivatives are
    provided.
    """
    rng = np.random.default_rng(seed)
    expo = _monomial_exponents(dim, degree)
    n_mono = expo.shape[0]
    w2 = float(envelope_width) ** 2
    if psd:
        coeffs = rng.normal(size=(dim, dim, n_mono)) / n_mono
    else:
        raw = rng.normal(size=(dim, dim, n_mono))
        coeffs = 0.5 * (raw + raw.transpose(1, 0, 2))

    def _monomials(y):
        # shape (..., n_mono)
        return np.prod(y[..., None, :] ** expo, axis=-1)

    def _monomials_grad(y):
        # d/dy_k of each monomial, shape (..., dim, n_mono)
        grads = []
        for k in range(dim):
            e = expo.copy()
            fac = e[:, k].astype(float)
            e[:, k] = np.maximum(e[:, k] - 1, 0)
            grads.append(fac * np.prod(y[..., None, :] ** e, axis=-1))
        return np.stack(grads, axis=-2)

    def _poly(y):
        mono = _monomials(y)
        return np.einsum("ijm,...m->...ij", coeffs, mono)

    def _poly_grad(y):
        dmono = _monomials_grad(y)
        return np.einsum("ijm,...km->...kij", coeffs, dmono)

    def _eval(y):
        y = np.asarray(y, dtype=float)
        env = np.exp(-0.5 * np.sum(y * y, axis=-1) / w2)
        B = _poly(y)
        if psd:
            B = np.einsum("...ki,...kj->...ij", B, B)
        return env[..., None, None] * B

    def _deriv(y):
        y = np.asarray(y, dtype=float)
        env = np.exp(-0.5 * np.sum(y * y, axis=-1) / w2)
        B = _poly(y)
        dB = _poly_grad(y)
        if psd:
            val = np.einsum("...ki,...kj->...ij", B, B)
            dval = np.einsum("...qki,...kj->...qij", dB, B) + np.einsum(
                "...ki,...qkj->...qij", B, dB
            )
        else:
            val = B
            dval = dB
        denv = -(y / w2) * env[..., None]
        return env[..., None, None, None] * dval + denv[..., None, None] * val[..., None, :, :]

    return MatrixFieldFn(dim=dim, eval=_eval, symmetric=True, deriv=_deriv,
                         name=f"poly_gauss(seed={seed})")


def spd_sqrt(values: np.ndarray, floor: float = _EIG_FLOOR, what: str = "weight"):
    """Symmetric square roots of a batch of SPD matrices.

    Eigenvalues below ``floor`` are treated as a conditioning failure
    and raise WeightMatrixError naming the offending batch entry.
    """
    vals = np.asarray(values, dtype=float)
    eigval, eigvec = np.linalg.eigh(0.5 * (vals + np.swapaxes(vals, -1, -2)))
    bad = eigval[..., 0] < floor
    if np.any(bad):
        idx = int(np.argmax(bad.ravel()))
        raise WeightMatrixError(
            f"{what} matrix not SPD (eigenvalue {eigval.reshape(-1, eigval.shape[-1])[idx, 0]:.3e} "
            f"below floor {floor:g}) at node {idx}",
            node=idx,
        )
    root = np.sqrt(eigval)
    return np.einsum("...ik,...k,...jk->...ij", eigvec, root, eigvec)


@dataclass
class WeightedQuadrature:
    """Midpoint quadrature on a box, with optional P/Q weight fields.

    ``nodes`` is the flattened tensor lattice, ``weights`` the per-node
    cell volumes (they sum to the box volume).  The symmetric square
    root of Q at the nodes is precomputed; ``q_sqrt_nodes`` is None when
    Q is the identity.
    """

    dim: int
    lo: float
    hi: float
    n_per_axis: int
    nodes: np.ndarray
    weights: np.ndarray
    p_field: Optional[MatrixFieldFn] = None
    q_field: Optional[MatrixFieldFn] = None
    q_sqrt_nodes: Optional[np.ndarray] = dc_field(default=None, repr=False)
    p_nodes: Optional[np.ndarray] = dc_field(default=None, repr=False)

    @property
    def axes(self) -> np.ndarray:
        h = (self.hi - self.lo) / self.n_per_axis
        return self.lo + (np.arange(self.n_per_axis) + 0.5) * h


def box_quadrature(dim: int = 2, lo: float = -4.0, hi: float = 4.0, n_per_axis: int = 64,
                   p_field: Optional[MatrixFieldFn] = None,
                   q_field: Optional[MatrixFieldFn] = None) -> WeightedQuadrature:
    """Tensor-product midpoint rule on [lo, hi]^dim."""
    if hi <= lo:
        raise InvalidParameterError("box_quadrature requires hi > lo")
    if n_per_axis < 1:
        raise InvalidParameterError("box_quadrature requires at least one node per axis")
    h = (hi - lo) / n_per_axis
    axis = lo + (np.arange(n_per_axis) + 0.5) * h
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1)
    weights = np.full(nodes.shape[0], h ** dim)
    q_sqrt = None
    if q_field is not None and q_field.name != "identity":
        q_sqrt = spd_sqrt(q_field.eval(nodes), what="Q weight")
    p_nodes = None
    if p_field is not None and p_field.name != "identity":
        p_nodes = np.asarray(p_field.eval(nodes), dtype=float)
    return WeightedQuadrature(dim=dim, lo=lo, hi=hi, n_per_axis=n_per_axis, nodes=nodes,
                              weights=weights, p_field=p_field, q_field=q_field,
                              q_sqrt_nodes=q_sqrt, p_nodes=p_nodes)


def weighted_matrix_values(A: MatrixFieldFn, quad: WeightedQuadrature) -> np.ndarray:
    """Q^{1/2} A Q^{1/2} evaluated at the quadrature nodes."""
    vals = np.asarray(A.eval(quad.nodes), dtype=float)
    if quad.q_sqrt_nodes is None:
        return vals
    qh = quad.q_sqrt_nodes
    return np.einsum("nik,nkl,nlj->nij", qh, vals, qh)


def weighted_l2_norm(A: MatrixFieldFn, quad: WeightedQuadrature) -> float:
    """Weighted L2 norm (sum_nodes w * Q^{1/2}AQ^{1/2} : Q^{1/2}AQ^{1/2})^{1/2}."""
    S = weighted_matrix_values(A, quad)
    total = float(np.sum(quad.weights * np.sum(S * S, axis=(-2, -1))))
    if not np.isfinite(total):
        raise InvalidParameterError("weighted L2 norm is not finite on the quadrature box")
    return float(np.sqrt(total))


def weighted_sup_norm(A: MatrixFieldFn, quad: WeightedQuadrature) -> float:
    """Max over nodes of the Q-weighted Frobenius norm of A."""
    S = weighted_matrix_values(A, quad)
    vals = np.sqrt(np.sum(S * S, axis=(-2, -1)))
    if not np.all(np.isfinite(vals)):
        raise InvalidParameterError("weighted sup norm is not finite on the quadrature box")
    return float(np.max(vals))


def weighted_vector_norm(w, quad: WeightedQuadrature) -> float:
    """P-weighted L2 norm of a vector field given as node samples or a callable."""
    if callable(w):
        vals = np.asarray(w(quad.nodes), dtype=float)
    else:
        vals = np.asarray(w, dtype=float)
    if vals.shape != (quad.nodes.shape[0], quad.dim):
        raise DimensionMismatchError(
            f"vector samples of shape {vals.shape} do not match the quadrature lattice"
        )
    if quad.p_nodes is None:
        quadratic = np.sum(vals * vals, axis=-1)
    else:
        quadratic = np.einsum("nij,ni,nj->n", quad.p_nodes, vals, vals)
    total = float(np.sum(quad.weights * quadratic))
    if not np.isfinite(total):
        raise InvalidParameterError("weighted vector norm is not finite on the quadrature box")
    return float(np.sqrt(total))


def pushforward_states(field: VectorFieldSpec, cfg: FlowIntegratorConfig, s: float,
                       z: np.ndarray):
    """Positions Y(s; z) and inverse Jacobians dY(-s; Y(s; z)) for a batch."""
    z = np.asarray(z, dtype=float)
    if cfg.method == "analytic":
        pos, _ = flow_state(field, cfg, s, z)
        return pos, field.flow_jacobian(-s, pos)
    pos, _ = flow_state(field, cfg, s, z)
    _, jac_inv = flow_state(field, cfg, -s, pos)
    return pos, jac_inv


def group_apply(s: float, A: MatrixFieldFn, field: VectorFieldSpec,
                cfg: FlowIntegratorConfig) -> MatrixFieldFn:
    """Push the matrix field A forward by flow time s.

    Returns the field z -> dY(-s; Y(s; z)) A(Y(s; z)) dY(-s; Y(s; z))^T.
    Symmetry of A is preserved exactly by the conjugation.
    """
    if A.dim != field.dim:
        raise DimensionMismatchError(f"matrix field dimension {A.dim} != field dimension {field.dim}")
    s = float(s)

    def _eval(z):
        z = np.asarray(z, dtype=float)
        if s == 0.0:
            return A.eval(z)
        pos, jinv = pushforward_states(field, cfg, s, z)
        vals = A.eval(pos)
        return np.einsum("...ik,...kl,...jl->...ij", jinv, vals, jinv)

    return MatrixFieldFn(dim=A.dim, eval=_eval, symmetric=A.symmetric,
                         name=f"pushforward({A.name}, s={s:g})")


def lie_bracket_matrix(b: VectorFieldSpec, A: MatrixFieldFn, y: np.ndarray) -> np.ndarray:
    """Matrix transport bracket (b.grad)A - (d_y b) A - A (d_y b)^T at y."""
    if A.deriv is None:
        raise CapabilityError("matrix field carries no analytic derivatives")
    if A.dim != b.dim:
        raise DimensionMismatchError("bracket of mismatched dimensions")
    y = np.asarray(y, dtype=float)
    bv = np.asarray(b.eval(y), dtype=float)
    jb = np.asarray(b.jacobian(y), dtype=float)
    av = np.asarray(A.eval(y), dtype=float)
    da = np.asarray(A.deriv(y), dtype=float)
    advect = np.einsum("...k,...kij->...ij", bv, da)
    return advect - np.einsum("...ik,...kj->...ij", jb, av) - np.einsum(
        "...ik,...jk->...ij", av, jb
    )


def generator_residual(target: Optional[MatrixFieldFn], C: MatrixFieldFn,
                       field: VectorFieldSpec, cfg: FlowIntegratorConfig, h: float,
                       quad: WeightedQuadrature, reduce: str = "max") -> float:
    """Residual of the central-difference generator against a target field.

    Computes (G(h)C - G(-h)C)/(2h) - target at the quadrature nodes and
    reduces it to a scalar: the node-wise maximum Frobenius norm
    (``reduce="max"``) or the Q-weighted L2 norm (``reduce="l2"``).
    A ``target`` of None means the zero field, certifying C in the
    generator's kernel.
    """
    if not (h > 0.0):
        raise InvalidParameterError("central-difference step h must be positive")
    forward = group_apply(h, C, field, cfg).eval(quad.nodes)
    backward = group_apply(-h, C, field, cfg).eval(quad.nodes)
    resid = (forward - backward) / (2.0 * h)
    if target is not None:
        resid = resid - target.eval(quad.nodes)
    if reduce == "max":
        return float(np.max(np.linalg.norm(resid, axis=(-2, -1))))
    if reduce == "l2":
        if quad.q_sqrt_nodes is not None:
            qh = quad.q_sqrt_nodes
            resid = np.einsum("nik,nkl,nlj->nij", qh, resid, qh)
        return float(np.sqrt(np.sum(quad.weights * np.sum(resid * resid, axis=(-2, -1)))))
    raise InvalidParameterError(f"unknown reduction '{reduce}'")
