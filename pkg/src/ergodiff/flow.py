"""Characteristic flows and their Jacobians.

``flow_advance`` integrates dY/ds = b(Y) together with the variational
equation d(dY)/ds = (d_y b)(Y) dY from the identity, either by
classical fixed-step RK4 on the joint system or by the closed-form flow
a builtin field carries.  The inverse Jacobian is obtained from the
backward flow evaluated at the arrival point, which is the composition
identity the push-forward action relies on; plain matrix inversion is
kept as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigurationError, IntegrationFailureError
from .fields import VectorFieldSpec


@dataclass(frozen=True)
class FlowIntegratorConfig:
    """Integrator choice for flow evaluations.

    ``method`` is "rk4" (fixed step ``step``) or "analytic" (closed-form
    flow, builtin fields only).  ``tolerance`` is the accuracy budget
    assumed by downstream consistency checks.
    """

    method: str = "rk4"
    step: float = 1e-3
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.method not in ("rk4", "analytic"):
            raise ConfigurationError(f"unknown integrator method '{self.method}'")
        if not (self.step > 0.0):
            raise ConfigurationError("integrator step must be positive")
        if not (self.tolerance > 0.0):
            raise ConfigurationError("integrator tolerance must be positive")


@dataclass(frozen=True)
class FlowResult:
    """Flow state at time ``s`` from seed ``y0`` (arrays broadcast over seeds)."""

    s: float
    y0: np.ndarray
    position: np.ndarray
    jacobian: np.ndarray
    jacobian_inv: np.ndarray
    det_jacobian: np.ndarray


def default_integrator(field: VectorFieldSpec, step: float = 1e-3) -> FlowIntegratorConfig:
    """Analytic integrator when the field carries a closed-form flow, else RK4."""
    method = "analytic" if field.has_analytic_flow else "rk4"
    return FlowIntegratorConfig(method=method, step=step)


def _check_finite(y: np.ndarray, s: float) -> None:
    if not np.all(np.isfinite(y)):
        raise IntegrationFailureError(f"non-finite flow state at s={s!r}", s=s)


def _rk4_joint_step(field: VectorFieldSpec, h: float, y: np.ndarray, jac: np.ndarray):
    """One RK4 step of the joint (position, Jacobian) system."""

    def rhs(yy, jj):
        return field.eval(yy), np.einsum("...ik,...kj->...ij", field.jacobian(yy), jj)

    k1y, k1j = rhs(y, jac)
    k2y, k2j = rhs(y + 0.5 * h * k1y, jac + 0.5 * h * k1j)
    k3y, k3j = rhs(y + 0.5 * h * k2y, jac + 0.5 * h * k2j)
    k4y, k4j = rhs(y + h * k3y, jac + h * k3j)
    y_new = y + (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
    j_new = jac + (h / 6.0) * (k1j + 2.0 * k2j + 2.0 * k3j + k4j)
    return y_new, j_new


def _rk4_integrate(field: VectorFieldSpec, cfg: FlowIntegratorConfig, s: float, y: np.ndarray):
    """Integrate the joint system from (y, I) over [0, s]; s may be negative."""
    y = np.asarray(y, dtype=float)
    m = field.dim
    jac = np.broadcast_to(np.eye(m), y.shape[:-1] + (m, m)).copy()
    if s == 0.0:
        return y.copy(), jac
    n_steps = max(1, int(np.ceil(abs(s) / cfg.step - 1e-12)))
    h = s / n_steps
    pos = y.copy()
    for k in range(n_steps):
        pos, jac = _rk4_joint_step(field, h, pos, jac)
        _check_finite(pos, (k + 1) * h)
    return pos, jac


def _analytic_state(field: VectorFieldSpec, s: float, y: np.ndarray):
    y = np.asarray(y, dtype=float)
    pos = field.flow(s, y)
    jac = field.flow_jacobian(s, y)
    return pos, jac


def _require_analytic(field: VectorFieldSpec) -> None:
    if not field.has_analytic_flow:
        raise ConfigurationError(
            f"field '{field.name}' carries no closed-form flow; use method='rk4'"
        )


def flow_state(field: VectorFieldSpec, cfg: FlowIntegratorConfig, s: float, y: np.ndarray):
    """Position and forward Jacobian at flow time s (batched over seeds)."""
    if cfg.method == "analytic":
        _require_analytic(field)
        return _analytic_state(field, s, y)
    return _rk4_integrate(field, cfg, s, y)


def flow_advance(field: VectorFieldSpec, cfg: FlowIntegratorConfig, s: float, y: np.ndarray) -> FlowResult:
    """Advance seeds by flow time s, returning position, Jacobian and its inverse.

    The inverse Jacobian is the backward-flow Jacobian at the arrival
    point, dY(-s; Y(s; y)), integrated with the same step sequence.
    """
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != field.dim:
        raise ConfigurationError(f"seed dimension {y.shape[-1]} != field dimension {field.dim}")
    s = float(s)
    if not np.isfinite(s):
        raise ConfigurationError("flow time must be finite")
    if s == 0.0:
        m = field.dim
        eye = np.broadcast_to(np.eye(m), y.shape[:-1] + (m, m)).copy()
        return FlowResult(0.0, y.copy(), y.copy(), eye, eye.copy(), np.ones(y.shape[:-1]))
    pos, jac = flow_state(field, cfg, s, y)
    if cfg.method == "analytic":
        jac_inv = field.flow_jacobian(-s, pos)
    else:
        _, jac_inv = _rk4_integrate(field, cfg, -s, pos)
    det = np.linalg.det(jac)
    return FlowResult(s, y.copy(), pos, jac, jac_inv, det)


def flow_group_check(field: VectorFieldSpec, cfg: FlowIntegratorConfig, s: float, t: float,
                     y: np.ndarray) -> float:
    """Residual || Y(s; Y(t; y)) - Y(s + t; y) || of the flow group law."""
    y = np.asarray(y, dtype=float)
    mid, _ = flow_state(field, cfg, t, y)
    two_step, _ = flow_state(field, cfg, s, mid)
    direct, _ = flow_state(field, cfg, s + t, y)
    return float(np.max(np.linalg.norm(two_step - direct, axis=-1)))


def flow_sweep(field: VectorFieldSpec, cfg: FlowIntegratorConfig, s_values: Iterable[float],
               y: np.ndarray):
    """Yield (position, inverse Jacobian) at increasing flow times.

    The sweep advances incrementally, so an RK4 pass over N quadrature
    times costs O(N) steps instead of O(N^2).  The inverse Jacobian is
    accumulated through the backward-step composition
    dY(-(s+h); Y(s+h)) = dY(-s; Y(s)) * dY(-h; Y(s+h)).
    """
    y = np.asarray(y, dtype=float)
    s_values = [float(s) for s in s_values]
    if any(b < a for a, b in zip(s_values, s_values[1:])):
        raise ConfigurationError("flow_sweep requires nondecreasing flow times")
    if cfg.method == "analytic":
        _require_analytic(field)
        for s in s_values:
            pos = field.flow(s, y)
            yield pos, field.flow_jacobian(-s, pos)
        return
    m = field.dim
    s_cur = 0.0
    pos = y.copy()
    jac_inv = np.broadcast_to(np.eye(m), y.shape[:-1] + (m, m)).copy()
    for s in s_values:
        ds = s - s_cur
        if ds > 0.0:
            n_steps = max(1, int(np.ceil(ds / cfg.step - 1e-12)))
            h = ds / n_steps
            for _ in range(n_steps):
                pos, _ = _rk4_joint_step(
                    field, h, pos, np.broadcast_to(np.eye(m), pos.shape[:-1] + (m, m)).copy()
                )
                _, back = _rk4_joint_step(
                    field, -h, pos, np.broadcast_to(np.eye(m), pos.shape[:-1] + (m, m)).copy()
                )
                jac_inv = np.einsum("...ik,...kj->...ij", jac_inv, back)
            _check_finite(pos, s)
        elif ds < 0.0 or (s_cur == 0.0 and s < 0.0):
            raise ConfigurationError("flow_sweep requires nonnegative flow times")
        s_cur = s
        yield pos.copy(), jac_inv.copy()
