"""Shared helpers for the test suite."""

import numpy as np

from ergodiff.fields import VectorFieldSpec
from ergodiff.transport import MatrixFieldFn


def constant_vector_field(v):
    v = np.asarray(v, dtype=float)
    m = v.size

    def _eval(y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(v, y.shape[:-1] + (m,)).copy()

    def _jac(y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape[:-1] + (m, m))

    def _div(y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape[:-1])

    return VectorFieldSpec(dim=m, eval=_eval, jacobian=_jac, divergence=_div,
                           growth_bound=float(np.linalg.norm(v)), name="constant")


def orbit_profile_field(beta, gamma, matrix, width=1.2):
    """Constant symmetric matrix times a Gaussian profile of the orbit invariant.

    The weighted Frobenius norm of the push-forward of such a field is
    pointwise constant along orbits, so even its lattice supremum is
    exactly preserved by the group action.
    """
    M = np.asarray(matrix, dtype=float)

    def _eval(y):
        y = np.asarray(y, dtype=float)
        r2 = beta * y[..., 0] ** 2 + gamma * y[..., 1] ** 2
        prof = np.exp(-r2 / (2.0 * width ** 2))
        return prof[..., None, None] * M

    return MatrixFieldFn(dim=2, eval=_eval, symmetric=bool(np.allclose(M, M.T)),
                         name="orbit_profile")
