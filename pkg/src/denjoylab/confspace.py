"""Conformal structures on R^k.

A conformal structure is an inner product up to scale.  It is stored as the
unit-determinant SPD matrix ``P = A A^T / det(A A^T)^(1/k)``, so the base
point (the round structure) is the identity.  The group GL(k) acts by
congruence, ``A . P = A P A^T`` (renormalised), and the distance is the
affine-invariant one,

    d(P, Q) = || log(P^{-1/2} Q P^{-1/2}) ||_F,

which is invariant under that action.  With this normalisation a 2x2 matrix
satisfies ``dist_to_base(A) = sqrt(2) * log(dilatation(A))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    NonSPDInput,
    OrientationReversing,
    SingularMatrix,
)

SINGULAR_TOL = 1e-14
SYMMETRY_TOL = 1e-12
DET_TOL = 1e-10
_EIG_FLOOR = 1e-300
_DET_ROUTE = 1e4  # condition number above which 2x2 uses the determinant


def _as_square(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise SingularMatrix("matrix has non-finite entries")
    return A


def _check_invertible(A):
    A = _as_square(A)
    sign, logdet = np.linalg.slogdet(A)
    if sign == 0 or logdet < np.log(SINGULAR_TOL):
        raise SingularMatrix(f"|det| = {np.exp(logdet) if sign else 0.0:.3e} below {SINGULAR_TOL}")
    return A, sign, logdet


@dataclass(frozen=True, eq=False)
class ConformalStructure:
    """Unit-determinant SPD form representing a point of Conf(k)."""

    form: np.ndarray

    def __post_init__(self):
        P = np.array(self.form, dtype=float)
        P.setflags(write=False)
        object.__setattr__(self, "form", P)
        validate_spd(P)

    @property
    def k(self):
        return self.form.shape[0]

    @classmethod
    def base(cls, k):
        return cls(np.eye(k))

    def __eq__(self, other):
        if not isinstance(other, ConformalStructure):
            return NotImplemented
        return self.form.shape == other.form.shape and np.array_equal(self.form, other.form)

    def __hash__(self):
        return hash(self.form.tobytes())

    @classmethod
    def _trusted(cls, P):
        # forms built by _sym_unit_det are SPD with det 1 by construction
        obj = object.__new__(cls)
        P.setflags(write=False)
        object.__setattr__(obj, "form", P)
        return obj

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.form, dtype=dtype)


def validate_spd(P):
    """Raise :class:`NonSPDInput` unless ``P`` is a valid conformal structure."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise NonSPDInput(f"expected a square matrix, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise NonSPDInput("non-finite entries")
    if np.max(np.abs(P - P.T)) > SYMMETRY_TOL:
        raise NonSPDInput("form is not symmetric")
    w = np.linalg.eigvalsh(P)
    if w[0] <= 0:
        raise NonSPDInput(f"form has non-positive eigenvalue {w[0]!r}")
    if abs(np.prod(w) - 1.0) > DET_TOL:
        raise NonSPDInput(f"det(form) = {np.prod(w)!r}, expected 1")
    return P


def _form(P):
    if isinstance(P, ConformalStructure):
        return P.form
    return validate_spd(P)


def _sym_unit_det(S):
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    if w[0] <= 0:
        raise SingularMatrix("congruence produced a non-positive form")
    # Rescale through the eigenvalues so det is 1 to rounding.
    w = w / np.exp(np.mean(np.log(w)))
    P = (V * w) @ V.T
    return 0.5 * (P + P.T)


def normalize(A):
    """Representative ``A A^T / det(A A^T)^(1/k)`` of the class ``[A]``."""
    A, _, _ = _check_invertible(A)
    return ConformalStructure._trusted(_sym_unit_det(A @ A.T))


def base_point(k):
    return ConformalStructure.base(k)


def act(A, P):
    """Left action ``A . [B] = [A B]`` written on forms as ``A P A^T``."""
    A, _, _ = _check_invertible(A)
    P = _form(P)
    if A.shape != P.shape:
        raise DimensionMismatch(f"matrix {A.shape} cannot act on form {P.shape}")
    return ConformalStructure._trusted(_sym_unit_det(A @ P @ A.T))


def _spd_power(P, power):
    w, V = np.linalg.eigh(P)
    w = np.maximum(w, _EIG_FLOOR)
    return (V * w**power) @ V.T


def conf_dist(P, Q):
    """Affine-invariant distance between two conformal structures."""
    P = _form(P)
    Q = _form(Q)
    if P.shape != Q.shape:
        raise DimensionMismatch(f"forms of shape {P.shape} and {Q.shape}")
    R = _spd_power(P, -0.5)
    S = R @ Q @ R
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    if w[0] <= 0:
        raise NonSPDInput("relative form lost positivity")
    return float(np.sqrt(np.sum(np.log(w) ** 2)))


def log_singular_values(A, logabsdet=None):
    """Logs of the singular values of ``A``, largest first.

    For ill-conditioned 2x2 matrices the smaller value is recovered from the
    determinant, which stays accurate where a direct SVD loses it.
    ``logabsdet`` may be supplied when it is known more accurately than LU
    would give it (e.g. accumulated along a cocycle).
    """
    A = _as_square(A)
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 0:
        raise SingularMatrix("zero singular value")
    logs = np.log(s)
    if A.shape[0] == 2 and (logabsdet is not None or s[0] > _DET_ROUTE * s[1]):
        if logabsdet is None:
            logabsdet = np.log(abs(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]))
        logs[1] = logabsdet - logs[0]
    return logs


def dist_to_base(A, logabsdet=None):
    """``conf_dist(normalize(A), base)``, computed from singular values.

    The normalised form has eigenvalues ``sigma_i^2 / det^(2/k)``, so the
    distance is ``2 * || log sigma - mean(log sigma) ||``.
    """
    A, _, ld = _check_invertible(A)
    logs = log_singular_values(A, logabsdet=logabsdet)
    mean = logs.mean() if A.shape[0] == 2 else (logabsdet if logabsdet is not None else ld) / A.shape[0]
    return float(2.0 * np.sqrt(np.sum((logs - mean) ** 2)))


def dilatation(A):
    """Largest over smallest singular value (max stretch / min stretch)."""
    A, _, _ = _check_invertible(A)
    logs = log_singular_values(A)
    return float(np.exp(logs[0] - logs[-1]))


def beltrami(A):
    """Beltrami coefficient of an orientation-preserving 2x2 linear map.

    Writing ``z -> a z + b conj(z)``, returns ``mu = b / a``.
    """
    A = _as_square(A)
    if A.shape != (2, 2):
        raise DimensionMismatch("Beltrami coefficient needs k = 2")
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    if det <= 0:
        raise OrientationReversing(f"det = {det!r}")
    a = complex(A[0, 0] + A[1, 1], A[1, 0] - A[0, 1]) / 2
    b = complex(A[0, 0] - A[1, 1], A[1, 0] + A[0, 1]) / 2
    return b / a


def dilatation_from_beltrami(mu):
    m = abs(mu)
    return (1 + m) / (1 - m)


def random_orthogonal(k, rng):
    Q, R = np.linalg.qr(rng.standard_normal((k, k)))
    return Q * np.sign(np.diag(R))


def random_invertible(k, rng, spread=1.5, positive=False):
    """``U diag(exp(s)) V`` with ``s`` uniform in [-spread, spread]; condition number <= e^(2 spread)."""
    A = random_orthogonal(k, rng) @ np.diag(np.exp(rng.uniform(-spread, spread, k))) @ random_orthogonal(k, rng)
    if positive and np.linalg.det(A) < 0:
        A[:, 0] = -A[:, 0]
    return A


def random_structure(k, rng, spread=1.5):
    return normalize(random_invertible(k, rng, spread))
