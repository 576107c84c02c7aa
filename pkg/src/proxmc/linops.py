"""Second-difference operator, its decimations, and invertible augmentations.

The penalty operator is the (T-2) x T banded matrix with stencil
(1, -2, 1)/sqrt(6) on each row, so every row has unit Euclidean norm.
Two square augmentations make it invertible: variant ``I`` prepends the
rows (1, 0, ...) and (-2, 1, 0, ...)/sqrt(5), variant ``O`` prepends the
same two rows after projecting them onto the orthogonal complement of the
stencil rows and orthonormalizing.  Stride-3 row subsets give semi-
orthogonal decimations (non-overlapping stencils).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, null_space, solve_banded

from .errors import ConfigurationError, ConstructionError

SQRT6 = np.sqrt(6.0)
SQRT5 = np.sqrt(5.0)


@dataclass(frozen=True)
class SecondDiffOp:
    """Banded second-difference operator, (T-2) x T, unit-norm rows."""

    T: int

    @property
    def shape(self):
        return (self.T - 2, self.T)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return (x[:-2] - 2.0 * x[1:-1] + x[2:]) / SQRT6

    def apply_transpose(self, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(self.T)
        out[:-2] += y
        out[1:-1] -= 2.0 * y
        out[2:] += y
        return out / SQRT6

    def dense(self):
        M = np.zeros(self.shape)
        for k in range(self.T - 2):
            M[k, k : k + 3] = (1.0, -2.0, 1.0)
        return M / SQRT6


def build_D(T: int) -> SecondDiffOp:
    """Second-difference operator for series of length ``T`` (T >= 3)."""
    if T < 3:
        raise ConfigurationError(f"second-difference operator needs T >= 3, got {T}")
    return SecondDiffOp(T=T)


@dataclass(frozen=True)
class DecimatedDiffOp:
    """Rows i, i+3, i+6, ... (1-based) of the second-difference operator.

    Stride-3 rows have disjoint stencils, so A A^T is the identity.
    The row set may be empty for very small T.
    """

    i: int
    T: int
    row_indices: np.ndarray = field(repr=False)

    @property
    def n_rows(self):
        return len(self.row_indices)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        k = self.row_indices
        return (x[k] - 2.0 * x[k + 1] + x[k + 2]) / SQRT6

    def apply_transpose(self, y):
        # index sets k, k+1, k+2 fall in distinct residue classes mod 3
        y = np.asarray(y, dtype=float)
        out = np.zeros(self.T)
        k = self.row_indices
        out[k] = y
        out[k + 1] = -2.0 * y
        out[k + 2] = y
        out /= SQRT6
        return out

    def dense(self):
        return build_D(self.T).dense()[self.row_indices]


def build_decimated(i: int, T: int) -> DecimatedDiffOp:
    """Stride-3 decimation ``i`` in {1, 2, 3} of the second-difference rows."""
    if i not in (1, 2, 3):
        raise ConfigurationError(f"decimation index must be 1, 2 or 3, got {i}")
    if T < 3:
        raise ConfigurationError(f"decimated operator needs T >= 3, got {T}")
    return DecimatedDiffOp(i=i, T=T, row_indices=np.arange(i - 1, T - 2, 3))


@dataclass(frozen=True)
class AugmentedDiffOp:
    """Invertible T x T completion of a row-deficient penalty operator.

    ``u_rows`` holds the appended completion block (the first ``n_keep``
    rows of ``dbar``), ``lower`` the operator being completed; rows below
    the completion block reproduce ``lower`` with identical floating-point
    operations.  The dense inverse is cached at construction.
    """

    variant: str
    T: int
    dbar: np.ndarray = field(repr=False)
    dbar_inv: np.ndarray = field(repr=False)
    u_rows: np.ndarray = field(repr=False)
    lower: object = field(repr=False, default=None)

    @property
    def n_keep(self):
        return self.u_rows.shape[0]

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return np.concatenate([self.u_rows @ x, self.lower.apply(x)])

    def apply_transpose(self, x):
        x = np.asarray(x, dtype=float)
        k = self.n_keep
        return self.u_rows.T @ x[:k] + self.lower.apply_transpose(x[k:])

    def solve(self, x):
        return self.dbar_inv @ np.asarray(x, dtype=float)

    def solve_transpose(self, x):
        return self.dbar_inv.T @ np.asarray(x, dtype=float)

    def solve_banded_lower(self, x):
        """Forward substitution for the lower-triangular variant ``I``."""
        if self.variant != "I":
            raise ConfigurationError("banded forward substitution requires variant I")
        T = self.T
        ab = np.zeros((3, T))
        ab[0] = np.diag(self.dbar)
        ab[1, :-1] = np.diag(self.dbar, -1)
        ab[2, :-2] = np.diag(self.dbar, -2)
        return solve_banded((2, 0), ab, np.asarray(x, dtype=float))


def _project_out_rowspan(v, D_dense, ddt_chol):
    """Remove the component of v lying in the row span of D."""
    return v - D_dense.T @ cho_solve(ddt_chol, D_dense @ v)


def build_augmented(T: int, variant: str) -> AugmentedDiffOp:
    """Augment the second-difference operator into an invertible square matrix.

    Variant ``I`` prepends (1, 0, ...) and (-2, 1, 0, ...)/sqrt(5).  Variant
    ``O`` replaces those two rows by their orthogonal projections onto the
    complement of the difference rows (classical Gram-Schmidt with one
    re-orthogonalization pass), normalized; the completion block U then
    satisfies U D^T = 0 and U U^T = I.
    """
    variant = variant.upper()
    if variant not in ("I", "O"):
        raise ConfigurationError(f"augmentation variant must be 'I' or 'O', got {variant!r}")
    D = build_D(T)
    Dd = D.dense()
    r1 = np.zeros(T)
    r1[0] = 1.0
    r2 = np.zeros(T)
    r2[0], r2[1] = -2.0 / SQRT5, 1.0 / SQRT5
    if variant == "I":
        U = np.vstack([r1, r2])
    else:
        chol = cho_factor(Dd @ Dd.T)
        u1 = _project_out_rowspan(r1, Dd, chol)
        u1 = _project_out_rowspan(u1, Dd, chol)
        n1 = np.linalg.norm(u1)
        if n1 < 1e-10:
            raise ConstructionError("first completion row vanished during orthogonalization")
        u1 /= n1
        u2 = _project_out_rowspan(r2, Dd, chol)
        u2 = _project_out_rowspan(u2, Dd, chol)
        u2 -= (u1 @ u2) * u1
        u2 -= (u1 @ u2) * u1
        n2 = np.linalg.norm(u2)
        if n2 < 1e-10:
            raise ConstructionError("second completion row vanished during orthogonalization")
        u2 /= n2
        U = np.vstack([u1, u2])
    M = np.vstack([U, Dd])
    return AugmentedDiffOp(variant=variant, T=T, dbar=M, dbar_inv=np.linalg.inv(M), u_rows=U, lower=D)


def augment_decimated(dec: DecimatedDiffOp) -> AugmentedDiffOp:
    """Complete a stride-3 decimation into an invertible square matrix.

    The completion rows form an orthonormal basis of the null space of the
    decimated operator, so U A^T = 0 and U U^T = I hold by construction and
    the square matrix satisfies the drift-equality hypotheses exactly.
    """
    A = dec.dense()
    U = null_space(A).T
    if U.shape[0] + A.shape[0] != dec.T:
        raise ConstructionError("null-space completion has the wrong dimension")
    M = np.vstack([U, A])
    return AugmentedDiffOp(variant="completion", T=dec.T, dbar=M, dbar_inv=np.linalg.inv(M), u_rows=U, lower=dec)


def condition_number(M, n_iter: int = 200, seed: int = 0) -> float:
    """2-norm condition number via power iteration on M^T M and its inverse."""
    M = np.asarray(M, dtype=float)
    rng = np.random.default_rng(seed)
    Minv = np.linalg.inv(M)

    def top_sv(A):
        v = rng.standard_normal(A.shape[1])
        v /= np.linalg.norm(v)
        s = 0.0
        for _ in range(n_iter):
            w = A.T @ (A @ v)
            s = np.linalg.norm(w)
            v = w / s
        return np.sqrt(s)

    return top_sv(M) * top_sv(Minv)
