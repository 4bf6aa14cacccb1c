"""Sparse Cholesky with reverse Cuthill-McKee ordering (banded LAPACK factorization)."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded
from scipy.sparse.csgraph import reverse_cuthill_mckee


class NonSPDError(ArithmeticError):
    pass


class CholeskyFactor:
    """A = P^T L L^T P with P the RCM permutation; L stored in LAPACK band form."""

    def __init__(self, A):
        A = sp.csr_matrix(A)
        n = A.shape[0]
        if n == 0:
            raise ValueError("empty matrix")
        self.n = n
        self.perm = np.asarray(reverse_cuthill_mckee(A, symmetric_mode=True), dtype=np.int64)
        Ap = A[self.perm][:, self.perm].tocoo()
        upper = Ap.col >= Ap.row
        r, c, v = Ap.row[upper], Ap.col[upper], Ap.data[upper]
        self.bandwidth = int(np.max(c - r)) if len(r) else 0
        ab = np.zeros((self.bandwidth + 1, n))
        ab[self.bandwidth + r - c, c] = v
        try:
            self._cb = cholesky_banded(ab, lower=False, check_finite=True)
        except (LinAlgError, ValueError) as exc:
            raise NonSPDError(f"Cholesky factorization failed: {exc}") from None

    def solve(self, b: np.ndarray) -> np.ndarray:
        bp = np.asarray(b, dtype=float)[self.perm]
        xp = cho_solve_banded((self._cb, False), bp, check_finite=False)
        x = np.empty_like(xp)
        x[self.perm] = xp
        return x


class DenseLeastSquares:
    """Fallback coarse solver for singular (e.g. unpinned Neumann) coarse problems."""

    def __init__(self, A):
        self.pinv = np.linalg.pinv(sp.csr_matrix(A).toarray(), hermitian=True)

    def solve(self, b):
        return self.pinv @ b


def coarse_solver(A, dense_limit: int = 4000):
    try:
        return CholeskyFactor(A)
    except NonSPDError:
        if A.shape[0] > dense_limit:
            raise
        return DenseLeastSquares(A)
