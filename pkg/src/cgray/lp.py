"""Dense tableau simplex with Bland's anti-cycling rule.

Only the small problems arising from branch-point geometry go through here
(a handful of variables, a few dozen constraints), so a dense tableau is fine.
"""

import numpy as np

__all__ = ["LPResult", "UnboundedError", "maximize"]


class UnboundedError(ArithmeticError):
    pass


class LPResult:
    def __init__(self, x, value, iterations):
        self.x = x
        self.value = value
        self.iterations = iterations

    def __repr__(self):
        return f"LPResult(value={self.value!r}, iterations={self.iterations})"


def maximize(c, A, b, tol=1e-12, max_iter=10_000):
    """Maximize ``c @ x`` subject to ``A @ x <= b`` and ``x >= 0``.

    ``b`` must be componentwise nonnegative so that the slack basis at the
    origin is feasible; no phase one is performed.

    Entering variable is the lowest-index column with positive reduced cost,
    leaving variable the lowest-index basic variable among ratio-test ties.
    """
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if b.shape != (m,) or c.shape != (n,):
        raise ValueError("inconsistent LP dimensions")
    if np.any(b < 0):
        raise ValueError("origin must be feasible (b >= 0)")

    # rows 0..m-1: constraints, last row: reduced costs (c - z)
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = c
    basis = list(range(n, n + m))

    it = 0
    while True:
        entering = next((j for j in range(n + m) if T[m, j] > tol), None)
        if entering is None:
            break
        if it >= max_iter:
            raise RuntimeError("simplex iteration limit reached")
        col = T[:m, entering]
        rows = np.flatnonzero(col > tol)
        if rows.size == 0:
            raise UnboundedError("objective is unbounded")
        ratios = T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + tol * max(1.0, abs(best))]
        leave = min(ties, key=lambda r: basis[r])
        T[leave] /= T[leave, entering]
        for r in range(m + 1):
            if r != leave and T[r, entering] != 0.0:
                T[r] -= T[r, entering] * T[leave]
        basis[leave] = entering
        it += 1

    x = np.zeros(n + m)
    for r, var in enumerate(basis):
        x[var] = T[r, -1]
    return LPResult(x[:n], float(c @ x[:n]), it)
