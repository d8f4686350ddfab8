"""Compiled kernels for very long scalar linear problems (N up to ~1e8).

numba is imported lazily so that the rest of the package does not pay the
import cost.
"""
import numpy as np

_kernels = None


def _build():
    import numba

    @numba.njit(cache=True)
    def thomas_constant(sub, diag, sup, last_sub, last_diag, b, cache):
        """Solve a constant-coefficient tridiagonal system in place.

        Rows 0..n-2 are ``(sub, diag, sup)``, the last row ``(last_sub, last_diag)``.
        The forward coefficients c'_i converge geometrically; they are stored
        in ``cache`` until they stop changing and reused afterwards.
        """
        n = b.size
        m = cache.size
        cp = sup / diag
        cache[0] = cp
        b[0] = b[0] / diag
        frozen = -1
        for i in range(1, n - 1):
            den = diag - sub * cp
            new = sup / den
            b[i] = (b[i] - sub * b[i - 1]) / den
            if frozen < 0:
                if new == cp or i >= m - 1:
                    frozen = i
                if i < m:
                    cache[i] = new
            cp = new
        den = last_diag - last_sub * cp
        b[n - 1] = (b[n - 1] - last_sub * b[n - 2]) / den
        for i in range(n - 2, -1, -1):
            c = cache[i] if (frozen < 0 or i <= frozen) else cache[frozen]
            b[i] = b[i] - c * b[i + 1]
        return frozen

    @numba.njit(cache=True)
    def sup_error_exp(u, tau, rate, u0):
        """max_i |u_i - u0 exp(-rate t_i)|."""
        err = 0.0
        for i in range(u.size):
            e = abs(u[i] - u0 * np.exp(-rate * i * tau))
            if e > err:
                err = e
        return err

    @numba.njit(cache=True)
    def linear_residual(u, sub, diag, sup, last_sub, last_diag, b0):
        """max |A u_free - b| for the constant-coefficient system (u includes u_0)."""
        n = u.size - 1
        res = abs(diag * u[1] + sup * u[2] - b0)
        for k in range(2, n):
            r = abs(sub * u[k - 1] + diag * u[k] + sup * u[k + 1])
            if r > res:
                res = r
        r = abs(last_sub * u[n - 1] + last_diag * u[n])
        return max(res, r)

    return thomas_constant, sup_error_exp, linear_residual


def kernels():
    global _kernels
    if _kernels is None:
        _kernels = _build()
    return _kernels


def solve_constant_tridiagonal(sub, diag, sup, last_sub, last_diag, rhs0, N, u0):
    """Solution ``u_0..u_N`` of the scalar first-order system with rhs ``(rhs0, 0, ...)``.

    Only one array of length ``N + 1`` is allocated.
    """
    thomas, _, _ = kernels()
    u = np.zeros(N + 1)
    u[0] = u0
    b = u[1:]
    b[0] = rhs0
    cache = np.empty(min(N, 200_000))
    frozen = thomas(sub, diag, sup, last_sub, last_diag, b, cache)
    if frozen < 0 or frozen >= cache.size - 1:
        # coefficients did not settle; redo with a full cache
        b[:] = 0.0
        b[0] = rhs0
        cache = np.empty(N)
        thomas(sub, diag, sup, last_sub, last_diag, b, cache)
    return u
