"""Independent numerical oracles used only by the test suite.

These deliberately avoid the production code paths they check: finite
difference weights are generated from scratch, time propagation is a local
Crank-Nicolson loop that also runs backwards, and the Heisenberg coefficients
are produced by a literal dense operator-table recursion.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from math import comb


def fornberg_weights(z, x, m):
    """Finite-difference weights for the m-th derivative at z on nodes x.

    Classic recursion; returns shape (m + 1, len(x)) with row k holding the
    weights of the k-th derivative.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((m + 1, n))
    c1, c4 = 1.0, x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def cn_propagate_density(system, psi0_amp, v_taylor_eval, dt, steps, density_fn):
    """Plain Crank-Nicolson loop (dt may be negative) returning densities.

    v_taylor_eval(t) must return box potential values; density_fn(amp) the
    density vector.  Kept separate from the production propagator on purpose.
    """
    eye = sp.identity(system.dim, format="csr")
    amp = psi0_amp.astype(complex)
    out = [density_fn(amp)]
    for j in range(steps):
        tm = (j + 0.5) * dt
        u = v_taylor_eval(tm)
        H = system.kinetic + sp.diags(system.interaction_diag + system.potential_diag(u))
        amp = spla.splu((eye + 0.5j * dt * H).tocsc()).solve((eye - 0.5j * dt * H) @ amp)
        out.append(density_fn(amp))
    return np.array(out)


def richardson_density_samples(system, psi0_amp, v_taylor_eval, dt, r, density_fn):
    """Densities at t = j*dt for j = -r..r with the leading dt^2 error removed.

    Two Crank-Nicolson runs (dt and dt/2) per direction, Richardson combined.
    """
    samples = {}
    for sign in (+1, -1):
        coarse = cn_propagate_density(system, psi0_amp, v_taylor_eval, sign * dt, r, density_fn)
        fine = cn_propagate_density(
            system, psi0_amp, v_taylor_eval, sign * dt / 2, 2 * r, density_fn
        )
        for j in range(r + 1):
            samples[sign * j] = (4.0 * fine[2 * j] - coarse[j]) / 3.0
    return samples


def fd_density_derivatives(system, psi0_amp, v_taylor_eval, dt, r, max_order, density_fn):
    """Density time derivatives at t=0 by centered high-order stencils on
    Richardson-stabilized propagated samples."""
    samples = richardson_density_samples(system, psi0_amp, v_taylor_eval, dt, r, density_fn)
    offsets = np.arange(-r, r + 1)
    w = fornberg_weights(0.0, offsets * dt, max_order)
    stack = np.array([samples[int(j)] for j in offsets])
    return [w[k] @ stack for k in range(max_order + 1)]


def dense_heisenberg_table(ops, h_coeffs, amp, order):
    """Expectation Taylor coefficients via the literal operator recursion.

    B_0^(j) = A delta_{j0}; B_{k+1}^(j) = B_k^(j+1) + i sum_m binom(j, m)
    [H_m, B_k^(j-m)]; returns [<B_k^(0)>] for k = 0..order, one list per
    operator in ops.  Dense algebra, only viable for tiny systems.
    """
    dim = ops[0].shape[0]

    def hmat(l):
        if l < len(h_coeffs):
            return h_coeffs[l]
        return np.zeros((dim, dim), dtype=complex)

    results = []
    for op in ops:
        table = {(0, j): (op.astype(complex) if j == 0 else np.zeros((dim, dim), complex))
                 for j in range(order + 1)}
        for k in range(order):
            for j in range(order - k):
                acc = table[(k, j + 1)].copy()
                for m in range(j + 1):
                    Hm = hmat(m)
                    B = table[(k, j - m)]
                    acc += comb(j, m) * 1j * (Hm @ B - B @ Hm)
                table[(k + 1, j)] = acc
        results.append(
            [float(np.real(np.vdot(amp, table[(k, 0)] @ amp))) for k in range(order + 1)]
        )
    return results
