"""Order-by-order density prediction and density-to-potential inversion.

Forward direction: the density Taylor coefficients obey the exact discrete
recursion

    n^(k+2) = q^(k) + sum_{l=0}^{k} binom(k, l) G_{k-l}[v^(l)]

where q^(k) are Heisenberg coefficients of the stress-force field and
G_j[u] are Heisenberg coefficients of the density response to the potential
u.  Inverse direction: given target coefficients, the l = k term isolates
the unknown order of the effective potential as a weighted Sturm-Liouville
problem whose face coefficients are the bond correlators of the primed
initial state; solving order by order constructs the unique effective
potential either directly (v') or as a correction (v_delta) on top of a
known unprimed potential.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from math import comb

import numpy as np

from .errors import CompatibilityError, ConfigurationError, SolverError
from .grid import DENSITY_FLOOR, ScalarField, TaylorField
from .quantum import (
    ManyBodySystem,
    QuantumState,
    current_divergence,
    density,
    density_taylor,
    q_expectation_taylor,
    transport_faces,
    transport_taylor,
)
from .sturm import SLProblem, check_lax_milgram, solve_sl

COMPATIBILITY_TOL = 1e-8


@dataclass(eq=False)
class InversionResult:
    """Effective-potential orders with per-order solvability diagnostics."""

    v_prime: TaylorField
    v_delta: TaylorField | None
    diagnostics: list
    rhs_fields: list
    provenance: dict = dc_field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "v_prime": [c.values.tolist() for c in self.v_prime.coefficients],
            "v_delta": None,
            "diagnostics": [d.to_json() for d in self.diagnostics],
            "zeta": [z.values.tolist() for z in self.rhs_fields],
            "provenance": dict(self.provenance),
        }
        if self.v_delta is not None:
            out["v_delta"] = [c.values.tolist() for c in self.v_delta.coefficients]
        return out


def _window_faces(system: ManyBodySystem, state: QuantumState) -> np.ndarray:
    """Face coefficients of the window solve, from the state's bond correlators."""
    bonds = transport_faces(state)
    lo = system.margin - 1
    return bonds[lo : lo + system.omega.M + 1]


def predict_density_taylor(
    system: ManyBodySystem,
    psi0: QuantumState,
    v_taylor: TaylorField,
    order: int,
    window: str = "omega",
) -> TaylorField:
    """Density coefficients n^(0)..n^(order+2) from the forward recursion.

    Orders 0 and 1 come from the state directly; each higher order combines
    the stress-force coefficient with the potential-response terms.  Cross
    check against the direct Heisenberg route of the density operator: the
    two agree to roundoff.
    """
    if v_taylor.max_order < order:
        raise ConfigurationError(
            f"need potential orders up to {order}, have {v_taylor.max_order}"
        )
    base = density_taylor(system, psi0, v_taylor, 1, window=window)
    q_t = q_expectation_taylor(system, psi0, v_taylor, order, window=window)
    responses = [
        transport_taylor(system, psi0, v_taylor[l], v_taylor, order - l, window=window)
        for l in range(order + 1)
    ]
    grid = base.grid
    coeffs = [base[0], base[1]]
    for k in range(order + 1):
        acc = q_t[k].values.copy()
        for l in range(k + 1):
            acc = acc + comb(k, l) * responses[l][k - l].values
        coeffs.append(ScalarField(grid, acc))
    return TaylorField(grid, coeffs, t0=psi0.time)


def _check_compatibility(
    system: ManyBodySystem,
    psi0_prime: QuantumState,
    target: TaylorField,
    tol: float,
):
    """Initial-condition compatibility: density and density velocity match."""
    n0p = system.restrict_to_window(density(psi0_prime))
    scale = max(1.0, target[0].norm_inf())
    d0 = float(np.max(np.abs(n0p.values - target[0].values)))
    if d0 > tol * scale:
        raise CompatibilityError(
            f"initial density compatibility violated: primed state differs from "
            f"the target order-0 density by {d0:.3e} (tolerance {tol * scale:.1e})"
        )
    if target.max_order >= 1:
        n1p = system.restrict_to_window(-1.0 * current_divergence(psi0_prime))
        scale1 = max(1.0, target[1].norm_inf())
        d1 = float(np.max(np.abs(n1p.values - target[1].values)))
        if d1 > tol * scale1:
            raise CompatibilityError(
                f"density-velocity compatibility violated: primed state differs "
                f"from the target order-1 density by {d1:.3e}"
            )


def _solve_order(
    system: ManyBodySystem,
    n0: ScalarField,
    faces: np.ndarray,
    zeta: ScalarField,
    k: int,
    tol: float,
    trials: int,
    seed: int,
    density_floor: float,
):
    """One Sturm-Liouville solve with its solvability audit."""
    audit = check_lax_milgram(n0, zeta, trials=trials, seed=seed + k)
    if audit.coercivity_c <= 0.0 or audit.coercivity_violations:
        raise SolverError(
            f"order {k}: coercivity audit failed (c = {audit.coercivity_c:.3e}, "
            f"violations = {audit.coercivity_violations})"
        )
    problem = SLProblem(n=n0, zeta=zeta, faces=faces, density_floor=density_floor)
    try:
        v_k, diag = solve_sl(problem, tol=tol)
    except SolverError as exc:
        raise SolverError(f"order {k}: {exc}", exc.residual_history)
    diag.hoelder_const = audit.hoelder_const
    diag.hoelder_alpha = audit.hoelder_alpha
    diag.c1_proxy = audit.c1_proxy
    diag.coercivity_violations = audit.coercivity_violations
    diag.continuity_violations = audit.continuity_violations
    diag.trials = audit.trials
    diag.classical_proxy = audit.classical_proxy
    diag.classical_note = audit.classical_note
    return v_k, diag


def invert_potential_taylor(
    target: TaylorField,
    system: ManyBodySystem,
    psi0_prime: QuantumState,
    order: int,
    tol: float = 1e-12,
    compatibility_tol: float = COMPATIBILITY_TOL,
    density_floor: float = DENSITY_FLOOR,
    lax_milgram_trials: int = 16,
    seed: int = 0,
) -> InversionResult:
    """Construct the effective potential v' of the (primed) system so that its
    density Taylor coefficients match the target, order by order.

    At order k the stress-force coefficient q'^(k) uses only the already
    constructed orders v'^(0)..v'^(k-1), so the right-hand side is fully
    known before each solve; every order is a coercive weighted
    Sturm-Liouville problem with the same operator and hence has exactly one
    solution.  Raises with the failing order on solver breakdown, and checks
    the initial-condition compatibility before starting.
    """
    if target.grid != system.omega:
        raise ConfigurationError("target density must live on the window grid")
    if target.max_order < order + 2:
        raise ConfigurationError(
            f"inversion to order {order} needs target orders up to {order + 2}, "
            f"have {target.max_order}"
        )
    _check_compatibility(system, psi0_prime, target, compatibility_tol)

    n0 = system.restrict_to_window(density(psi0_prime))
    if float(np.min(n0.values)) < density_floor:
        raise CompatibilityError(
            f"initial density dips below the floor {density_floor:.1e} on the window"
        )
    faces = _window_faces(system, psi0_prime)

    built: list[ScalarField] = []
    diagnostics = []
    rhs_fields = []
    for k in range(order + 1):
        v_partial = (
            TaylorField(system.omega, built, t0=psi0_prime.time) if built else None
        )
        q_k = q_expectation_taylor(system, psi0_prime, v_partial, k, window="omega")[k]
        acc = target[k + 2].values - q_k.values
        for l in range(k):
            resp = transport_taylor(
                system, psi0_prime, built[l], v_partial, k - l, window="omega"
            )
            acc = acc - comb(k, l) * resp[k - l].values
        zeta = ScalarField(system.omega, acc)
        v_k, diag = _solve_order(
            system, n0, faces, zeta, k, tol, lax_milgram_trials, seed, density_floor
        )
        built.append(v_k)
        diagnostics.append(diag)
        rhs_fields.append(zeta)

    v_prime = TaylorField(system.omega, built, t0=psi0_prime.time)
    return InversionResult(
        v_prime=v_prime, v_delta=None, diagnostics=diagnostics, rhs_fields=rhs_fields
    )


def delta_potential_taylor(
    unprimed_system: ManyBodySystem,
    psi0: QuantumState,
    v_taylor: TaylorField,
    system: ManyBodySystem,
    psi0_prime: QuantumState,
    order: int,
    tol: float = 1e-12,
    compatibility_tol: float = COMPATIBILITY_TOL,
    density_floor: float = DENSITY_FLOOR,
    lax_milgram_trials: int = 16,
    seed: int = 0,
) -> InversionResult:
    """Construct the correction v_delta with v' = v + v_delta directly from the
    difference of the two systems' recursions, without forming the target
    density explicitly.

    The right-hand side at order k is the stress-force mismatch q^(k) - q'^(k)
    plus the difference of the two systems' responses to the already known
    potential orders.  The response difference includes the order-k unprimed
    potential: the two discrete response operators differ by O(h^2) even at
    equal densities (they weight by each state's own bond correlators), and
    keeping that term is what makes v + v_delta agree with the directly
    inverted v' to solver tolerance rather than to discretization order.

    The unprimed potential enters the primed system at its full box-wide
    values (v' = v + v_delta with the correction supported on the window), so
    gauge shifts of v by a spatial constant leave every v_delta order
    unchanged.  The returned v_prime holds the window restriction.
    """
    if v_taylor.max_order < order:
        raise ConfigurationError(
            f"need unprimed potential orders up to {order}, have {v_taylor.max_order}"
        )
    target01 = density_taylor(unprimed_system, psi0, v_taylor, 1, window="omega")
    _check_compatibility(system, psi0_prime, target01, compatibility_tol)

    n0 = system.restrict_to_window(density(psi0_prime))
    if float(np.min(n0.values)) < density_floor:
        raise CompatibilityError(
            f"initial density dips below the floor {density_floor:.1e} on the window"
        )
    faces = _window_faces(system, psi0_prime)
    v_box = [system.extend_to_box(unprimed_system.extend_to_box(v_taylor[l]))
             for l in range(order + 1)]
    v_omega = [system.restrict_to_window(f) for f in v_box]

    built: list[ScalarField] = []
    diagnostics = []
    rhs_fields = []
    for k in range(order + 1):
        v_prime_partial = (
            TaylorField(
                system.box,
                [v_box[l] + system.extend_to_box(built[l]) for l in range(k)],
                t0=psi0_prime.time,
            )
            if k
            else None
        )
        v_unprimed_partial = v_taylor.truncated(max(k - 1, 0)) if k else None

        q_k = q_expectation_taylor(
            unprimed_system, psi0, v_unprimed_partial, k, window="omega"
        )[k]
        qp_k = q_expectation_taylor(
            system, psi0_prime, v_prime_partial, k, window="omega"
        )[k]
        acc = q_k.values - qp_k.values

        # response of each system to the order-k unprimed potential (l = k term)
        resp_un = transport_taylor(
            unprimed_system, psi0, v_taylor[k], v_unprimed_partial, 0, window="omega"
        )[0]
        resp_pr = transport_taylor(
            system, psi0_prime, v_box[k], v_prime_partial, 0, window="omega"
        )[0]
        acc = acc + resp_un.values - resp_pr.values

        for l in range(k):
            r_un = transport_taylor(
                unprimed_system, psi0, v_taylor[l], v_unprimed_partial, k - l,
                window="omega",
            )[k - l]
            r_pr = transport_taylor(
                system, psi0_prime, v_box[l] + system.extend_to_box(built[l]),
                v_prime_partial, k - l, window="omega",
            )[k - l]
            acc = acc + comb(k, l) * (r_un.values - r_pr.values)

        zeta = ScalarField(system.omega, acc)
        v_k, diag = _solve_order(
            system, n0, faces, zeta, k, tol, lax_milgram_trials, seed, density_floor
        )
        built.append(v_k)
        diagnostics.append(diag)
        rhs_fields.append(zeta)

    v_delta = TaylorField(system.omega, built, t0=psi0_prime.time)
    v_prime = TaylorField(
        system.omega,
        [v_omega[k] + built[k] for k in range(order + 1)],
        t0=psi0_prime.time,
    )
    return InversionResult(
        v_prime=v_prime, v_delta=v_delta, diagnostics=diagnostics, rhs_fields=rhs_fields
    )
