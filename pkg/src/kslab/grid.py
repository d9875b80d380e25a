"""Uniform 1D Dirichlet grid, finite-difference stencils and the soft-core kernel.

All fields live on the interior nodes of a bounded interval; the boundary
values are identically zero (hard Dirichlet convention).  Differential
operators use second-order central differences with zero ghost values, and
the weighted div-grad operator is assembled in conservative (flux) form so
that it is exactly symmetric and negative definite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, NumericalError

#: Default lower bound enforced on coefficient densities.  Fields that dip
#: below this floor are rejected rather than regularized.
DENSITY_FLOOR = 1e-8


@dataclass(frozen=True)
class Grid:
    """Uniform interior nodes of the interval (a, b) with Dirichlet-zero ends.

    M interior points, spacing h = (b - a)/(M + 1), nodes x_i = a + i*h for
    i = 1..M.  The endpoints a, b themselves carry no degrees of freedom.
    """

    a: float
    b: float
    M: int

    def __post_init__(self):
        if self.M < 3:
            raise ConfigurationError(
                f"grid needs at least 3 interior points, got M={self.M}"
            )
        if not self.b > self.a:
            raise ConfigurationError(
                f"grid interval is empty or reversed: a={self.a}, b={self.b}"
            )

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.M + 1)

    @cached_property
    def x(self) -> np.ndarray:
        return self.a + self.h * np.arange(1, self.M + 1)

    @property
    def length(self) -> float:
        return self.b - self.a

    def refined(self) -> "Grid":
        """Grid on the same interval with the spacing exactly halved."""
        return Grid(self.a, self.b, 2 * self.M + 1)

    def widened(self, margin: int) -> "Grid":
        """Grid extended by `margin` extra nodes on each side, same spacing."""
        if margin < 1:
            raise ConfigurationError(f"margin must be >= 1, got {margin}")
        h = self.h
        return Grid(self.a - margin * h, self.b + margin * h, self.M + 2 * margin)


@dataclass(eq=False)
class ScalarField:
    """Values of a scalar function on the interior nodes of a grid.

    Real or complex.  Construction rejects non-finite entries, so every
    operation that returns a field keeps the finiteness invariant.
    """

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.dtype.kind not in "fc":
            v = v.astype(float)
        if v.shape != (self.grid.M,):
            raise ConfigurationError(
                f"field has {v.shape} values for a grid with M={self.grid.M}"
            )
        if not np.all(np.isfinite(v)):
            raise NumericalError("field contains non-finite values")
        self.values = v

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.M))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid, np.asarray(fn(grid.x)))

    @property
    def is_real(self) -> bool:
        return self.values.dtype.kind == "f"

    def real_part(self) -> "ScalarField":
        return ScalarField(self.grid, np.real(self.values))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def dot(self, other: "ScalarField") -> float:
        """Discrete L2 inner product, h-weighted."""
        return self.grid.h * float(np.real(np.vdot(self.values, other.values)))

    def norm_l2(self) -> float:
        return float(np.sqrt(self.grid.h) * np.linalg.norm(self.values))

    def norm_inf(self) -> float:
        return float(np.max(np.abs(self.values))) if self.grid.M else 0.0

    def integral(self) -> float:
        return self.grid.h * float(np.sum(self.values.real))

    def __add__(self, other):
        self._check_same_grid(other)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other):
        self._check_same_grid(other)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return ScalarField(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def _check_same_grid(self, other):
        if other.grid != self.grid:
            raise ConfigurationError("fields live on different grids")


@dataclass(eq=False)
class TaylorField:
    """Time-Taylor coefficients of a field: coefficient k is the k-th time
    derivative at t0 (not divided by k!).

    Evaluation at time t sums coefficient_k * (t - t0)**k / k!.
    """

    grid: Grid
    coefficients: list
    t0: float = 0.0

    def __post_init__(self):
        if not self.coefficients:
            raise ConfigurationError("a TaylorField needs at least order 0")
        for k, c in enumerate(self.coefficients):
            if c.grid != self.grid:
                raise ConfigurationError(f"order {k} lives on a different grid")

    @classmethod
    def from_arrays(cls, grid: Grid, arrays, t0: float = 0.0) -> "TaylorField":
        return cls(grid, [ScalarField(grid, np.asarray(a)) for a in arrays], t0)

    @classmethod
    def zeros(cls, grid: Grid, order: int, t0: float = 0.0) -> "TaylorField":
        return cls(grid, [ScalarField.zeros(grid) for _ in range(order + 1)], t0)

    @property
    def max_order(self) -> int:
        return len(self.coefficients) - 1

    def order(self, k: int) -> ScalarField:
        return self.coefficients[k]

    def __getitem__(self, k: int) -> ScalarField:
        return self.coefficients[k]

    def __len__(self) -> int:
        return len(self.coefficients)

    def truncated(self, order: int) -> "TaylorField":
        return TaylorField(self.grid, list(self.coefficients[: order + 1]), self.t0)

    def evaluate(self, t: float) -> ScalarField:
        dt = t - self.t0
        total = np.zeros(self.grid.M, dtype=self.coefficients[0].values.dtype)
        fact = 1.0
        for k, c in enumerate(self.coefficients):
            if k > 0:
                fact *= k
            total = total + c.values * (dt**k / fact)
        return ScalarField(self.grid, total)


def build_grid(a: float, b: float, M: int) -> Grid:
    """Uniform Dirichlet grid with M interior points on (a, b)."""
    return Grid(float(a), float(b), int(M))


def gradient(f: ScalarField) -> ScalarField:
    """Second-order central first derivative with Dirichlet-zero ghosts."""
    v = f.values
    g = np.empty_like(v)
    h2 = 2.0 * f.grid.h
    g[1:-1] = (v[2:] - v[:-2]) / h2
    g[0] = v[1] / h2
    g[-1] = -v[-2] / h2
    return ScalarField(f.grid, g)


def divergence(f: ScalarField) -> ScalarField:
    """1D divergence; identical stencil to `gradient`.

    Kept as a separate name so code that discretizes a div reads as one.
    Note the boundary-adjacent nodes feel the zero ghost values, so the
    divergence of a nonzero constant is nonzero there.
    """
    return gradient(f)


def face_coefficients(n: ScalarField) -> np.ndarray:
    """Midpoint coefficients for a flux-form div(n grad .) operator.

    Interior faces take the arithmetic mean of the adjacent nodal values; the
    two boundary faces take the one-sided nodal value so that n == 1 yields
    the standard second-difference operator.
    Returns M + 1 values (one per face, boundary faces included).
    """
    v = n.values
    faces = np.empty(n.grid.M + 1)
    faces[1:-1] = 0.5 * (v[:-1] + v[1:])
    faces[0] = v[0]
    faces[-1] = v[-1]
    return faces


def divgrad_matrix_from_faces(faces: np.ndarray, grid: Grid) -> sp.csr_matrix:
    """Flux-form operator A with explicit face coefficients.

    (A v)_i = [c_{i+1/2} (v_{i+1} - v_i) - c_{i-1/2} (v_i - v_{i-1})] / h^2
    with Dirichlet-zero ghosts.  A is symmetric; it is negative definite
    whenever all faces are positive.
    """
    faces = np.asarray(faces, dtype=float)
    if faces.shape != (grid.M + 1,):
        raise ConfigurationError(
            f"expected {grid.M + 1} face coefficients, got {faces.shape}"
        )
    h2 = grid.h**2
    lower = faces[1:-1] / h2
    diag = -(faces[:-1] + faces[1:]) / h2
    A = sp.diags([lower, diag, lower], offsets=[-1, 0, 1], format="csr")
    return A


def weighted_divgrad_matrix(
    n: ScalarField, density_floor: float = DENSITY_FLOOR
) -> sp.csr_matrix:
    """Discrete div(n grad .) in conservative form for a positive coefficient n.

    Rejects coefficients that are not real or fall below `density_floor`;
    a vanishing coefficient would break the definiteness that unique
    solvability rests on.
    """
    if not n.is_real:
        raise ConfigurationError("coefficient field must be real")
    nmin = float(np.min(n.values))
    if nmin < density_floor:
        raise ConfigurationError(
            f"coefficient field dips to {nmin:.3e}, below the floor {density_floor:.1e}"
        )
    return divgrad_matrix_from_faces(face_coefficients(n), n.grid)


def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Unit-coefficient Dirichlet second-difference operator (negative definite)."""
    return divgrad_matrix_from_faces(np.ones(grid.M + 1), grid)


def softcore(x, xp, eps: float, g: float):
    """Soft-core pair kernel g / sqrt((x - x')^2 + eps).

    Smooth in both arguments for eps > 0; eps <= 0 is rejected because the
    bare 1/|x - x'| kernel is excluded from every construction here.
    """
    if eps <= 0:
        raise ConfigurationError(f"soft-core regularization requires eps > 0, got {eps}")
    return g / np.sqrt((np.asarray(x) - np.asarray(xp)) ** 2 + eps)


def softcore_force(x, xp, eps: float, g: float):
    """Derivative of the soft-core kernel with respect to its first argument."""
    if eps <= 0:
        raise ConfigurationError(f"soft-core regularization requires eps > 0, got {eps}")
    d = np.asarray(x) - np.asarray(xp)
    return -g * d / (d**2 + eps) ** 1.5
