"""Run configurations: TOML schema, validation, and potential expressions.

A run configuration is a TOML document with the blocks grid, system,
potential, inversion, experiment and output.  Potentials are given as Taylor
coefficients in time, each a closed-form expression in x over a small
arithmetic grammar (+, -, *, /, ^, sin, cos, exp, numeric constants, pi and
x); they are evaluated on the window nodes and zero-extended onto the box.
Every stochastic choice traces to the experiment seed, and the hash of the
parsed document is embedded in every output artifact.
"""

from __future__ import annotations

import ast
import hashlib
import json
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .grid import DENSITY_FLOOR, Grid, ScalarField, TaylorField, build_grid
from .quantum import STATISTICS, ManyBodySystem, build_system

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1

EXPERIMENT_KINDS = (
    "forward",
    "invert",
    "roundtrip",
    "independence",
    "diagnose-sl",
    "oracle-compare",
)

_ALLOWED_CALLS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_ALLOWED_NAMES = {"pi": np.pi}


def evaluate_expression(expr: str, x: np.ndarray) -> np.ndarray:
    """Evaluate a potential expression on the nodes x.

    Grammar: +, -, *, /, ^ (power, ** also accepted), unary minus, sin, cos,
    exp, numeric literals, pi, and the coordinate x.  Anything else is
    rejected with the offending construct named.
    """
    # ^ must bind like a power, not like Python's xor, so rewrite it
    try:
        tree = ast.parse(expr.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"cannot parse expression {expr!r}: {exc.msg}")

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant):
            if isinstance(node.value, (int, float)):
                return float(node.value)
            raise ConfigurationError(f"non-numeric constant {node.value!r} in {expr!r}")
        if isinstance(node, ast.Name):
            if node.id == "x":
                return x
            if node.id in _ALLOWED_NAMES:
                return _ALLOWED_NAMES[node.id]
            raise ConfigurationError(f"unknown name {node.id!r} in {expr!r}")
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = walk(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            a, b = walk(node.left), walk(node.right)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            if isinstance(node.op, ast.Mult):
                return a * b
            if isinstance(node.op, ast.Div):
                return a / b
            if isinstance(node.op, ast.Pow):
                return a**b
            raise ConfigurationError(
                f"operator {type(node.op).__name__} not allowed in {expr!r}"
            )
        if isinstance(node, ast.Call):
            if (
                isinstance(node.func, ast.Name)
                and node.func.id in _ALLOWED_CALLS
                and len(node.args) == 1
                and not node.keywords
            ):
                return _ALLOWED_CALLS[node.func.id](walk(node.args[0]))
            raise ConfigurationError(f"call not allowed in {expr!r}")
        raise ConfigurationError(
            f"construct {type(node).__name__} not allowed in {expr!r}"
        )

    values = walk(tree)
    values = np.asarray(values, dtype=float)
    if values.shape == ():
        values = np.full_like(x, float(values))
    if not np.all(np.isfinite(values)):
        raise ConfigurationError(f"expression {expr!r} evaluates to non-finite values")
    return values


@dataclass
class GridBlock:
    a: float
    b: float
    M: int
    margin: int = 6


@dataclass
class SystemBlock:
    particles: int = 2
    statistics: str = "fermion-singlet"
    interaction: str = "softcore"
    strength: float = 1.0
    eps: float = 1.0


@dataclass
class PotentialBlock:
    orders: list = dc_field(default_factory=lambda: ["0"])
    values: list | None = None  # tabulated alternative: one row of M floats per order


@dataclass
class InversionBlock:
    K: int = 2
    solver_tol: float = 1e-12
    m_floor: float = DENSITY_FLOOR
    compatibility_tol: float = 1e-8
    lax_milgram_trials: int = 16
    residual_bound: float = 1e-10


@dataclass
class ExperimentBlock:
    kind: str = "roundtrip"
    T: float = 0.2
    dt: float = 1e-3
    seed: int = 0
    options: dict = dc_field(default_factory=dict)


@dataclass
class OutputBlock:
    directory: str = "out"
    formats: list = dc_field(default_factory=lambda: ["json", "csv"])


@dataclass
class RunConfig:
    grid: GridBlock
    system: SystemBlock
    potential: PotentialBlock
    inversion: InversionBlock
    experiment: ExperimentBlock
    output: OutputBlock
    raw: dict = dc_field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @property
    def steps(self) -> int:
        return max(int(round(self.experiment.T / self.experiment.dt)), 4)

    def build_omega(self) -> Grid:
        return build_grid(self.grid.a, self.grid.b, self.grid.M)

    def build_system(self, strength: float | None = None) -> ManyBodySystem:
        g = self.system.strength if strength is None else strength
        if self.system.interaction == "none":
            g = 0.0
        return build_system(
            self.build_omega(),
            margin=self.grid.margin,
            n_particles=self.system.particles,
            statistics=self.system.statistics,
            interaction_strength=g,
            interaction_eps=self.system.eps,
        )

    def build_potential(self, grid: Grid | None = None) -> TaylorField:
        grid = grid or self.build_omega()
        if self.potential.values is not None:
            fields = [
                ScalarField(grid, np.asarray(row, dtype=float))
                for row in self.potential.values
            ]
        else:
            fields = [
                ScalarField(grid, evaluate_expression(e, grid.x))
                for e in self.potential.orders
            ]
        return TaylorField(grid, fields)

    @property
    def potential_order_count(self) -> int:
        if self.potential.values is not None:
            return len(self.potential.values)
        return len(self.potential.orders)


def _require(table: dict, block: str, key: str, kind, default=None):
    if key not in table:
        if default is not None:
            return default
        raise ConfigurationError(f"[{block}.{key}] is required")
    value = table[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigurationError(
            f"[{block}.{key}] expected {kind.__name__}, got {type(value).__name__}"
        )
    return value


def validate_config(doc: dict) -> RunConfig:
    """Validate a parsed document and assemble a RunConfig.

    Violations name the offending block and field.  Cross-field rules: the
    grid needs at least 3 interior points and a positive interval; soft-core
    interactions with nonzero strength need eps > 0; the experiment kind
    must be one of the known pipelines.
    """
    known = {"grid", "system", "potential", "inversion", "experiment", "output", "meta"}
    for key in doc:
        if key not in known:
            raise ConfigurationError(f"[{key}] unknown block")

    g = doc.get("grid", {})
    grid = GridBlock(
        a=_require(g, "grid", "a", float),
        b=_require(g, "grid", "b", float),
        M=_require(g, "grid", "M", int),
        margin=_require(g, "grid", "margin", int, default=6),
    )
    if grid.M < 3:
        raise ConfigurationError(f"[grid.M] must be at least 3, got {grid.M}")
    if not grid.b > grid.a:
        raise ConfigurationError(f"[grid.b] must exceed grid.a, got ({grid.a}, {grid.b})")
    if grid.margin < 1:
        raise ConfigurationError(f"[grid.margin] must be at least 1, got {grid.margin}")

    s = doc.get("system", {})
    system = SystemBlock(
        particles=_require(s, "system", "particles", int, default=2),
        statistics=_require(s, "system", "statistics", str, default="fermion-singlet"),
        interaction=_require(s, "system", "interaction", str, default="softcore"),
        strength=_require(s, "system", "strength", float, default=1.0),
        eps=_require(s, "system", "eps", float, default=1.0),
    )
    if system.statistics not in STATISTICS:
        raise ConfigurationError(
            f"[system.statistics] must be one of {STATISTICS}, got {system.statistics!r}"
        )
    if system.interaction not in ("softcore", "none"):
        raise ConfigurationError(
            f"[system.interaction] must be 'softcore' or 'none', got {system.interaction!r}"
        )
    if system.interaction == "softcore" and system.strength != 0.0 and system.eps <= 0:
        raise ConfigurationError(
            "[system.eps] soft-core interactions require eps > 0; the bare kernel "
            "is excluded"
        )

    p = doc.get("potential", {})
    values = p.get("values")
    if values is not None:
        if not isinstance(values, list) or not values:
            raise ConfigurationError("[potential.values] must be a non-empty list of rows")
        for k, row in enumerate(values):
            if not isinstance(row, list) or len(row) != grid.M:
                raise ConfigurationError(
                    f"[potential.values] row {k} must hold exactly grid.M={grid.M} numbers"
                )
            if not all(isinstance(v, (int, float)) for v in row):
                raise ConfigurationError(f"[potential.values] row {k} must be numeric")
        potential = PotentialBlock(orders=[], values=[list(map(float, r)) for r in values])
    else:
        orders = _require(p, "potential", "orders", list, default=["0"])
        if not orders or not all(isinstance(e, str) for e in orders):
            raise ConfigurationError(
                "[potential.orders] must be a non-empty list of strings"
            )
        potential = PotentialBlock(orders=list(orders))

    i = doc.get("inversion", {})
    inversion = InversionBlock(
        K=_require(i, "inversion", "K", int, default=2),
        solver_tol=_require(i, "inversion", "solver_tol", float, default=1e-12),
        m_floor=_require(i, "inversion", "m_floor", float, default=DENSITY_FLOOR),
        compatibility_tol=_require(i, "inversion", "compatibility_tol", float, default=1e-8),
        lax_milgram_trials=_require(i, "inversion", "lax_milgram_trials", int, default=16),
        residual_bound=_require(i, "inversion", "residual_bound", float, default=1e-10),
    )
    if inversion.K < 0:
        raise ConfigurationError(f"[inversion.K] must be non-negative, got {inversion.K}")
    if inversion.solver_tol <= 0:
        raise ConfigurationError("[inversion.solver_tol] must be positive")

    e = doc.get("experiment", {})
    experiment = ExperimentBlock(
        kind=_require(e, "experiment", "kind", str, default="roundtrip"),
        T=_require(e, "experiment", "T", float, default=0.2),
        dt=_require(e, "experiment", "dt", float, default=1e-3),
        seed=_require(e, "experiment", "seed", int, default=0),
        options={k: v for k, v in e.items() if k not in ("kind", "T", "dt", "seed")},
    )
    if experiment.kind not in EXPERIMENT_KINDS:
        raise ConfigurationError(
            f"[experiment.kind] must be one of {EXPERIMENT_KINDS}, got {experiment.kind!r}"
        )
    if experiment.dt <= 0:
        raise ConfigurationError("[experiment.dt] must be positive")
    if experiment.T <= 0:
        raise ConfigurationError("[experiment.T] must be positive")

    o = doc.get("output", {})
    output = OutputBlock(
        directory=_require(o, "output", "directory", str, default="out"),
        formats=_require(o, "output", "formats", list, default=["json", "csv"]),
    )
    for fmt in output.formats:
        if fmt not in ("json", "csv"):
            raise ConfigurationError(f"[output.formats] unknown format {fmt!r}")

    cfg = RunConfig(grid, system, potential, inversion, experiment, output, raw=doc)
    # surface expression errors at validation time
    cfg.build_potential()
    # a potential must exist for every inversion order requested
    if cfg.potential_order_count < inversion.K + 1 and experiment.kind in (
        "invert", "roundtrip", "independence", "oracle-compare",
    ):
        raise ConfigurationError(
            f"[potential.orders] inversion to K={inversion.K} needs at least "
            f"{inversion.K + 1} potential orders, got {cfg.potential_order_count}"
        )
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}")
    return validate_config(doc)
