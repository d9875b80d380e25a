import numpy as np
import pytest

from kslab.grid import ScalarField, TaylorField, build_grid
from kslab import quantum as qt


@pytest.fixture(scope="session")
def reference():
    """The shipped reference setup: soft-core pair (g=1, eps=1) in a
    harmonic well with a three-order driving potential."""
    omega = build_grid(-3.5, 3.5, 27)
    x = omega.x
    v = TaylorField(
        omega,
        [
            ScalarField(omega, 0.5 * x**2),
            ScalarField(omega, 0.35 * x * np.exp(-((x / 2.2) ** 2))),
            ScalarField(omega, 0.25 * np.cos(0.9 * x) * np.exp(-((x / 2.5) ** 2))),
            ScalarField(omega, 0.8 * np.sin(1.1 * x) * np.exp(-((x / 2.0) ** 2))),
        ],
    )
    system = qt.build_system(
        omega, margin=6, n_particles=2, statistics="fermion-singlet",
        interaction_strength=1.0, interaction_eps=1.0,
    )
    ks_system = qt.build_system(
        omega, margin=6, n_particles=2, statistics="fermion-singlet",
        interaction_strength=0.0, interaction_eps=1.0,
    )
    ground = qt.ground_state(system, v[0])
    return {
        "omega": omega,
        "system": system,
        "ks_system": ks_system,
        "v": v,
        "ground": ground,
    }


@pytest.fixture(scope="session")
def small_system():
    """A deliberately tiny interacting pair for dense-oracle comparisons."""
    omega = build_grid(-2.0, 2.0, 7)
    x = omega.x
    v = TaylorField(
        omega,
        [
            ScalarField(omega, 0.3 * x**2),
            ScalarField(omega, 0.2 * np.sin(1.3 * x)),
            ScalarField(omega, 0.1 * np.cos(0.7 * x)),
        ],
    )
    system = qt.build_system(
        omega, margin=2, n_particles=2, statistics="boson-pair",
        interaction_strength=0.7, interaction_eps=0.8,
    )
    return {"omega": omega, "system": system, "v": v}


def random_state(system, seed):
    rng = np.random.default_rng(seed)
    amp = rng.standard_normal(system.dim) + 1j * rng.standard_normal(system.dim)
    amp /= np.linalg.norm(amp)
    return qt.QuantumState(system, amp)
