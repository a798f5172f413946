"""Shared fixtures: canonical priors and grid-search oracles."""

import numpy as np
import pytest

from nvb.priors import Prior, rate_G_vec


def make_named_priors():
    """Five-prior family exercising atoms, densities, and mixtures."""
    return {
        "two_point": Prior.two_point(),
        "uniform": Prior.uniform(),
        "gauss_pot": Prior.from_potential(lambda x: x * x),
        "cubic_pot": Prior.from_potential(lambda x: abs(x) ** 3),
        "mixed": Prior.from_density_values(
            np.full(513, 0.5), atom_mass=[(-1.0, 0.25), (1.0, 0.25)]
        ),
    }


@pytest.fixture(scope="session")
def named_priors():
    return make_named_priors()


def legendre_sup_by_grid(prior, theta, d, coarse=301, zooms=6):
    """Independent oracle for sup_u [theta*u - G(u, d)] by grid search plus
    local zoom refinement; never touches the inverse mean map directly."""
    lo, hi = -1.0 + 1e-9, 1.0 - 1e-9
    best_u = None
    for _ in range(zooms):
        grid = np.linspace(lo, hi, coarse)
        vals = theta * grid - rate_G_vec(prior, grid, np.full(grid.shape, d))
        k = int(np.argmax(vals))
        best_u = grid[k]
        step = grid[1] - grid[0]
        lo = max(-1.0 + 1e-9, best_u - 2 * step)
        hi = min(1.0 - 1e-9, best_u + 2 * step)
    vals = theta * np.asarray([best_u]) - rate_G_vec(
        prior, np.asarray([best_u]), np.asarray([d])
    )
    return float(vals[0])
