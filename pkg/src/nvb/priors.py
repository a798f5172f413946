"""Exponential-family engine for tilted bounded priors on [-1, 1].

A prior is a mixture of point masses ("atoms") and a piecewise-linear
density on a uniform grid over [-1, 1].  Tilting by (gamma1, gamma2)
reweights the prior by exp(gamma1*z - gamma2*z^2/2).  The log-normalizer
c of the tilted family, its gamma1-derivatives (tilted mean and variance),
the inverse mean map h, and the convex rate function G built from them are
all evaluated against one fixed quadrature, so every identity relating
them holds to near machine precision regardless of quadrature error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidInputError, RangeError

DEFAULT_GRID_SIZE = 2049
_MASS_TOL = 1e-12
_ATOM_LOC_TOL = 1e-12
_BOUNDARY_BAND = 1e-9
_BRACKET_CAP = 1.0e6
_BISECT_STEPS = 80


@dataclass(frozen=True)
class Tilt:
    """Tilt parameters: linear coefficient gamma1, quadratic coefficient gamma2."""

    gamma1: float
    gamma2: float

    def __post_init__(self):
        if not (np.isfinite(self.gamma1) and np.isfinite(self.gamma2)):
            raise InvalidInputError("tilt parameters must be finite")


@dataclass(frozen=True)
class CumulantBundle:
    """Log-normalizer c and its first two gamma1-derivatives.

    cdot is the tilted mean (in (-1, 1)); cddot the tilted variance
    (in (0, 1] exactly, possibly underflowing to 0.0 at extreme tilts).
    """

    c: float
    cdot: float
    cddot: float


class Prior:
    """Probability measure on [-1, 1]: atoms plus optional gridded density.

    The density part is interpreted as piecewise linear between uniform grid
    points and integrated exactly by two-point Gauss-Legendre per segment.
    Total mass (atoms + density) must equal 1 within 1e-12.
    """

    def __init__(self, atoms=(), density_values=None):
        atoms = [(float(loc), float(w)) for loc, w in atoms]
        for loc, w in atoms:
            if not -1.0 - _ATOM_LOC_TOL <= loc <= 1.0 + _ATOM_LOC_TOL:
                raise InvalidInputError(f"atom location {loc} outside [-1, 1]")
            if w < 0:
                raise InvalidInputError("atom weights must be nonnegative")
        self.atoms = [(min(max(loc, -1.0), 1.0), w) for loc, w in atoms if w > 0]

        if density_values is not None:
            vals = np.asarray(density_values, dtype=float)
            if vals.ndim != 1 or vals.size < 2:
                raise InvalidInputError("density grid needs at least 2 values")
            if np.any(~np.isfinite(vals)) or np.any(vals < 0):
                raise InvalidInputError("density values must be finite and >= 0")
            self.density_values = vals
        else:
            self.density_values = None

        self._build_quadrature()

        if self._logw.size == 0:
            raise InvalidInputError("degenerate prior: no mass")
        mass = np.exp(self._logw).sum()
        self._mass_defect = abs(mass - 1.0)
        if self._mass_defect > _MASS_TOL:
            raise InvalidInputError(
                f"total mass off by {self._mass_defect:g} (tolerance {_MASS_TOL})"
            )
        # remove the float residue so identities like c(0, 0) = 0 are exact
        self._logw = self._logw - np.log(mass)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def two_point(cls, w_plus=0.5):
        """Atoms at -1 and +1 with P(+1) = w_plus."""
        return cls(atoms=[(-1.0, 1.0 - w_plus), (1.0, w_plus)])

    @classmethod
    def from_atoms(cls, atoms):
        atoms = [(loc, w) for loc, w in atoms]
        total = sum(w for _, w in atoms)
        if total <= 0:
            raise InvalidInputError("atom weights sum to zero")
        return cls(atoms=[(loc, w / total) for loc, w in atoms])

    @classmethod
    def uniform(cls, grid_size=DEFAULT_GRID_SIZE):
        return cls(density_values=np.full(grid_size, 0.5))

    @classmethod
    def from_potential(cls, potential, grid_size=DEFAULT_GRID_SIZE):
        """Density proportional to exp(-potential(x)), trapezoid-normalized."""
        grid = np.linspace(-1.0, 1.0, grid_size)
        vals = np.exp(-np.asarray([potential(x) for x in grid], dtype=float))
        vals /= np.trapezoid(vals, grid)
        return cls(density_values=vals)

    @classmethod
    def from_density_values(cls, values, atom_mass=()):
        """Mixture: given atoms plus a density scaled to carry the rest."""
        atom_total = sum(w for _, w in atom_mass)
        if not 0 <= atom_total < 1 + _MASS_TOL:
            raise InvalidInputError("atom mass must lie in [0, 1]")
        vals = np.asarray(values, dtype=float)
        grid = np.linspace(-1.0, 1.0, vals.size)
        mass = np.trapezoid(vals, grid)
        if mass <= 0:
            raise InvalidInputError("density carries no mass")
        vals = vals * (1.0 - atom_total) / mass
        return cls(atoms=atom_mass, density_values=vals)

    # -- internals -------------------------------------------------------------

    def _build_quadrature(self):
        zs = [np.array([loc for loc, _ in self.atoms])]
        logws = [np.log([w for _, w in self.atoms]) if self.atoms else np.array([])]
        if self.density_values is not None:
            vals = self.density_values
            grid = np.linspace(-1.0, 1.0, vals.size)
            h = grid[1] - grid[0]
            mid = 0.5 * (grid[:-1] + grid[1:])
            off = 0.5 * h / np.sqrt(3.0)
            nodes = np.concatenate([mid - off, mid + off])
            # linear interpolation of the density at the GL nodes
            rho = np.concatenate(
                [
                    vals[:-1] + (vals[1:] - vals[:-1]) * (0.5 - 0.5 / np.sqrt(3.0)),
                    vals[:-1] + (vals[1:] - vals[:-1]) * (0.5 + 0.5 / np.sqrt(3.0)),
                ]
            )
            w = 0.5 * h * rho
            keep = w > 0
            zs.append(nodes[keep])
            with np.errstate(divide="ignore"):
                logws.append(np.log(w[keep]))
        self._z = np.concatenate(zs)
        self._logw = np.concatenate(logws)
        self._z2 = self._z * self._z

        locs = self._z
        self.support_min = float(locs.min()) if locs.size else 0.0
        self.support_max = float(locs.max()) if locs.size else 0.0

        self.mass_at_plus_one = sum(
            w for loc, w in self.atoms if abs(loc - 1.0) <= _ATOM_LOC_TOL
        )
        self.mass_at_minus_one = sum(
            w for loc, w in self.atoms if abs(loc + 1.0) <= _ATOM_LOC_TOL
        )
        dens_plus = dens_minus = False
        if self.density_values is not None:
            dens_plus = bool(self.density_values[-2:].max() > 0)
            dens_minus = bool(self.density_values[:2].max() > 0)
        self.has_plus_one_support = self.mass_at_plus_one > 0 or dens_plus
        self.has_minus_one_support = self.mass_at_minus_one > 0 or dens_minus

    def _tilt_stats(self, g1, g2):
        """Vectorized (c, mean, variance) of the (g1, g2)-tilted prior.

        g1 and g2 broadcast against each other; one quadrature call serves
        both the scalar API and the p-vector hot loops.
        """
        g1 = np.asarray(g1, dtype=float)
        g2 = np.asarray(g2, dtype=float)
        e = (
            g1[..., None] * self._z
            - 0.5 * g2[..., None] * self._z2
            + self._logw
        )
        m = e.max(axis=-1)
        w = np.exp(e - m[..., None])
        s = w.sum(axis=-1)
        c = m + np.log(s)
        probs = w / s[..., None]
        mean = probs @ self._z
        var = (probs * (self._z - mean[..., None]) ** 2).sum(axis=-1)
        return c, mean, var

    def _tilt_probs(self, g1, g2):
        e = (
            np.asarray(g1, float)[..., None] * self._z
            - 0.5 * np.asarray(g2, float)[..., None] * self._z2
            + self._logw
        )
        e -= e.max(axis=-1, keepdims=True)
        w = np.exp(e)
        return w / w.sum(axis=-1, keepdims=True)

    # -- structural predicates --------------------------------------------------

    def is_symmetric(self, tol=1e-12):
        """Invariant under z -> -z (atom pattern and density both even)."""
        if self.atoms:
            want = sorted((round(-loc, 14), w) for loc, w in self.atoms)
            have = sorted((round(loc, 14), w) for loc, w in self.atoms)
            if len(want) != len(have):
                return False
            for (l1, w1), (l2, w2) in zip(want, have):
                if abs(l1 - l2) > tol or abs(w1 - w2) > tol:
                    return False
        if self.density_values is not None:
            v = self.density_values
            if np.max(np.abs(v - v[::-1])) > tol * max(1.0, v.max()):
                return False
        return True

    def has_even_convex_potential(self, tol=1e-9):
        """True for pure densities exp(-V)/Z with V even, nondecreasing on
        [0, 1], and V' convex there.  Uniform and exp(-x^2)-type densities
        qualify; anything with atoms does not."""
        if self.atoms or self.density_values is None:
            return False
        v = self.density_values
        if np.any(v <= 0):
            return False
        if np.max(np.abs(v - v[::-1])) > tol * v.max():
            return False
        pot = -np.log(v)
        half = pot[pot.size // 2 :]
        d1 = np.diff(half)
        scale = max(1.0, np.abs(d1).max())
        if np.any(d1 < -tol * scale):
            return False
        d2 = np.diff(d1)
        if np.any(np.diff(d2) < -tol * max(1.0, np.abs(d2).max())):
            return False
        return True

    # -- serialization -----------------------------------------------------------

    def to_json(self):
        out = {"atoms": [[loc, w] for loc, w in self.atoms]}
        if self.density_values is not None:
            out["density"] = {
                "grid_min": -1.0,
                "grid_max": 1.0,
                "values": self.density_values.tolist(),
            }
        return out

    @classmethod
    def from_json(cls, obj):
        if not isinstance(obj, dict):
            raise InvalidInputError("prior JSON must be an object")
        atoms = [tuple(pair) for pair in obj.get("atoms", [])]
        density = obj.get("density")
        values = None
        if density is not None:
            if density.get("grid_min") != -1.0 or density.get("grid_max") != 1.0:
                raise InvalidInputError("density grid must span [-1, 1]")
            values = density["values"]
        return cls(atoms=atoms, density_values=values)

    def dumps(self):
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, text):
        return cls.from_json(json.loads(text))


# -- operations ------------------------------------------------------------------


def cumulant(prior: Prior, tilt: Tilt) -> CumulantBundle:
    """Log-normalizer of the tilted prior with its first two derivatives.

    Stable for |gamma1| up to ~500 via max-shifted exponentials.
    """
    c, mean, var = prior._tilt_stats(tilt.gamma1, tilt.gamma2)
    return CumulantBundle(float(c), float(mean), float(var))


def cumulant_grid(prior: Prior, gamma1, gamma2):
    """Vectorized cumulant: returns (c, cdot, cddot) arrays broadcast over inputs."""
    return prior._tilt_stats(gamma1, gamma2)


def invert_mean_vec(prior: Prior, t, gamma2):
    """Vectorized inverse of the tilted-mean map: h with cdot(h, gamma2) = t.

    Bracketing bisection; the bracket is doubled until it covers t (capped
    near 1e6) and then bisected to far below the 1e-10 value tolerance.
    """
    t = np.asarray(t, dtype=float)
    g2 = np.broadcast_to(np.asarray(gamma2, dtype=float), t.shape).astype(float)
    if np.any(np.abs(t) >= 1.0):
        raise DomainError("target mean must satisfy |t| < 1")
    if np.any(t <= prior.support_min) or np.any(t >= prior.support_max):
        raise RangeError(
            "target mean outside the achievable range "
            f"({prior.support_min:.6g}, {prior.support_max:.6g})"
        )
    lo = np.full(t.shape, -1.0)
    hi = np.ones_like(lo)
    g2pair = np.stack([g2, g2])
    while True:
        means = prior._tilt_stats(np.stack([lo, hi]), g2pair)[1]
        need_lo = means[0] > t
        need_hi = means[1] < t
        if not (need_lo.any() or need_hi.any()):
            break
        if max(hi.max(), -lo.min()) >= _BRACKET_CAP:
            raise RangeError("mean not attainable within bracket cap 1e6")
        lo = np.where(need_lo, 2.0 * lo, lo)
        hi = np.where(need_hi, 2.0 * hi, hi)
    # safeguarded Newton within the bracket (one stats call gives both the
    # residual and its derivative); bisection step wherever Newton escapes.
    # Converged entries drop out of the active set.
    flat_shape = t.shape
    x = (0.5 * (lo + hi)).ravel()
    lo, hi = lo.ravel(), hi.ravel()
    tf, g2f = t.ravel(), g2.ravel()
    active = np.arange(x.size)
    for _ in range(_BISECT_STEPS):
        xa = x[active]
        _, mean, var = prior._tilt_stats(xa, g2f[active])
        f = mean - tf[active]
        above = f >= 0
        hi[active] = np.where(above, xa, hi[active])
        lo[active] = np.where(above, lo[active], xa)
        done = (np.abs(f) <= 1e-14) | (
            hi[active] - lo[active] <= 1e-15 * (1.0 + np.abs(xa))
        )
        keep = ~done
        active = active[keep]
        if active.size == 0:
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(var[keep] > 0, f[keep] / var[keep], np.inf)
        cand = xa[keep] - step
        inside = (cand > lo[active]) & (cand < hi[active])
        x[active] = np.where(inside, cand, 0.5 * (lo[active] + hi[active]))
    return x.reshape(flat_shape)


def invert_mean(prior: Prior, t: float, gamma2: float) -> float:
    """Unique h solving cdot(h, gamma2) = t for t strictly inside the mean range."""
    return float(invert_mean_vec(prior, np.asarray([t], float), gamma2)[0])


def _boundary_rate(prior: Prior, sign, d):
    """Relative entropy of the point mass at +/-1 against the (0, d)-tilted prior."""
    mass = prior.mass_at_plus_one if sign > 0 else prior.mass_at_minus_one
    if mass <= 0:
        return np.full(np.shape(d), np.inf)
    c0 = prior._tilt_stats(np.zeros_like(d), d)[0]
    return -np.log(mass) + 0.5 * d + c0


def rate_G_vec(prior: Prior, u, d):
    """Vectorized rate function G(u, d); +inf where the boundary entropy diverges."""
    u = np.asarray(u, dtype=float)
    d = np.broadcast_to(np.asarray(d, dtype=float), u.shape).astype(float)
    if np.any(np.abs(u) > 1.0):
        raise DomainError("u must lie in [-1, 1]")
    out = np.empty(u.shape)
    upper = u > 1.0 - _BOUNDARY_BAND
    lower = u < -1.0 + _BOUNDARY_BAND
    interior = ~(upper | lower)
    # means outside the achievable hull of the quadrature carry infinite cost
    unattainable = interior & ((u <= prior.support_min) | (u >= prior.support_max))
    out[unattainable] = np.inf
    interior &= ~unattainable
    if interior.any():
        ui, di = u[interior], d[interior]
        h = invert_mean_vec(prior, ui, di)
        ch = prior._tilt_stats(h, di)[0]
        c0 = prior._tilt_stats(np.zeros_like(di), di)[0]
        out[interior] = ui * h - ch + c0
    if upper.any():
        out[upper] = _boundary_rate(prior, +1, d[upper])
    if lower.any():
        out[lower] = _boundary_rate(prior, -1, d[lower])
    return out


def rate_G(prior: Prior, u: float, d: float) -> float:
    """Entropy cost of pinning the (., d)-tilted mean at u; convex in u, G(mean0)=0."""
    return float(rate_G_vec(prior, np.asarray([u], float), d)[0])


def rate_G_derivatives(prior: Prior, u: float, d: float):
    """(dG/du, dG/dd, d2G/du2) at interior u.

    dG/du equals the inverse mean map h(u, d); d2G/du2 = 1/variance > 0;
    dG/dd is half the second-moment shift between the (h, d)- and (0, d)-tilts
    and is bounded by 1/2 in absolute value.
    """
    if not -1.0 < u < 1.0:
        raise DomainError("derivatives defined for |u| < 1 only")
    h = invert_mean(prior, u, d)
    _, mean_h, var_h = prior._tilt_stats(h, d)
    _, mean_0, var_0 = prior._tilt_stats(0.0, d)
    m2_h = var_h + mean_h**2
    m2_0 = var_0 + mean_0**2
    if var_h <= 0:
        raise RangeError("tilted variance underflowed; u too close to the boundary")
    return float(h), float(0.5 * (m2_h - m2_0)), float(1.0 / var_h)


def tilted_moment(prior: Prior, u: float, d: float, r: int) -> float:
    """r-th moment of the tilted prior whose mean is pinned at u."""
    if r < 1 or int(r) != r:
        raise DomainError("moment order must be a positive integer")
    if abs(abs(u) - 1.0) <= _ATOM_LOC_TOL:
        return float(np.sign(u) ** r)
    h = invert_mean(prior, u, d)
    probs = prior._tilt_probs(h, d)
    return float(probs @ prior._z**r)


def tilted_moment_vec(prior: Prior, u, d, r: int):
    u = np.asarray(u, dtype=float)
    d = np.broadcast_to(np.asarray(d, dtype=float), u.shape).astype(float)
    if r < 1 or int(r) != r:
        raise DomainError("moment order must be a positive integer")
    out = np.empty(u.shape)
    boundary = np.abs(np.abs(u) - 1.0) <= _ATOM_LOC_TOL
    if boundary.any():
        out[boundary] = np.sign(u[boundary]) ** r
    interior = ~boundary
    if interior.any():
        h = invert_mean_vec(prior, u[interior], d[interior])
        probs = prior._tilt_probs(h, d[interior])
        out[interior] = probs @ prior._z**r
    return out


def sample_tilted(prior: Prior, tilt: Tilt, rng_seed, count: int):
    """I.i.d. draws from the tilted prior.

    Inverse-CDF over the quadrature node set: atoms are sampled exactly and
    the density part as the discrete law carried by its quadrature weights,
    so sample moments match the cumulant derivatives by construction.
    """
    rng = np.random.default_rng(rng_seed)
    probs = prior._tilt_probs(tilt.gamma1, tilt.gamma2)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(count), side="right")
    return prior._z[np.minimum(idx, prior._z.size - 1)]
