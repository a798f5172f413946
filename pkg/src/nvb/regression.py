"""Data model for Gaussian linear regression and synthetic design generators.

Covers the instance container (X, y, sigma2, optional true coefficients),
the exact split of X'X into off-diagonal and diagonal parts, response
sampling from the true linear model, three synthetic design families
(spiked Gaussian covariance, sparse Bernoulli, two-factor ANOVA incidence),
and CSV/JSON persistence.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ParseError

DESIGN_KINDS = ("spiked", "sparse_bernoulli", "anova", "explicit")


@dataclass
class RegressionInstance:
    X: np.ndarray
    y: np.ndarray | None = None
    sigma2: float = 1.0
    beta0: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] < 1 or self.X.shape[1] < 1:
            raise InvalidInputError("X must be a nonempty 2-d matrix")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=float)
            if self.y.shape != (self.X.shape[0],):
                raise InvalidInputError("y length must match rows of X")
        if not self.sigma2 > 0:
            raise InvalidInputError("sigma2 must be positive")
        if self.beta0 is not None:
            self.beta0 = np.asarray(self.beta0, dtype=float)
            if self.beta0.shape != (self.X.shape[1],):
                raise InvalidInputError("beta0 length must match columns of X")
            if np.any(np.abs(self.beta0) > 1.0):
                raise InvalidInputError("beta0 entries must lie in [-1, 1]")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


@dataclass
class Decomposition:
    """Split of X'X into zero-diagonal coupling A and diagonal Ddiag, with
    the linear statistic z = X'y and the per-coordinate tilt d = Ddiag/sigma2."""

    A: np.ndarray
    Ddiag: np.ndarray
    z: np.ndarray
    d: np.ndarray

    @property
    def p(self):
        return self.Ddiag.size

    def xtx(self):
        return self.A + np.diag(self.Ddiag)


def decompose(instance: RegressionInstance) -> Decomposition:
    """Exact A/D/z split: A + diag(Ddiag) reassembles X'X bit-for-bit."""
    if instance.y is None:
        raise InvalidInputError("instance has no response vector")
    xtx = instance.X.T @ instance.X
    ddiag = np.diag(xtx).copy()
    a = xtx.copy()
    np.fill_diagonal(a, 0.0)
    z = instance.X.T @ instance.y
    return Decomposition(A=a, Ddiag=ddiag, z=z, d=ddiag / instance.sigma2)


@dataclass
class DesignSpec:
    """Parameters for one synthetic design family.

    intensity: scalar or sampled values of the design's shape function --
    a 1-d array on a uniform [0, 1] grid for the spiked family, a 2-d array
    on a uniform [0, 1]^2 grid for the Bernoulli family (linearly
    interpolated in both cases).
    """

    kind: str
    p: int = 0
    n: int = 0
    intensity: object = None
    ptilde: int = 0
    matrix: np.ndarray | None = None
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DESIGN_KINDS:
            raise InvalidInputError(f"unknown design kind {self.kind!r}")
        if self.kind == "anova":
            if self.ptilde < 2:
                raise InvalidInputError("anova needs ptilde >= 2")
        elif self.kind == "explicit":
            if self.matrix is None:
                raise InvalidInputError("explicit design needs a matrix")
            self.matrix = np.asarray(self.matrix, dtype=float)
        else:
            if self.p < 1 or self.n < 1:
                raise InvalidInputError("design needs positive n and p")

    def intensity_on_grid(self, xs):
        """Linear interpolation of the 1-d intensity samples at points xs."""
        g = self.intensity
        if g is None:
            return np.zeros_like(xs)
        if np.isscalar(g):
            return np.full_like(xs, float(g))
        g = np.asarray(g, dtype=float)
        grid = np.linspace(0.0, 1.0, g.size)
        return np.interp(xs, grid, g)

    def intensity_on_square(self, ts, xs):
        """Bilinear interpolation of the 2-d intensity samples at a (t, x) grid."""
        g = self.intensity
        if g is None:
            return np.zeros((ts.size, xs.size))
        if np.isscalar(g):
            return np.full((ts.size, xs.size), float(g))
        g = np.asarray(g, dtype=float)
        if g.ndim == 1:
            g = np.broadcast_to(g, (2, g.size))
        tg = np.linspace(0.0, 1.0, g.shape[0])
        xg = np.linspace(0.0, 1.0, g.shape[1])
        rows = np.empty((ts.size, xg.size))
        for j, col in enumerate(g.T):
            rows[:, j] = np.interp(ts, tg, col)
        out = np.empty((ts.size, xs.size))
        for i in range(ts.size):
            out[i] = np.interp(xs, xg, rows[i])
        return out


def generate_design(spec: DesignSpec) -> RegressionInstance:
    """Design matrix only (y unset); see sample_response for the response."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    if spec.kind == "explicit":
        return RegressionInstance(X=spec.matrix.copy())
    if spec.kind == "anova":
        pt = spec.ptilde
        n, p = pt * pt, 2 * pt
        x = np.zeros((n, p))
        scale = 1.0 / np.sqrt(p)
        rows = np.arange(n)
        x[rows, rows // pt] = scale
        x[rows, pt + rows % pt] = scale
        return RegressionInstance(X=x)
    if spec.kind == "spiked":
        n, p = spec.n, spec.p
        v = spec.intensity_on_grid((np.arange(1, p + 1)) / p) / np.sqrt(p)
        g = rng.standard_normal((n, p))
        nv2 = float(v @ v)
        if nv2 > 0:
            # (I + vv')^{1/2} = I + (sqrt(1+|v|^2)-1) vv'/|v|^2, applied row-wise
            coef = (np.sqrt(1.0 + nv2) - 1.0) / nv2
            g = g + np.outer(g @ v, coef * v)
        return RegressionInstance(X=g / np.sqrt(n))
    # sparse Bernoulli
    n, p = spec.n, spec.p
    probs = spec.intensity_on_square(
        np.arange(1, n + 1) / n, np.arange(1, p + 1) / p
    )
    if np.any(probs < 0):
        raise InvalidInputError("Bernoulli intensities must be nonnegative")
    if np.max(probs, initial=0.0) > p:
        raise InvalidInputError("Bernoulli intensity exceeds p; probability > 1")
    b = rng.random((n, p)) < probs / p
    return RegressionInstance(X=np.sqrt(p / n) * b.astype(float))


def sample_response(
    instance: RegressionInstance, beta0, sigma2: float, seed
) -> RegressionInstance:
    """Draw y = X beta0 + noise with i.i.d. N(0, sigma2) noise; seeded."""
    if beta0 is None:
        raise InvalidInputError("beta0 required to sample a response")
    beta0 = np.asarray(beta0, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    eps = np.sqrt(sigma2) * rng.standard_normal(instance.n)
    y = instance.X @ beta0 + eps
    return RegressionInstance(X=instance.X, y=y, sigma2=sigma2, beta0=beta0)


# -- persistence -------------------------------------------------------------------


def _write_matrix_csv(path, mat):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    with open(path, "w") as fh:
        fh.write(f"{mat.shape[0]},{mat.shape[1]}\n")
        for row in mat:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _read_matrix_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty matrix file", path=path, line=1)
    try:
        rows, cols = (int(tok) for tok in lines[0].split(","))
    except ValueError:
        raise ParseError("header must be 'rows,cols'", path=path, line=1) from None
    if len(lines) < rows + 1:
        raise ParseError(
            f"expected {rows} data rows, found {len(lines) - 1}",
            path=path,
            line=len(lines),
        )
    out = np.empty((rows, cols))
    for i in range(rows):
        toks = lines[1 + i].split(",")
        if len(toks) != cols:
            raise ParseError(
                f"expected {cols} columns, found {len(toks)}", path=path, line=i + 2
            )
        try:
            out[i] = [float(tok) for tok in toks]
        except ValueError:
            raise ParseError("non-numeric entry", path=path, line=i + 2) from None
    return out


def save_instance(instance: RegressionInstance, path, kind=None, seed=None):
    """Write a JSON metadata file plus sibling CSV matrices.

    path names the JSON file; matrices land next to it as <stem>.X.csv etc.
    """
    base, _ = os.path.splitext(path)
    meta = {
        "sigma2": instance.sigma2,
        "n": instance.n,
        "p": instance.p,
        "kind": kind,
        "seed": seed,
        "x_path": os.path.basename(base) + ".X.csv",
        "y_path": os.path.basename(base) + ".y.csv" if instance.y is not None else None,
        "beta0_path": (
            os.path.basename(base) + ".beta0.csv" if instance.beta0 is not None else None
        ),
    }
    _write_matrix_csv(base + ".X.csv", instance.X)
    if instance.y is not None:
        _write_matrix_csv(base + ".y.csv", instance.y.reshape(-1, 1))
    if instance.beta0 is not None:
        _write_matrix_csv(base + ".beta0.csv", instance.beta0.reshape(-1, 1))
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_instance(path) -> RegressionInstance:
    try:
        with open(path) as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path, line=exc.lineno) from None
    for key in ("sigma2", "x_path"):
        if key not in meta or meta[key] is None:
            raise ParseError(f"missing required field {key!r}", path=path, line=1)
    folder = os.path.dirname(os.path.abspath(path))
    x = _read_matrix_csv(os.path.join(folder, meta["x_path"]))
    y = beta0 = None
    if meta.get("y_path"):
        y = _read_matrix_csv(os.path.join(folder, meta["y_path"])).ravel()
    if meta.get("beta0_path"):
        beta0 = _read_matrix_csv(os.path.join(folder, meta["beta0_path"])).ravel()
    return RegressionInstance(X=x, y=y, sigma2=float(meta["sigma2"]), beta0=beta0)
