"""Step-kernel embeddings, cut norms, and the limiting variational problem.

Matrices embed as piecewise-constant kernels on the unit square and vectors
as step functions on the unit interval.  The limiting objective acts on
functions F(x, z) in [-1, 1], with x averaged over a uniform grid and z over
Gauss-Hermite nodes; its maximizer satisfies a fixed-point equation solved
here by damped iteration, mirroring the finite-dimensional optimizer.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, SizeError
from .priors import Prior, cumulant_grid, rate_G_vec

_EXACT_CUT_MAX_M = 14


@dataclass
class StepKernel:
    """Symmetric piecewise-constant function on [0,1]^2 over an m x m grid."""

    values: np.ndarray
    zero_diagonal: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise InvalidInputError("kernel grid must be square")
        if not np.allclose(self.values, self.values.T, atol=1e-12):
            raise InvalidInputError("kernel must be symmetric")

    @property
    def m(self):
        return self.values.shape[0]

    def l1_norm(self):
        return float(np.abs(self.values).mean())


@dataclass
class StepFunction:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or not np.all(np.isfinite(self.values)):
            raise InvalidInputError("step function needs a finite 1-d grid")

    @property
    def m(self):
        return self.values.size


def embed_matrix(B, scale: float = 1.0) -> StepKernel:
    """Kernel taking value scale*B(i, j) on off-diagonal cells, 0 on diagonal ones."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise InvalidInputError("matrix must be square")
    if not np.allclose(B, B.T, atol=1e-12):
        raise InvalidInputError("matrix must be symmetric")
    vals = scale * B.copy()
    np.fill_diagonal(vals, 0.0)
    return StepKernel(values=vals, zero_diagonal=True)


def embed_vector(t) -> StepFunction:
    return StepFunction(values=np.asarray(t, dtype=float))


def _best_t_given_s(cells, s):
    col = s @ cells
    return col.clip(min=0.0).sum(axis=-1)


def cut_norm(kernel: StepKernel, mode: str = "exact", n_starts: int = 32, seed: int = 0):
    """Largest box integral sup_{S,T} int_{S x T} K.

    Exact mode enumerates S over grid-cell unions (optimal T decouples by
    column-sum sign, so only 2^m subsets are needed); heuristic mode runs
    alternating S/T maximization from random starts and returns a lower bound.
    """
    m = kernel.m
    cells = kernel.values / (m * m)
    if mode == "exact":
        if m > _EXACT_CUT_MAX_M:
            raise SizeError(f"exact cut norm limited to m <= {_EXACT_CUT_MAX_M}")
        subsets = (np.arange(2**m)[:, None] >> np.arange(m)) & 1
        vals = _best_t_given_s(cells, subsets.astype(float))
        return float(vals.max())
    if mode != "heuristic":
        raise InvalidInputError("mode must be 'exact' or 'heuristic'")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(29,)))
    best = 0.0
    starts = [np.ones(m)] + [
        (rng.random(m) < 0.5).astype(float) for _ in range(n_starts - 1)
    ]
    for t in starts:
        for _ in range(2 * m + 2):
            s = ((cells @ t) > 0).astype(float)
            colsum = s @ cells
            best = max(best, float(colsum.clip(min=0.0).sum()))
            t_new = (colsum > 0).astype(float)
            if np.array_equal(t_new, t):
                break
            t = t_new
    return best


def infty_one_norm(kernel: StepKernel, mode: str = "exact"):
    """Operator norm sup over [-1,1]-valued f, g of int K f g; exact by
    enumerating sign vectors (optimal g decouples)."""
    m = kernel.m
    cells = kernel.values / (m * m)
    if mode == "exact":
        if m > _EXACT_CUT_MAX_M:
            raise SizeError(f"exact norm limited to m <= {_EXACT_CUT_MAX_M}")
        signs = 2.0 * ((np.arange(2**m)[:, None] >> np.arange(m)) & 1) - 1.0
        return float(np.abs(signs @ cells).sum(axis=1).max())
    raise InvalidInputError("only exact mode implemented")


@dataclass
class LimitProblem:
    """Discretized limiting problem: kernel W, field g, tilt profile psi on an
    m-grid over [0,1]; z integrals over q Gauss-Hermite nodes."""

    W: StepKernel
    g: np.ndarray
    psi: np.ndarray
    sigma2: float
    prior: Prior
    z_nodes: np.ndarray
    z_weights: np.ndarray

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        self.psi = np.asarray(self.psi, dtype=float)
        m = self.W.m
        if self.g.shape != (m,) or self.psi.shape != (m,):
            raise InvalidInputError("g and psi must match the kernel grid")
        if np.any(self.psi < 0):
            raise InvalidInputError("psi must be nonnegative")
        if not self.sigma2 > 0:
            raise InvalidInputError("sigma2 must be positive")

    @property
    def m(self):
        return self.W.m

    @property
    def q(self):
        return self.z_nodes.size

    def x_grid(self):
        m = self.m
        return (np.arange(m) + 0.5) / m


@dataclass
class GridFunction:
    """Function values F(x_a, z_b) on the (m, q) product grid, in [-1, 1]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise InvalidInputError("grid function must be 2-d")
        if np.any(np.abs(self.values) > 1.0):
            raise InvalidInputError("grid function values must lie in [-1, 1]")


def gauss_hermite_probabilists(q: int):
    """Nodes and weights integrating against the standard normal density."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(q)
    return nodes, weights / weights.sum()


def build_limit_problem(
    kind: str,
    params,
    phi,
    sigma2: float,
    prior: Prior,
    m: int = 64,
    q: int = 33,
) -> LimitProblem:
    """Assemble (W, g, psi) for one of the worked designs on an m-grid.

    params carries the design intensity: a scalar or sampled shape function
    (1-d for spiked, 2-d for sparse Bernoulli); the ANOVA design has none.
    phi is the limiting coefficient profile (scalar or values on [0, 1]).
    The field is always g(x) = int W(x, y) phi(y) dy + psi(x) phi(x).
    """
    xs = (np.arange(m) + 0.5) / m
    if np.isscalar(phi) or phi is None:
        phi_vals = np.full(m, 0.0 if phi is None else float(phi))
    else:
        phi_arr = np.asarray(phi, dtype=float)
        phi_vals = np.interp(xs, np.linspace(0, 1, phi_arr.size), phi_arr)

    from .regression import DesignSpec  # reuse the intensity interpolators

    if kind == "anova":
        if m % 2 != 0:
            raise InvalidInputError("anova limit grid needs even m")
        half = xs >= 0.5
        w = np.where(half[:, None] ^ half[None, :], 1.0, 0.0)
        psi = np.full(m, 0.5)
    elif kind == "spiked":
        spec = DesignSpec(kind="spiked", n=1, p=1, intensity=params)
        gx = spec.intensity_on_grid(xs)
        w = np.outer(gx, gx)
        psi = np.ones(m)
    elif kind == "sparse_bernoulli":
        spec = DesignSpec(kind="sparse_bernoulli", n=1, p=1, intensity=params)
        ts = (np.arange(512) + 0.5) / 512
        gtx = spec.intensity_on_square(ts, xs)
        w = gtx.T @ gtx / ts.size
        psi = gtx.mean(axis=0)
    else:
        raise InvalidInputError(f"no known limit for design kind {kind!r}")

    g = w @ phi_vals / m + psi * phi_vals
    nodes, weights = gauss_hermite_probabilists(q)
    return LimitProblem(
        W=StepKernel(values=w),
        g=g,
        psi=psi,
        sigma2=sigma2,
        prior=prior,
        z_nodes=nodes,
        z_weights=weights,
    )


def evaluate_functional(lp: LimitProblem, F: GridFunction) -> float:
    """Limiting objective at F; -inf when the entropy integral diverges."""
    vals = F.values
    if vals.shape != (lp.m, lp.q):
        raise InvalidInputError(f"grid mismatch: expected {(lp.m, lp.q)}")
    w = lp.z_weights
    fbar = vals @ w
    m = lp.m
    interaction = -0.5 * fbar @ lp.W.values @ fbar / (m * m)
    linear = lp.g @ fbar / m
    noise = np.sqrt(lp.psi) @ (vals @ (w * lp.z_nodes)) / m
    dmat = np.broadcast_to((lp.psi / lp.sigma2)[:, None], vals.shape)
    gs = rate_G_vec(lp.prior, vals, dmat)
    if np.any(np.isinf(gs)):
        return float("-inf")
    entropy = float((gs @ w).mean())
    return float((interaction + linear + noise) / lp.sigma2 - entropy)


def _rde_map(lp: LimitProblem, vals):
    fbar = vals @ lp.z_weights
    interaction = lp.W.values @ fbar / lp.m
    tilt = (
        -interaction[:, None]
        + lp.g[:, None]
        + np.sqrt(lp.psi)[:, None] * lp.z_nodes[None, :]
    ) / lp.sigma2
    dmat = np.broadcast_to((lp.psi / lp.sigma2)[:, None], vals.shape)
    return cumulant_grid(lp.prior, tilt, dmat)[1]


@dataclass
class RdeSolution:
    F: GridFunction
    value: float
    residual: float
    converged: bool
    iterations: int
    starts_agree: bool


def solve_rde(
    lp: LimitProblem,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    starts: int = 8,
    seed: int = 0,
) -> RdeSolution:
    """Damped iteration of the self-consistency map for the limiting optimizer.

    Multiple starts (zero plus random); the returned iterate maximizes the
    limiting objective among converged candidates.  Non-convergence is
    reported by flag.
    """
    shape = (lp.m, lp.q)
    cands = []
    for r in range(starts):
        if r == 0:
            vals = np.zeros(shape)
        else:
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r, 31)))
            vals = rng.uniform(-1.0, 1.0, size=shape)
        converged = False
        iters = 0
        for iters in range(1, max_iter + 1):
            target = _rde_map(lp, vals)
            residual = float(np.max(np.abs(vals - target)))
            if residual <= tol:
                converged = True
                break
            vals = (1.0 - damping) * vals + damping * target
        f = GridFunction(values=np.clip(vals, -1.0, 1.0))
        cands.append(
            {
                "F": f,
                "value": evaluate_functional(lp, f),
                "residual": residual,
                "converged": converged,
                "iterations": iters,
            }
        )
    cands.sort(key=lambda c: -c["value"])
    top = cands[0]
    agree = all(
        np.max(np.abs(c["F"].values - top["F"].values)) <= 1e-6 for c in cands
    )
    return RdeSolution(
        F=top["F"],
        value=top["value"],
        residual=top["residual"],
        converged=top["converged"],
        iterations=top["iterations"],
        starts_agree=agree,
    )


@dataclass
class EmpiricalTriples:
    """Equally weighted point cloud (i/p, xi_i, u_i) on [0,1] x R x [-1,1]."""

    xs: np.ndarray
    zs: np.ndarray
    us: np.ndarray

    @property
    def weight(self):
        return 1.0 / self.xs.size


def empirical_triple(u, xi) -> EmpiricalTriples:
    u = np.asarray(u, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if u.shape != xi.shape or u.ndim != 1:
        raise InvalidInputError("u and xi must be 1-d of equal length")
    p = u.size
    return EmpiricalTriples(xs=np.arange(1, p + 1) / p, zs=xi, us=u)


def sample_limit_law(F: GridFunction, lp: LimitProblem, count: int, seed: int = 0):
    """Draws from the discretized law of (X, Z, F(X, Z)): X uniform over grid
    cells, Z over the Gauss-Hermite nodes with their weights."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(37,)))
    a = rng.integers(0, lp.m, size=count)
    zidx = rng.choice(lp.q, size=count, p=lp.z_weights)
    xs = (a + rng.random(count)) / lp.m
    return EmpiricalTriples(xs=xs, zs=lp.z_nodes[zidx], us=F.values[a, zidx])


def compare_empirical_to_limit(triples: EmpiricalTriples, F: GridFunction, lp: LimitProblem):
    """Mixed moments E[X^a Z^b U] for a, b in {0, 1, 2} of the empirical cloud
    against the grid law of (X, Z, F(X, Z)); returns a per-moment report and
    the maximum absolute discrepancy."""
    xs = lp.x_grid()
    w = lp.z_weights
    report = {}
    worst = 0.0
    for a in range(3):
        for b in range(3):
            emp = float(np.mean(triples.xs**a * triples.zs**b * triples.us))
            lim = float(xs**a @ (F.values @ (w * lp.z_nodes**b)) / lp.m)
            report[f"x^{a} z^{b} u"] = {"empirical": emp, "limit": lim}
            worst = max(worst, abs(emp - lim))
    return report, worst


# -- serialization --------------------------------------------------------------


def _write_grid_csv(path, header, mat):
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for row in np.atleast_2d(mat):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _read_grid_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    header = json.loads(lines[0])
    mat = np.array([[float(tok) for tok in line.split(",")] for line in lines[1:]])
    return header, mat


def save_kernel(kernel: StepKernel, path):
    _write_grid_csv(
        path, {"m": kernel.m, "q": None, "domain": "[0,1]^2"}, kernel.values
    )


def load_kernel(path) -> StepKernel:
    _, mat = _read_grid_csv(path)
    return StepKernel(values=mat)


def save_grid_function(F: GridFunction, lp: LimitProblem, path):
    header = {"m": lp.m, "q": lp.q, "domain": "[0,1]xR"}
    _write_grid_csv(path, header, F.values)


def load_grid_function(path) -> GridFunction:
    _, mat = _read_grid_csv(path)
    return GridFunction(values=mat)


def save_limit_problem(lp: LimitProblem, path):
    base, _ = os.path.splitext(path)
    stem = os.path.basename(base)
    save_kernel(lp.W, base + ".W.csv")
    _write_grid_csv(
        base + ".g.csv", {"m": lp.m, "q": None, "domain": "[0,1]"}, lp.g.reshape(1, -1)
    )
    _write_grid_csv(
        base + ".psi.csv",
        {"m": lp.m, "q": None, "domain": "[0,1]"},
        lp.psi.reshape(1, -1),
    )
    bundle = {
        "w_path": stem + ".W.csv",
        "g_path": stem + ".g.csv",
        "psi_path": stem + ".psi.csv",
        "sigma2": lp.sigma2,
        "m": lp.m,
        "q": lp.q,
        "prior": lp.prior.to_json(),
    }
    with open(path, "w") as fh:
        json.dump(bundle, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_limit_problem(path) -> LimitProblem:
    with open(path) as fh:
        bundle = json.load(fh)
    folder = os.path.dirname(os.path.abspath(path))
    kernel = load_kernel(os.path.join(folder, bundle["w_path"]))
    _, g = _read_grid_csv(os.path.join(folder, bundle["g_path"]))
    _, psi = _read_grid_csv(os.path.join(folder, bundle["psi_path"]))
    nodes, weights = gauss_hermite_probabilists(int(bundle["q"]))
    return LimitProblem(
        W=kernel,
        g=g.ravel(),
        psi=psi.ravel(),
        sigma2=float(bundle["sigma2"]),
        prior=Prior.from_json(bundle["prior"]),
        z_nodes=nodes,
        z_weights=weights,
    )
