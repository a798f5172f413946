"""Mean-field objective, damped fixed-point optimizer, and condition diagnostics.

The objective M assigns to each product-mean vector u the Gibbs value of the
best product measure with those means: a quadratic coupling/linear data term
minus the per-coordinate entropy cost G.  Its stationary points satisfy
u_i = cdot(theta_i(u), d_i) with theta the local fields, which the optimizer
iterates with damping and restarts.  The diagnostics quantify when that
fixed point is provably unique.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import InvalidInputError, SizeError
from .priors import Prior, cumulant_grid, invert_mean_vec, rate_G_vec
from .regression import Decomposition

_CLAMP = 1.0 - 1e-12


@dataclass
class MeanFieldSolution:
    u_hat: np.ndarray
    value: float
    fixed_point_residual: float
    restarts_agree: bool
    iterations: int
    converged: bool
    trace: list = field(default_factory=list, repr=False)

    def to_json(self):
        return {
            "u_hat": self.u_hat.tolist(),
            "value": self.value,
            "residual": self.fixed_point_residual,
            "converged": self.converged,
            "restarts_agree": self.restarts_agree,
        }


@dataclass
class ConditionReport:
    trA2_over_p: float
    row_sum_max: float
    sup_field_over_p: float
    sup_field_exact: bool
    min_eig_XtX: float
    hessian_min_eig_bound: float
    ghs_max: float
    ghs_bound_ok: bool
    uniqueness_certified: bool

    def to_json(self):
        return {
            "trA2_over_p": self.trA2_over_p,
            "row_sum_max": self.row_sum_max,
            "sup_field_over_p": self.sup_field_over_p,
            "sup_field_exact": self.sup_field_exact,
            "min_eig_XtX": self.min_eig_XtX,
            "hessian_min_eig_bound": self.hessian_min_eig_bound,
            "ghs_max": self.ghs_max,
            "ghs_bound_ok": self.ghs_bound_ok,
            "uniqueness_certified": self.uniqueness_certified,
        }


def _check_u(dec: Decomposition, u):
    u = np.asarray(u, dtype=float)
    if u.shape != (dec.p,):
        raise InvalidInputError(f"expected a vector of length {dec.p}")
    return u


def evaluate_Mp(dec: Decomposition, prior: Prior, sigma2: float, u) -> float:
    """Mean-field objective at u; -inf when some entropy term is infinite."""
    u = _check_u(dec, u)
    if np.any(np.abs(u) > 1.0):
        raise InvalidInputError("u must lie in [-1, 1]^p")
    gs = rate_G_vec(prior, u, dec.d)
    if np.any(np.isinf(gs)):
        return float("-inf")
    quad = u @ dec.A @ u
    return float(-(quad - 2.0 * dec.z @ u) / (2.0 * sigma2) - gs.sum())


def local_fields(dec: Decomposition, sigma2: float, beta):
    """Per-coordinate effective tilts theta_i = (z_i - (A beta)_i)/sigma2."""
    beta = _check_u(dec, beta)
    return (dec.z - dec.A @ beta) / sigma2


def conditional_means(dec: Decomposition, prior: Prior, sigma2: float, beta):
    """Tilted means cdot(theta_i, d_i) at the local fields of beta."""
    theta = local_fields(dec, sigma2, beta)
    return cumulant_grid(prior, theta, dec.d)[1]


def _clip_feasible(prior: Prior, u):
    lo = max(-_CLAMP, prior.support_min + 1e-13)
    hi = min(_CLAMP, prior.support_max - 1e-13)
    return np.clip(u, lo, hi)


def optimize(
    dec: Decomposition,
    prior: Prior,
    sigma2: float,
    restarts: int = 8,
    damping: float = 0.5,
    tol: float = 1e-9,
    max_iter: int = 10_000,
    seed: int = 0,
    collect_trace: bool = False,
) -> MeanFieldSolution:
    """Maximize the mean-field objective by damped fixed-point iteration.

    Starts from the zero vector plus restarts-1 random points; each sweep
    moves u toward the conditional means of its own local fields, halving
    the damping whenever the objective drops.  The reported iterate is the
    best ever seen, ties across restarts broken by value then lexicographic
    order.  Non-convergence is reported via the converged flag, not raised.
    """
    p = dec.p
    finals = []
    for r in range(restarts):
        if r == 0:
            u = np.zeros(p)
        else:
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))
            u = rng.uniform(-1.0, 1.0, size=p)
        u = _clip_feasible(prior, u)
        alpha = damping
        best_u = u.copy()
        best_val = evaluate_Mp(dec, prior, sigma2, u)
        trace = [best_val]
        prev_val = best_val
        converged = False
        sweeps = 0
        for sweeps in range(1, max_iter + 1):
            target = conditional_means(dec, prior, sigma2, u)
            residual = float(np.max(np.abs(u - target)))
            if residual <= tol:
                converged = True
                sweeps -= 1
                break
            u = _clip_feasible(prior, (1.0 - alpha) * u + alpha * target)
            val = evaluate_Mp(dec, prior, sigma2, u)
            if val < prev_val:
                alpha = max(alpha / 2.0, 1.0 / 1024.0)
            if val > best_val:
                best_val = val
                best_u = u.copy()
            prev_val = val
            if collect_trace:
                trace.append(max(best_val, trace[-1]))
        # keep the converged iterate unless an earlier one won by a real
        # margin (beyond evaluation noise); when not converged take the max
        last_val = evaluate_Mp(dec, prior, sigma2, u)
        if last_val >= best_val or (
            converged and best_val - last_val <= 1e-11 * (1.0 + abs(last_val))
        ):
            best_u, best_val = u, last_val
        res = float(
            np.max(np.abs(best_u - conditional_means(dec, prior, sigma2, best_u)))
        )
        finals.append(
            {
                "u": best_u,
                "value": best_val,
                "residual": res,
                "converged": converged and res <= tol,
                "sweeps": sweeps,
                "trace": trace if collect_trace else [],
            }
        )
    finals.sort(key=lambda f: (-f["value"], tuple(f["u"])))
    top = finals[0]
    agree = all(
        np.max(np.abs(f["u"] - top["u"])) <= 1e-6 for f in finals
    )
    return MeanFieldSolution(
        u_hat=top["u"],
        value=top["value"],
        fixed_point_residual=top["residual"],
        restarts_agree=agree,
        iterations=top["sweeps"],
        converged=top["converged"],
        trace=top["trace"],
    )


def _sup_field_over_p(A, p, n_probes, seed, exact):
    """Largest normalized field mass sum_i |(A u)_i| / p over sign vectors.

    Exact enumeration is exponential, so by default the value is a lower
    bound estimated from random sign probes plus the all-ones vector.
    """
    if exact:
        if p > 20:
            raise SizeError("exact sign enumeration limited to p <= 20")
        bits = (np.arange(2**p)[:, None] >> np.arange(p)) & 1
        us = 2.0 * bits - 1.0
        vals = np.abs(us @ A.T).sum(axis=1)
        return float(vals.max() / p), True
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(17,)))
    us = rng.choice([-1.0, 1.0], size=(n_probes, p))
    us = np.vstack([np.ones((1, p)), us])
    vals = np.abs(us @ A.T).sum(axis=1)
    return float(vals.max() / p), False


def condition_report(
    dec: Decomposition,
    prior: Prior,
    sigma2: float,
    xtx=None,
    n_sign_probes: int = 64,
    exact_weak: bool = False,
    seed: int = 0,
) -> ConditionReport:
    """Numerical check of the sufficient conditions for mean-field accuracy
    and uniqueness: coupling trace and row sums, field-mass statistic,
    smallest Gram eigenvalue, a Gershgorin bound on the negated Hessian,
    and the prior-side bound sup_d d * variance of the (0, d)-tilt <= 1."""
    A = dec.A
    p = dec.p
    tr_a2 = float(np.sum(A * A) / p)
    row_sum = float(np.max(np.abs(A).sum(axis=1))) if p > 1 else 0.0
    sup_field, sup_exact = _sup_field_over_p(A, p, n_sign_probes, seed, exact_weak)
    gram = np.asarray(xtx, dtype=float) if xtx is not None else dec.xtx()
    min_eig = float(np.linalg.eigvalsh(gram)[0])
    # diagonal of the negated Hessian is 1/variance >= 1; Gershgorin then
    # bounds its smallest eigenvalue below by 1 - row_sum/sigma2
    hess_bound = 1.0 - row_sum / sigma2
    dgrid = np.logspace(-2, 2, 50)
    ghs_vals = dgrid * cumulant_grid(prior, np.zeros_like(dgrid), dgrid)[2]
    ghs_max = float(ghs_vals.max())
    ghs_ok = ghs_max <= 1.0 + 1e-9
    certified = bool(
        row_sum < sigma2
        or (prior.has_even_convex_potential() and min_eig > 0.0)
    )
    return ConditionReport(
        trA2_over_p=tr_a2,
        row_sum_max=row_sum,
        sup_field_over_p=sup_field,
        sup_field_exact=sup_exact,
        min_eig_XtX=min_eig,
        hessian_min_eig_bound=hess_bound,
        ghs_max=ghs_max,
        ghs_bound_ok=ghs_ok,
        uniqueness_certified=certified,
    )


def truncated_gaussian_variance(a: float) -> float:
    """Variance of a standard Gaussian conditioned on [-a, a]."""
    return 1.0 - 2.0 * a * norm.pdf(a) / (2.0 * norm.cdf(a) - 1.0)


def separation_probe(
    dec: Decomposition,
    prior: Prior,
    sigma2: float,
    u_star,
    epsilon: float,
    n_probes: int = 32,
    seed: int = 0,
    ascent_steps: int = 25,
    step_size: float = 0.05,
) -> float:
    """Best objective excess found outside the ball ||u - u*||^2 < p*epsilon.

    Random directions pushed to the excluded region, then projected gradient
    ascent constrained to stay out of the ball.  A negative return is
    numerical evidence (not proof) of a separation gap.
    """
    u_star = _check_u(dec, u_star)
    p = dec.p
    m_star = evaluate_Mp(dec, prior, sigma2, u_star)
    radius2 = p * epsilon
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(23,)))

    def outside(u):
        return float(np.sum((u - u_star) ** 2)) >= radius2 * (1.0 - 1e-9)

    def push_out(u):
        # rescale away from u* until outside the ball, respecting the cube
        for _ in range(40):
            if outside(u):
                return u
            diff = u - u_star
            nrm = np.sqrt(np.sum(diff**2))
            if nrm == 0.0:
                return None
            u = _clip_feasible(prior, u_star + diff * (np.sqrt(radius2) / nrm) * 1.01)
            diff = u - u_star
        return u if outside(u) else None

    best = float("-inf")
    for _ in range(n_probes):
        v = rng.standard_normal(p)
        v /= np.sqrt(np.sum(v**2))
        u = _clip_feasible(prior, u_star + np.sqrt(radius2) * v)
        u = push_out(u)
        if u is None:
            continue
        val = evaluate_Mp(dec, prior, sigma2, u)
        best = max(best, val)
        for _ in range(ascent_steps):
            theta = local_fields(dec, sigma2, u)
            h = invert_mean_vec(prior, u, dec.d)
            grad = theta - h
            cand = _clip_feasible(prior, u + step_size * grad)
            cand = push_out(cand)
            if cand is None:
                break
            cval = evaluate_Mp(dec, prior, sigma2, cand)
            if cval <= val:
                break
            u, val = cand, cval
            best = max(best, val)
    if best == float("-inf"):
        raise InvalidInputError("no feasible probe outside the excluded ball")
    return (best - m_star) / p
