"""Optimal Gaussian mean-shift machinery.

Importance sampling with the instrumental family N(theta, I_d) weighs a sample
x by the density ratio

    f(x; from) / f(x; to) = exp((from - to) . x + (|to|^2 - |from|^2) / 2).

The best shift minimises the second moment of the weighted survivor indicator
(the variance criterion).  That criterion is smooth and strongly convex, but
its curvature shrinks with the event probability, so the solver instead works
on a log-transformed objective with the same stationary point whose Hessian
never drops below the identity:

    J(theta) = |theta|^2 / 2 + log( (1/n) sum_survivors exp(-(theta - base) . X_j) )

grad J(theta) = theta - weighted_mean(X);  hess J(theta) = I + weighted_cov(X).

All weight sums run through log-sum-exp so large shifts cannot overflow.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NoSurvivors, NotConverged


@dataclass
class WeightedBatch:
    """Samples drawn under ``base_shift`` with survivor flags at some level.

    ``log_weight_offset`` carries optional per-sample additive log weights;
    the subspace solver uses it to fold the fixed out-of-subspace part of the
    base shift into the objective.
    """

    points: np.ndarray          # (n, d)
    responses: np.ndarray       # (n,) oriented responses
    survivors: np.ndarray       # (n,) bool
    base_shift: np.ndarray      # (d,)
    log_weight_offset: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.responses = np.asarray(self.responses, dtype=float)
        self.survivors = np.asarray(self.survivors, dtype=bool)
        self.base_shift = np.asarray(self.base_shift, dtype=float)
        n, d = self.points.shape
        if n < 1:
            raise DomainError("batch must contain at least one sample")
        if self.responses.shape != (n,) or self.survivors.shape != (n,):
            raise DomainError("responses and survivor flags must have length n")
        if self.base_shift.shape != (d,):
            raise DomainError("base shift dimension does not match the points")
        if not (np.all(np.isfinite(self.points))
                and np.all(np.isfinite(self.responses))
                and np.all(np.isfinite(self.base_shift))):
            raise DomainError("batch contains non-finite entries")

    @classmethod
    def from_threshold(cls, points, responses, level, base_shift,
                       log_weight_offset=None):
        responses = np.asarray(responses, dtype=float)
        return cls(points=points, responses=responses,
                   survivors=responses >= level, base_shift=base_shift,
                   log_weight_offset=log_weight_offset)

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def dimension(self):
        return self.points.shape[1]

    @property
    def survivor_count(self):
        return int(self.survivors.sum())


@dataclass
class ShiftSolution:
    """Solver output: the shift, the criterion there, and convergence data.

    ``criterion_variance`` is the online variance estimate of the empirical
    criterion value, usable for a CLT interval on it.
    """

    theta: np.ndarray
    criterion_value: float
    criterion_variance: float
    newton_iterations: int
    grad_norm: float
    converged: bool


def likelihood_ratio(x, theta_from, theta_to):
    """Density ratio f(x; theta_from) / f(x; theta_to) for N(theta, I_d)."""
    x = np.asarray(x, dtype=float)
    theta_from = np.asarray(theta_from, dtype=float)
    theta_to = np.asarray(theta_to, dtype=float)
    expo = x @ (theta_from - theta_to) + 0.5 * (theta_to @ theta_to
                                                - theta_from @ theta_from)
    out = np.exp(expo)
    return float(out) if np.ndim(out) == 0 else out


def _survivor_terms(theta, batch):
    """Survivor points and their log weights exp-arguments at ``theta``."""
    if batch.survivor_count == 0:
        raise NoSurvivors("no survivor in the batch")
    pts = batch.points[batch.survivors]
    expo = -(pts @ (np.asarray(theta, dtype=float) - batch.base_shift))
    if batch.log_weight_offset is not None:
        expo = expo + np.asarray(batch.log_weight_offset, dtype=float)[batch.survivors]
    return pts, expo


def _softmax(expo):
    w = np.exp(expo - expo.max())
    return w / w.sum()


def _log_mean_exp(expo, n):
    m = expo.max()
    return m + np.log(np.exp(expo - m).sum() / n)


def variance_criterion(theta, batch):
    """Empirical second moment of the weighted survivor indicator at ``theta``.

    (1/n) sum_j 1{survivor_j} exp(-(theta - base) . X_j
                                  + (|theta|^2 - |base|^2) / 2)
    """
    theta = np.asarray(theta, dtype=float)
    _, expo = _survivor_terms(theta, batch)
    half_norms = 0.5 * (theta @ theta - batch.base_shift @ batch.base_shift)
    return float(np.exp(half_norms + _log_mean_exp(expo, batch.size)))


def criterion_variance(theta, batch):
    """Variance of the per-sample criterion terms (their second moment minus
    the squared criterion), the online CLT scale for the criterion value."""
    theta = np.asarray(theta, dtype=float)
    _, expo = _survivor_terms(theta, batch)
    half_norms = 0.5 * (theta @ theta - batch.base_shift @ batch.base_shift)
    log_terms = expo + half_norms
    second = np.exp(_log_mean_exp(2.0 * log_terms, batch.size))
    first = np.exp(_log_mean_exp(log_terms, batch.size))
    return float(second - first * first)


def variance_criterion_gradient(theta, batch):
    """Exact gradient of the empirical variance criterion.

    Computed with explicit per-sample weights; can overflow for extreme
    shifts, unlike the log-objective path the solver uses.
    """
    theta = np.asarray(theta, dtype=float)
    pts, expo = _survivor_terms(theta, batch)
    half_norms = 0.5 * (theta @ theta - batch.base_shift @ batch.base_shift)
    w = np.exp(expo + half_norms)
    return (w.sum() * theta - w @ pts) / batch.size


def variance_criterion_hessian(theta, batch):
    theta = np.asarray(theta, dtype=float)
    pts, expo = _survivor_terms(theta, batch)
    half_norms = 0.5 * (theta @ theta - batch.base_shift @ batch.base_shift)
    w = np.exp(expo + half_norms)
    diff = theta[None, :] - pts
    return (w.sum() * np.eye(batch.dimension) + diff.T @ (w[:, None] * diff)) / batch.size


def log_objective(theta, batch):
    """Convexified objective sharing its stationary point with the criterion."""
    theta = np.asarray(theta, dtype=float)
    _, expo = _survivor_terms(theta, batch)
    return float(0.5 * theta @ theta + _log_mean_exp(expo, batch.size))


def log_objective_gradient(theta, batch):
    theta = np.asarray(theta, dtype=float)
    pts, expo = _survivor_terms(theta, batch)
    return theta - _softmax(expo) @ pts


def log_objective_hessian(theta, batch):
    """I + weighted covariance of the survivor points; always >= I."""
    theta = np.asarray(theta, dtype=float)
    pts, expo = _survivor_terms(theta, batch)
    s = _softmax(expo)
    mean = s @ pts
    centered = pts - mean
    return np.eye(batch.dimension) + centered.T @ (s[:, None] * centered)


def _conjugate_gradient(apply_a, b, rel_tol, max_iter):
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    floor = rel_tol * np.sqrt(rr)
    for _ in range(max_iter):
        if np.sqrt(rr) <= floor:
            break
        ap = apply_a(p)
        alpha = rr / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


def _solution(theta, batch, iterations, grad_norm, converged):
    return ShiftSolution(
        theta=np.asarray(theta, dtype=float).copy(),
        criterion_value=variance_criterion(theta, batch),
        criterion_variance=criterion_variance(theta, batch),
        newton_iterations=iterations,
        grad_norm=float(grad_norm),
        converged=converged,
    )


def solve_optimal_shift(batch, theta_init=None, tol=1e-8, max_iter=50,
                        cg_tol=1e-10, armijo_factor=0.5, armijo_slope=1e-4):
    """Newton solve of the optimal shift on the convexified objective.

    Each Newton system (I + weighted_cov) delta = -grad is solved by
    conjugate gradient with the Hessian applied matrix-free; an Armijo
    backtracking line search keeps the objective monotone.  Raises
    NotConverged (carrying the best iterate) past ``max_iter`` steps.
    """
    if batch.survivor_count == 0:
        raise NoSurvivors("cannot solve for a shift without survivors")
    theta = np.array(batch.base_shift if theta_init is None else theta_init,
                     dtype=float)
    if theta.shape != (batch.dimension,):
        raise DomainError("theta_init dimension does not match the batch")
    value = log_objective(theta, batch)
    for iteration in range(max_iter):
        pts, expo = _survivor_terms(theta, batch)
        s = _softmax(expo)
        mean = s @ pts
        grad = theta - mean
        grad_norm = np.linalg.norm(grad)
        if grad_norm <= tol:
            return _solution(theta, batch, iteration, grad_norm, True)

        centered = pts - mean

        def apply_hessian(v):
            return v + centered.T @ (s * (centered @ v))

        delta = _conjugate_gradient(apply_hessian, -grad, cg_tol,
                                    max_iter=min(batch.dimension, pts.shape[0] + 2))
        slope = grad @ delta
        if -slope <= 64.0 * np.finfo(float).eps * max(1.0, abs(value)):
            # the predicted decrease is below the objective's float
            # resolution; the quadratic model rules here, take the raw step
            theta = theta + delta
            value = log_objective(theta, batch)
            continue
        step = 1.0
        while True:
            candidate = theta + step * delta
            cand_value = log_objective(candidate, batch)
            if cand_value <= value + armijo_slope * step * slope:
                break
            step *= armijo_factor
            if step < 1e-18:
                raise NotConverged(
                    "line search failed to make progress",
                    best=_solution(theta, batch, iteration, grad_norm, False))
        theta, value = candidate, cand_value

    grad_norm = np.linalg.norm(log_objective_gradient(theta, batch))
    if grad_norm <= tol:
        return _solution(theta, batch, max_iter, grad_norm, True)
    raise NotConverged(
        f"no convergence within {max_iter} Newton iterations",
        best=_solution(theta, batch, max_iter, grad_norm, False))
