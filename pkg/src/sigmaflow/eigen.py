"""Nonlinear eigenvalue problem for sigma_k^{1/k} by the continuity method.

The equation solved is sigma_k^{1/k}(W(u)) - h e^u = rhs pointwise, with
W(u) the deformed Schouten expression assembled by the conformal module.
An auxiliary problem fixes (f, h); the continuation walks the right-hand
side from f (where u identically delta_lo is an exact solution) to the
constant lambda, warm-starting a damped Newton iteration whose linear
steps are restarted GMRES applies of the matrix-free Frechet derivative.
lambda* is then the supremum of solvable lambda, located by bisection, and
the eigenfunction is recovered by the renormalization phi = u - max u.

Admissibility (W(u) in the Gamma_k+ cone) is enforced on the initial
guess, on every accepted Newton iterate, and during line searches, where a
cone-violating candidate is treated as a failed step and the damping
halved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .conformal import ConformalState
from .errors import (
    ConfigurationError,
    ContinuationFailureError,
    NonconvergenceError,
)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
KRYLOV_RTOL = 1e-8
# The Jacobi preconditioner compresses the smooth low-frequency modes into
# a tiny cluster of the preconditioned spectrum; GMRES deflates that
# cluster only within one orthogonalized window, so short restarts discard
# the deflation and iteration counts explode near the solvability boundary.
# Two windows of 250 keep the overall cap at 500 applies per solve.
KRYLOV_RESTART = 250
KRYLOV_MAX_RESTARTS = 2
MIN_DAMPING = 2.0 ** -30


@dataclass(frozen=True)
class AuxiliaryProblem:
    """sigma_k^{1/k}(W(u)) = h e^u + f on a background geometry.

    f, when given, must be strictly positive; the pinch constant L with
    1/L <= f <= L is recorded as `bound`. h >= 0 may be a scalar or a
    field. Continuation builds its own path f, so f may be omitted for
    problems that exist only to be fed to continuation_run.
    """

    geometry: object
    k: int
    f: np.ndarray or None = None
    h: np.ndarray or float = 1.0
    bound: float = field(init=False, default=None)

    def __post_init__(self):
        n = self.geometry.grid.ndim
        if not 1 <= self.k <= n:
            raise ConfigurationError(f"curvature order k={self.k} outside 1..{n}")
        h = np.asarray(self.h, dtype=float)
        if not np.all(np.isfinite(h)) or np.any(h < 0.0):
            raise ConfigurationError("coefficient h must be finite and >= 0")
        if self.f is not None:
            f = np.asarray(self.f, dtype=float)
            if not np.all(np.isfinite(f)) or not np.all(f > 0.0):
                raise ConfigurationError(
                    f"f must be strictly positive (min {np.min(f):.6g})")
            object.__setattr__(self, "f", f)
            object.__setattr__(self, "bound",
                               float(max(np.max(f), 1.0 / np.min(f))))
        object.__setattr__(self, "h", h)

    def h_field(self):
        return np.broadcast_to(self.h, self.geometry.grid.shape)

    # --------------------------------------------------------- evaluation

    def _state(self, u):
        state = ConformalState(self.geometry, u, self.k)
        state.require_admissible()
        return state

    def _residual_of(self, state, rhs):
        ek = state.sigma_w_table()[..., self.k]
        return (ek ** (1.0 / self.k) - self.h_field() * np.exp(state.u)
                - rhs)

    def residual(self, u, rhs):
        """Pointwise sigma_k^{1/k}(W(u)) - h e^u - rhs; u must be admissible."""
        return self._residual_of(self._state(u), rhs)

    def linearize_apply(self, u, rho):
        """Directional derivative of residual at u in direction rho.

        Matrix-free: (1/k) sigma_k^{1/k-1} <T_{k-1}(W), dW(rho)> - h e^u rho
        with dW = Hess rho + du (x) drho + drho (x) du - <du, drho> g0.
        """
        apply_op, _ = _frechet_pieces(self, self._state(u))
        return apply_op(np.asarray(rho, dtype=float))


def _frechet_pieces(problem, state):
    """(apply, diagonal estimate) of the Frechet derivative at state.u."""
    geom = problem.geometry
    k = problem.k
    n = geom.grid.ndim
    ek = state.sigma_w_table()[..., k]
    t_field = state.newton_field()
    prefac = (ek ** (1.0 / k - 1.0)) / k
    grad_u, _ = geom.gradient_and_norm(state.u)
    zeroth = problem.h_field() * np.exp(state.u)
    eye = np.eye(n)

    def apply_op(rho):
        jet = geom.scalar_jet(rho)
        hess = geom.covariant_hessian(rho, jet=jet)
        grad_r, _ = geom.gradient_and_norm(rho, parts=jet[0])
        cross = grad_u[..., :, None] * grad_r[..., None, :]
        dot = np.einsum("...a,...a->...", grad_u, grad_r)
        dw = hess + cross + np.swapaxes(cross, -1, -2)
        dw = dw - dot[..., None, None] * eye
        inner = np.einsum("...ab,...ab->...", t_field, dw)
        return prefac * inner - zeroth * rho

    # diagonal of the second-difference centers plus the zeroth-order term;
    # strictly negative in the cone (T is positive definite there), which
    # is all a Jacobi preconditioner needs
    center = 2.0 if geom.fd_order == 2 else 2.5
    lap_diag = np.zeros(geom.grid.shape)
    for a in range(n):
        lap_diag -= (t_field[..., a, a] * center
                     / (geom.grid.spacing[a] * geom.lame[a]) ** 2)
    diag = prefac * lap_diag - zeroth
    return apply_op, diag


def _candidate_state(problem, u):
    """Admissible state for a trial iterate, or None if it is unusable."""
    if not np.all(np.isfinite(u)):
        return None
    state = ConformalState(problem.geometry, u, problem.k)
    if not state.cone_report().label.inside:
        return None
    return state


def newton_solve(problem, rhs, guess, newton_tol=NEWTON_TOL,
                 max_iter=NEWTON_MAX_ITER, stats=None):
    """Damped Newton for residual(u, rhs) = 0 from an admissible guess.

    Line search halves the step on residual max-norm increase or on a
    cone-violating candidate; a step that cannot make progress at minimal
    damping raises NonconvergenceError. Inner solves are restarted GMRES
    with a Jacobi preconditioner, never forming the operator.
    """
    geom = problem.geometry
    rhs = np.asarray(rhs, dtype=float)
    state = problem._state(np.asarray(guess, dtype=float))
    res = problem._residual_of(state, rhs)
    rnorm = float(np.max(np.abs(res)))
    history = [rnorm]
    krylov = 0
    size = res.size

    for iteration in range(max_iter):
        if rnorm <= newton_tol:
            break
        apply_op, diag = _frechet_pieces(problem, state)
        op = LinearOperator(
            (size, size),
            matvec=lambda x: apply_op(x.reshape(geom.grid.shape)).ravel())
        inv_diag = 1.0 / diag.ravel()
        precond = LinearOperator((size, size), matvec=lambda x: x * inv_diag)
        counter = [0]

        def count(_):
            counter[0] += 1

        direction, _ = gmres(op, -res.ravel(), rtol=KRYLOV_RTOL, atol=0.0,
                             restart=KRYLOV_RESTART,
                             maxiter=KRYLOV_MAX_RESTARTS, M=precond,
                             callback=count, callback_type="pr_norm")
        krylov += counter[0]
        if not np.all(np.isfinite(direction)):
            raise NonconvergenceError(
                "Newton direction is non-finite (singular linearization)",
                diagnostics={"iteration": iteration, "residual_norm": rnorm})
        direction = direction.reshape(geom.grid.shape)

        alpha = 1.0
        accepted = None
        while alpha >= MIN_DAMPING:
            with np.errstate(over="ignore", invalid="ignore"):
                trial = _candidate_state(problem, state.u + alpha * direction)
                if trial is not None:
                    trial_res = problem._residual_of(trial, rhs)
                    if (np.all(np.isfinite(trial_res))
                            and float(np.max(np.abs(trial_res))) < rnorm):
                        accepted = (trial, trial_res)
                        break
            alpha *= 0.5
        if accepted is None:
            raise NonconvergenceError(
                "Newton stalled: no residual decrease at minimal damping",
                diagnostics={"iteration": iteration, "residual_norm": rnorm,
                             "krylov_iterations": krylov})
        state, res = accepted
        rnorm = float(np.max(np.abs(res)))
        history.append(rnorm)

    if rnorm > newton_tol:
        raise NonconvergenceError(
            f"Newton did not reach tolerance {newton_tol:g} in "
            f"{max_iter} iterations (residual {rnorm:.3g})",
            diagnostics={"residual_norm": rnorm, "history": history,
                         "krylov_iterations": krylov})
    if stats is not None:
        stats["newton_iterations"] = stats.get("newton_iterations", 0) \
            + len(history) - 1
        stats["krylov_iterations"] = stats.get("krylov_iterations", 0) + krylov
        stats["residual_history"] = history
    return state.u


@dataclass
class ContinuationState:
    """Accepted end state of a continuation walk."""

    t: float
    u: np.ndarray
    lam: float
    newton_iterations: int = 0
    krylov_iterations: int = 0
    t_steps: int = 0
    bounds: tuple = (None, None)


def continuation_run(problem, lam, guess=None, t_step=0.25, min_t_step=1e-4,
                     newton_tol=NEWTON_TOL, escape_floor=-50.0):
    """Walk the right-hand side from f to the constant lam.

    The start value u identically delta_lo solves the t=0 problem exactly
    by construction of f = sigma_k^{1/k}(S0) - h e^{delta_lo}. The t-step
    halves on Newton failure and doubles after two easy successes; an
    underflow below min_t_step means lam is presumed at or above lambda*.
    """
    if not lam > 0.0:
        raise ConfigurationError(f"continuation target lambda={lam} must be > 0")
    geom = problem.geometry
    h = problem.h_field()
    h_max = float(np.max(h))
    h_min = float(np.min(h))
    if h_min <= 0.0:
        raise ConfigurationError(
            "continuation needs a strictly positive coefficient h")

    base = problem._state(np.zeros(geom.grid.shape))
    s0 = base.sigma_w_table()[..., problem.k] ** (1.0 / problem.k)
    s_min = float(np.min(s0))
    s_max = float(np.max(s0))
    if not s_min - lam > 0.0:
        raise ContinuationFailureError(
            f"cannot bracket the start: lambda={lam:.6g} is not below "
            f"min sigma_k^(1/k)(S0) = {s_min:.6g}",
            diagnostics={"lam": lam, "s_min": s_min})
    delta_lo = min(0.0, math.log((s_min - lam) / h_max)) - 1.0
    delta_hi = max(0.0, math.log((s_max - lam) / h_min)) + 1.0

    f = s0 - h * math.exp(delta_lo)
    path = AuxiliaryProblem(geom, problem.k, f=f, h=problem.h)
    stats = {}
    start = np.full(geom.grid.shape, delta_lo) if guess is None \
        else np.asarray(guess, dtype=float)
    u = newton_solve(path, f, start, newton_tol=newton_tol, stats=stats)

    def check_bounds(u, t):
        slack = 1e-8 * (1.0 + abs(delta_lo) + abs(delta_hi))
        if float(np.min(u)) < delta_lo - slack \
                or float(np.max(u)) > delta_hi + slack:
            raise NonconvergenceError(
                f"maximum principle bounds [{delta_lo:.6g}, {delta_hi:.6g}] "
                f"violated at t={t:.6g}",
                diagnostics={"t": t, "min_u": float(np.min(u)),
                             "max_u": float(np.max(u))})
        if float(np.max(u)) < escape_floor:
            raise ContinuationFailureError(
                f"solutions escaping (max u < {escape_floor:g}); "
                "lambda presumed >= lambda*",
                diagnostics={"t": t, "max_u": float(np.max(u)), "lam": lam})

    check_bounds(u, 0.0)
    t = 0.0
    dt = float(t_step)
    steps = 0
    streak = 0
    while t < 1.0:
        t_try = min(1.0, t + dt)
        rhs = t_try * lam + (1.0 - t_try) * f
        before = stats.get("newton_iterations", 0)
        try:
            u_next = newton_solve(path, rhs, u, newton_tol=newton_tol,
                                  stats=stats)
        except NonconvergenceError:
            dt *= 0.5
            if dt < min_t_step:
                raise ContinuationFailureError(
                    f"continuation step underflow at t={t:.6g} "
                    f"(lambda={lam:.6g} presumed >= lambda*)",
                    diagnostics={"t_reached": t, "lam": lam, "dt": dt})
            continue
        u = u_next
        t = t_try
        steps += 1
        check_bounds(u, t)
        if stats.get("newton_iterations", 0) - before <= 3:
            streak += 1
            if streak >= 2:
                dt = min(2.0 * dt, 0.5)
                streak = 0
        else:
            streak = 0
    return ContinuationState(t=1.0, u=u, lam=lam,
                             newton_iterations=stats.get("newton_iterations", 0),
                             krylov_iterations=stats.get("krylov_iterations", 0),
                             t_steps=steps, bounds=(delta_lo, delta_hi))


def maclaurin_ceiling(geometry, k):
    """A-priori upper bound for lambda*: C(n,k)^{1/k} mean(trace S0) / n.

    The Maclaurin inequality bounds sigma_k^{1/k} by the first elementary
    mean; integrating the trace of W kills the Hessian and the gradient
    terms only lower it, leaving the background Schouten trace.
    """
    n = geometry.grid.ndim
    trace = np.trace(np.broadcast_to(
        geometry.schouten0, geometry.grid.shape + (n, n)),
        axis1=-2, axis2=-1)
    mean = geometry.integrate(trace) / geometry.integrate(
        np.ones(geometry.grid.shape))
    return math.comb(n, k) ** (1.0 / k) * mean / n


def lambda_star_search(problem, tolerance, guess=None, stats=None):
    """Bisect lambda between solvable and unsolvable; return (phi, lambda*).

    phi = u - max u from the largest solvable lambda found; lambda* is the
    final bracket midpoint. The lower end starts at a tenth of the worst
    constant-state value (guaranteed solvable), the upper end at the
    Maclaurin ceiling (at or above lambda*, hence unsolvable).
    """
    if not tolerance > 0.0:
        raise ConfigurationError(f"tolerance={tolerance} must be > 0")
    base = problem._state(np.zeros(problem.geometry.grid.shape))
    s0 = base.sigma_w_table()[..., problem.k] ** (1.0 / problem.k)
    lam_lo = 0.1 * float(np.min(s0))
    lam_hi = maclaurin_ceiling(problem.geometry, problem.k)
    if not lam_hi > lam_lo:
        raise ConfigurationError(
            f"degenerate bracket: ceiling {lam_hi:.6g} <= start {lam_lo:.6g}")

    acc = {"newton_iterations": 0, "krylov_iterations": 0, "bisections": 0}
    try:
        state = continuation_run(problem, lam_lo, guess=guess)
    except ContinuationFailureError as failure:
        raise ConfigurationError(
            f"no solvable lambda found (failed at {lam_lo:.6g}); "
            "the chart does not admit the k-th cone problem") from failure
    acc["newton_iterations"] += state.newton_iterations
    acc["krylov_iterations"] += state.krylov_iterations
    lo, u_best = lam_lo, state.u

    hi = lam_hi
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        try:
            state = continuation_run(problem, mid)
        except ContinuationFailureError:
            hi = mid
        else:
            acc["newton_iterations"] += state.newton_iterations
            acc["krylov_iterations"] += state.krylov_iterations
            lo, u_best = mid, state.u
        acc["bisections"] += 1

    phi = u_best - float(np.max(u_best))
    lambda_star = 0.5 * (lo + hi)
    if stats is not None:
        stats.update(acc, ceiling=lam_hi, bracket=(lo, hi),
                     lambda_solvable=lo)
    return phi, lambda_star
