"""Explicit time stepping for the normalized sigma_k curvature flow.

The conformal factor of g = e^{-2u} g0 is driven by

    du/dt = (log sigma_k(g) - log r_k(g)) / 2,

where r_k is the geometric mean of sigma_k(g) under dvol(g). Subtracting
the mean makes the speed integrate to zero against dvol(g), which is what
preserves the volume; inside the Gamma_k+ cone the right-hand side is
parabolic with diffusion coefficient T_{k-1}(W) / (2 sigma_k(W)), and the
CFL bound tracks exactly that coefficient. A quotient variant drives
log(sigma_k/sigma_l) instead; sigma_0 = 1 makes l = 0 coincide with the
primary flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fieldalg
from .conformal import ConformalState
from .errors import ConfigurationError, FlowFailureError
from .fieldio import _atomic_write

# CSV schema of the monitor series; the column order is part of the
# external format and must not change.
MONITOR_FIELDS = ("time", "volume", "F_k", "r_k", "l2_sigma_minus_r",
                  "min_sigma", "max_abs_W", "harnack", "max_abs_u")

_SCHEMES = ("euler", "midpoint")


@dataclass(frozen=True)
class FlowConfig:
    """Numerical controls for one flow run.

    dt_initial, when set, caps every step (useful for fixed-dt studies);
    the CFL bound still applies. convergence_tol acts on the relative
    residual |sigma - r|_L2(g) / |sigma|_L2(g); zero disables the detector.
    """

    k: int
    t_end: float
    dt_initial: float or None = None
    cfl_safety: float = 0.4
    monitor_every: int = 1
    convergence_tol: float = 1e-5
    quotient_l: int or None = None
    scheme: str = "euler"

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"curvature order k={self.k} must be >= 1")
        if not self.t_end > 0:
            raise ConfigurationError(f"t_end={self.t_end} must be positive")
        if self.dt_initial is not None and not self.dt_initial > 0:
            raise ConfigurationError(f"dt_initial={self.dt_initial} must be positive")
        if not 0.0 < self.cfl_safety <= 1.0:
            raise ConfigurationError(
                f"cfl_safety={self.cfl_safety} outside (0, 1]")
        if self.monitor_every < 1:
            raise ConfigurationError("monitor_every must be a positive step count")
        if self.convergence_tol < 0:
            raise ConfigurationError("convergence_tol must be >= 0")
        if self.quotient_l is not None and not 0 <= self.quotient_l < self.k:
            raise ConfigurationError(
                f"quotient order l={self.quotient_l} outside 0..{self.k - 1}")
        if self.scheme not in _SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class MonitorRecord:
    """One row of the monitor series.

    The MONITOR_FIELDS prefix is the CSV schema. The trailing fields stay
    in memory only: l2_sigma and rel_residual feed the convergence
    detector, dissipation_rhs is the right-hand side of the F_k dissipation
    identity (None on quotient runs with l >= 1, where it does not apply).
    For quotient runs r_k and the residual columns refer to the driven
    quantity sigma_k/sigma_l.
    """

    time: float
    volume: float
    F_k: float
    r_k: float
    l2_sigma_minus_r: float
    min_sigma: float
    max_abs_W: float
    harnack: float
    max_abs_u: float
    dissipation_rhs: float or None
    l2_sigma: float
    rel_residual: float


@dataclass
class FlowState:
    """Mutable bookkeeping for a run; u is the current conformal factor."""

    time: float
    u: np.ndarray
    step_count: int = 0
    last_dt: float = 0.0
    accepted: int = 0
    rejected: int = 0
    converged: bool = False
    beta: float or None = None


@dataclass(frozen=True)
class PositivityReport:
    """Largest double-exponential floor consistent with a monitor series."""

    positive: bool
    c: float or None
    curve: tuple or None
    first_violation_time: float or None


# ----------------------------------------------------------------- speed

def _log_target(state, quotient_l):
    """log of the driven quantity: sigma_k(g), or sigma_k(g)/sigma_l(g)."""
    if quotient_l is None:
        return state.log_sigma_field()
    state.require_admissible()
    etable = state.sigma_w_table()
    k, l = state.k, quotient_l
    val = 2.0 * (k - l) * state.u + np.log(etable[..., k])
    if l > 0:
        # sigma_0 = 1, so l = 0 needs no correction and reduces to the
        # primary flow bit for bit.
        val = val - np.log(etable[..., l])
    return val


def _speed_and_mean(state, quotient_l=None):
    logt = _log_target(state, quotient_l)
    mean = state.geometry.integrate(
        logt, weight=state.conformal_weight()) / state.volume()
    return 0.5 * (logt - mean), mean


def flow_speed(state, quotient_l=None):
    """Pointwise du/dt; mean-zero against dvol(g) by construction."""
    return _speed_and_mean(state, quotient_l)[0]


# ------------------------------------------------------------- step size

def diffusion_bound(state):
    """max over nodes of lambda_max(T_{k-1}(W)) / (2 sigma_k(W)).

    This is the coefficient of the principal part of the linearized speed
    in the background orthonormal frame: the e^{2u} factors of the g-form
    Newton tensor and of the g-Laplacian cancel, leaving a shift-invariant
    bound, consistent with the flow's own shift equivariance.
    """
    state.require_admissible()
    etable = state.sigma_w_table()
    bound = fieldalg.lambda_max_bound(state.newton_field())
    return float(np.max(bound / (2.0 * etable[..., state.k])))


def cfl_dt(state, cfl_safety=0.4):
    """Parabolic stability bound for the explicit step.

    Second differences along axis a carry weight 1/(h_a H_a)^2. The frame
    factor uses the rms of H_a over the grid: the rows where H_a vanishes
    (polar axes near the poles) only carry modes that the antipodal ghost
    identification keeps smooth, so the rms, not the pointwise minimum, is
    the stiffness scale seen by smooth data. The +k term accounts for the
    zeroth-order 2ku part of log sigma_k(g).
    """
    geom = state.geometry
    d_max = diffusion_bound(state)
    # largest symbol of the second-difference stencil, halved by the 1/2
    # in the flow speed: 4/h^2 at second order, 16/(3h^2) at fourth.
    coef = 2.0 if geom.fd_order == 2 else 8.0 / 3.0
    denom = float(state.k)
    for a in range(geom.grid.ndim):
        h2 = np.broadcast_to(np.square(np.asarray(geom.lame[a], dtype=float)),
                             geom.grid.shape)
        rms = math.sqrt(float(np.mean(h2)))
        denom += d_max * coef / (geom.grid.spacing[a] * rms) ** 2
    return cfl_safety / denom


# ---------------------------------------------------------------- stepping

def _admissible_candidate(geom, u_new, k):
    """Build the trial state, or None when it must be rejected."""
    if not np.all(np.isfinite(u_new)):
        return None
    trial = ConformalState(geom, u_new, k)
    if not trial.cone_report().label.inside:
        return None
    return trial


def step(state, dt, scheme="euler", quotient_l=None, max_halvings=30):
    """One accepted explicit step from an admissible state.

    Returns (new_state, dt_used, n_rejected). A candidate leaving the cone
    or producing non-finite values is rejected and dt halved; after
    max_halvings consecutive rejections the step gives up and reports the
    last valid state in the error diagnostics.
    """
    if scheme not in _SCHEMES:
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    if not dt > 0:
        raise ConfigurationError(f"step size dt={dt} must be positive")
    geom = state.geometry
    s0 = flow_speed(state, quotient_l)
    rejected = 0
    trial_dt = float(dt)
    while True:
        trial = None
        if scheme == "euler":
            trial = _admissible_candidate(geom, state.u + trial_dt * s0, state.k)
        else:
            half = _admissible_candidate(
                geom, state.u + 0.5 * trial_dt * s0, state.k)
            if half is not None:
                s_mid = flow_speed(half, quotient_l)
                trial = _admissible_candidate(
                    geom, state.u + trial_dt * s_mid, state.k)
        if trial is not None:
            return trial, trial_dt, rejected
        rejected += 1
        if rejected > max_halvings:
            raise FlowFailureError(
                f"step rejected {rejected} times (dt {dt:.3g} -> {trial_dt:.3g}); "
                "state persistently leaves the cone or overflows",
                diagnostics={"dt_requested": float(dt), "dt_last": trial_dt,
                             "rejections": rejected, "last_valid_state": state})
        trial_dt *= 0.5


# ------------------------------------------------------------------ monitor

def _record(state, time, quotient_l):
    """Full monitor row at the current state (one pass of reductions)."""
    geom = state.geometry
    n = geom.grid.ndim
    weight = state.conformal_weight()
    vol = state.volume()
    logt = _log_target(state, quotient_l)
    mean = geom.integrate(logt, weight=weight) / vol
    r_flow = math.exp(mean)
    target = np.exp(logt)
    diff = target - r_flow
    l2_diff = math.sqrt(geom.integrate(diff * diff, weight=weight))
    l2_target = math.sqrt(geom.integrate(target * target, weight=weight))
    if quotient_l is None or quotient_l == 0:
        sigma = target
        rhs = (-(n - 2.0 * state.k) / 2.0 * vol ** ((2.0 * state.k - n) / n)
               * geom.integrate(diff * (logt - mean), weight=weight))
    else:
        sigma = state.sigma_field()
        rhs = None
    return MonitorRecord(
        time=float(time),
        volume=vol,
        F_k=state.F_k(),
        r_k=r_flow,
        l2_sigma_minus_r=l2_diff,
        min_sigma=float(np.min(sigma)),
        max_abs_W=float(np.max(np.abs(state.w_field()))),
        harnack=state.harnack_quantity(),
        max_abs_u=float(np.max(np.abs(state.u))),
        dissipation_rhs=rhs,
        l2_sigma=l2_target,
        rel_residual=l2_diff / l2_target,
    )


def write_monitor_csv(path, records):
    """Monitor series as CSV with 17 significant digits (round-trip exact)."""
    lines = [",".join(MONITOR_FIELDS)]
    for rec in records:
        lines.append(",".join("%.17g" % getattr(rec, name)
                              for name in MONITOR_FIELDS))
    _atomic_write(path, lines)


# --------------------------------------------------------------------- run

def run(geom, u0, config, on_record=None):
    """Integrate the flow to t_end or to convergence.

    Returns (FlowState, records). Convergence is declared on the relative
    L2(g) residual of the driven quantity; beta is the final r_k, reported
    only for converged runs with 2k != n (at 2k = n the scale invariance
    makes the constant a gauge choice, so only monitors are reported).
    on_record, when given, is called with (flow, state, record) for every
    kept monitor row; callers hang snapshot writers off it.
    """
    state = ConformalState(geom, u0, config.k)
    state.require_admissible()
    flow = FlowState(time=0.0, u=state.u)
    rec = _record(state, 0.0, config.quotient_l)
    records = [rec]
    if on_record is not None:
        on_record(flow, state, rec)

    def detect(rec):
        return (config.convergence_tol > 0
                and rec.rel_residual < config.convergence_tol)

    n = geom.grid.ndim
    if detect(rec):
        flow.converged = True
        if 2 * config.k != n:
            flow.beta = rec.r_k
        return flow, records

    t_end = float(config.t_end)
    cfl = cfl_dt(state, config.cfl_safety)
    while flow.time < t_end * (1.0 - 1e-12):
        # While a fixed dt_initial binds with a factor-2 margin, the CFL
        # bound moves on the slow time scale of the fields and a cached
        # value refreshed every 25 steps is still a strict bound in
        # practice; the step's own rejection path guards the remainder.
        stale_ok = (config.dt_initial is not None
                    and 2.0 * config.dt_initial <= cfl
                    and flow.step_count % 25 != 0)
        if not stale_ok:
            cfl = cfl_dt(state, config.cfl_safety)
        dt = cfl
        if config.dt_initial is not None:
            dt = min(dt, config.dt_initial)
        dt = min(dt, t_end - flow.time)
        state, dt_used, n_rej = step(state, dt, config.scheme,
                                     config.quotient_l)
        flow.time += dt_used
        flow.step_count += 1
        flow.last_dt = dt_used
        flow.accepted += 1
        flow.rejected += n_rej
        flow.u = state.u
        done = flow.time >= t_end * (1.0 - 1e-12)
        # With the detector disabled the off-cadence rows are never read,
        # so only materialize the reductions on rows that get kept.
        want = (done or config.convergence_tol > 0
                or flow.step_count % config.monitor_every == 0)
        if not want:
            continue
        rec = _record(state, flow.time, config.quotient_l)
        if done or detect(rec) or flow.step_count % config.monitor_every == 0:
            records.append(rec)
            if on_record is not None:
                on_record(flow, state, rec)
        if detect(rec):
            flow.converged = True
            if 2 * config.k != n:
                flow.beta = rec.r_k
            break
    return flow, records


# ------------------------------------------------------------- positivity

def _fit_floor(time, min_sigma):
    """Solve c * exp(-e^time / c) = min_sigma for c (increasing in c)."""
    target = min_sigma
    growth = math.exp(time)

    def floor(c):
        return c * math.exp(-growth / c)

    lo = hi = target
    while floor(hi) < target:
        lo = hi
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if floor(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    return 0.5 * (lo + hi)


def positivity_monitor(records):
    """Largest c with min_sigma(t) >= c exp(-e^t / c) along the whole run.

    The bound is a safety net: healthy runs sit far above it. A record with
    min_sigma <= 0 flags the series as non-positive instead of fitting.
    """
    for rec in records:
        if not rec.min_sigma > 0.0:
            return PositivityReport(False, None, None, rec.time)
    c = min(_fit_floor(rec.time, rec.min_sigma) for rec in records)
    curve = tuple(c * math.exp(-math.exp(rec.time) / c) for rec in records)
    return PositivityReport(True, c, curve, None)
