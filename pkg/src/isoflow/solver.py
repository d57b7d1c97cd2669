"""Time integration of rho u_t = J*u - u: explicit and integrating-factor
steps, the fixed-point oracle, and monotone approximation drivers."""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import fft as sp_fft
from scipy import sparse

from . import diagnostics
from .grids import (DomainMask, Field, _check_stencil_fits, _fft_plan,
                    _slice_pair, masked_exchange_matrix)
from .kernels import stencil_second_moment
from .media import classify, floor as floor_medium

_SCHEMES = ("euler", "exponential", "picard-oracle")
_BOUNDARIES = ("zero-extend", "mask")


class SolverError(RuntimeError):
    """Invalid solver configuration or a failed solve."""


class NumericalAbort(SolverError):
    """A step produced non-finite values."""

    def __init__(self, step_index):
        super().__init__(f"non-finite values detected at step {step_index}")
        self.step_index = step_index


@dataclass
class SolverConfig:
    scheme: str = "exponential"
    dt: float = 0.1
    t_end: float = 1.0
    boundary: str = "zero-extend"
    mask_radius: float | None = None
    snapshot_every: int = 1
    floor_alpha: float | None = None
    picard_tol: float = 1e-10

    def validate(self):
        if self.scheme not in _SCHEMES:
            raise SolverError(f"unknown scheme {self.scheme!r}")
        if self.boundary not in _BOUNDARIES:
            raise SolverError(f"unknown boundary mode {self.boundary!r}")
        if self.dt <= 0 or self.t_end < 0:
            raise SolverError("dt must be positive and t_end nonnegative")
        if self.snapshot_every < 1:
            raise SolverError("snapshot_every must be at least 1")
        if self.boundary == "mask" and self.mask_radius is None:
            raise SolverError("mask boundary mode needs mask_radius")


@dataclass
class Trajectory:
    """Time-ordered snapshots plus per-snapshot diagnostics."""
    snapshots: list = dc_field(default_factory=list)
    diagnostics: list = dc_field(default_factory=list)

    def times(self):
        return np.array([t for t, _ in self.snapshots])

    def final(self):
        return self.snapshots[-1][1]

    def validate(self):
        ts = self.times()
        if np.any(np.diff(ts) <= 0):
            raise SolverError("trajectory times must be strictly increasing")


def stability_dt(medium, grid):
    """Largest explicit-Euler step: min over grid nodes of rho.

    The explicit update is a convex combination only when dt <= rho(x)
    everywhere; the integrating-factor scheme has no such restriction.
    """
    return float(np.min(medium.sample(grid)))


# ---------------------------------------------------------------------------
# single-step operations (reference implementations; the run loop uses the
# precompiled steppers below, which match these to rounding)


def _mask_kappa(stencil, mask):
    """In-domain kernel mass per node: sum over interior y of w(x - y)."""
    chi = mask.indicator()
    kappa = np.zeros_like(chi)
    for offset, w in zip(stencil.offsets, stencil.weights):
        dst, src = _slice_pair(chi.shape, offset)
        kappa[dst] += w * chi[src]
    return kappa * chi


def _effective_step(rho, kappa, dt):
    """Per-node integrating-factor step length rho(1 - exp(-kappa dt/rho))/kappa.

    Tends to dt as dt -> 0 and saturates at rho/kappa; always in (0, dt].
    """
    return rho * (-np.expm1(-kappa * dt / rho)) / kappa


def _masked_euler_update(u, rho, inside, stencil, dt):
    buf = np.zeros_like(u)
    for offset, w in zip(stencil.offsets, stencil.weights):
        if np.all(offset == 0):
            continue
        dst, src = _slice_pair(u.shape, offset)
        ok = inside[dst] & inside[src]
        buf[dst] += np.where(ok, w * (u[src] - u[dst]), 0.0)
    return u + np.where(inside, dt * buf / rho, 0.0)


def _masked_exponential_update(u, rho, inside, stencil, r_eff):
    # pairwise symmetric relaxation: each ordered pair exchanges
    # w * min(r_eff(x), r_eff(y)) * (u(y) - u(x)), an antisymmetric flux, so
    # the rho-weighted sum over the mask is conserved to rounding while the
    # per-node exchange stays capped by the integrating-factor step (the
    # update remains a convex combination for every dt).
    buf = np.zeros_like(u)
    for offset, w in zip(stencil.offsets, stencil.weights):
        if np.all(offset == 0):
            continue
        dst, src = _slice_pair(u.shape, offset)
        ok = inside[dst] & inside[src]
        s = np.minimum(r_eff[dst], r_eff[src])
        buf[dst] += np.where(ok, w * s * (u[src] - u[dst]), 0.0)
    return u + np.where(inside, buf / rho, 0.0)


def step_euler(u, medium, stencil, dt, boundary="zero-extend", mask=None):
    """One forward-difference step of rho u_t = J*u - u.

    Requires dt within the stability bound min(rho); the masked form exchanges
    only between mask-interior nodes and conserves the rho-weighted mass.
    """
    _check_stencil_fits(u, stencil)
    grid = u.grid
    rho = medium.sample(grid)
    limit = float(rho.min())
    if dt > limit * (1 + 1e-12):
        raise SolverError(
            f"dt={dt:g} violates the explicit stability bound stability_dt={limit:g}")
    if boundary == "zero-extend":
        conv = np.zeros_like(u.values)
        for offset, w in zip(stencil.offsets, stencil.weights):
            dst, src = _slice_pair(u.values.shape, offset)
            conv[dst] += w * u.values[src]
        return Field(grid, u.values + dt * (conv - u.values) / rho, copy=False)
    if boundary == "mask":
        if mask is None or mask.grid != grid:
            raise SolverError("mask boundary mode needs a DomainMask on the same grid")
        vals = u.values * mask.indicator()
        out = _masked_euler_update(vals, rho, mask.inside, stencil, dt)
        return Field(grid, out, copy=False)
    raise SolverError(f"unknown boundary mode {boundary!r}")


def step_exponential(u, medium, stencil, dt, boundary="zero-extend", mask=None):
    """One integrating-factor step with the convolution frozen over the step.

    Zero-extend: u+ = e^(-dt/rho) u + (1 - e^(-dt/rho)) J*u, the exact flow of
    the frozen-convolution equation. Masked: the conservative pairwise form of
    the same update (see _masked_exponential_update), which keeps the exact
    discrete conservation law at any dt. Both are positivity-preserving and
    bounded by the data range for renormalized stencils, with no dt
    restriction.
    """
    if dt <= 0:
        raise SolverError("dt must be positive")
    _check_stencil_fits(u, stencil)
    grid = u.grid
    rho = medium.sample(grid)
    if boundary == "zero-extend":
        conv = np.zeros_like(u.values)
        for offset, w in zip(stencil.offsets, stencil.weights):
            dst, src = _slice_pair(u.values.shape, offset)
            conv[dst] += w * u.values[src]
        a = np.exp(-dt / rho)
        return Field(grid, a * u.values + (1.0 - a) * conv, copy=False)
    if boundary == "mask":
        if mask is None or mask.grid != grid:
            raise SolverError("mask boundary mode needs a DomainMask on the same grid")
        kappa = _mask_kappa(stencil, mask)
        if np.any((kappa <= 0) & mask.inside):
            raise SolverError("mask contains a node with zero in-domain kernel mass")
        vals = u.values * mask.indicator()
        kappa_safe = np.where(mask.inside, kappa, 1.0)
        r_eff = np.where(mask.inside, _effective_step(rho, kappa_safe, dt), 0.0)
        out = _masked_exponential_update(vals, rho, mask.inside, stencil, r_eff)
        return Field(grid, out, copy=False)
    raise SolverError(f"unknown boundary mode {boundary!r}")


# ---------------------------------------------------------------------------
# precompiled steppers for the run loop


class _ZeroExtendStepper:
    """FFT-backed fixed-dt stepper for the zero-extend boundary."""

    def __init__(self, grid, medium, stencil, scheme, dt):
        self.grid = grid
        self.scheme = scheme
        self.dt = dt
        self.rho = medium.sample(grid)
        if scheme == "euler":
            limit = float(self.rho.min())
            if dt > limit * (1 + 1e-12):
                raise SolverError(
                    f"dt={dt:g} violates the explicit stability bound "
                    f"stability_dt={limit:g}")
        self.pad_shape, self.khat = _fft_plan(grid.shape, stencil)
        self.region = tuple(slice(0, n) for n in grid.shape)
        self.decay = np.exp(-dt / self.rho)

    def _conv(self, values):
        fpad = np.zeros(self.pad_shape)
        fpad[self.region] = values
        return sp_fft.irfftn(sp_fft.rfftn(fpad) * self.khat, s=self.pad_shape)[self.region]

    def step(self, values):
        conv = self._conv(values)
        if self.scheme == "euler":
            return values + self.dt * (conv - values) / self.rho
        return self.decay * values + (1.0 - self.decay) * conv

    def rate(self, values):
        """Operator-based u_t = (J*u - u)/rho for diagnostics."""
        return (self._conv(values) - values) / self.rho


class _MaskedStepper:
    """Sparse-matrix fixed-dt stepper for the masked (no-flux) boundary.

    Falls back to per-offset array sweeps when the exchange matrix would be
    too large to materialize.
    """

    def __init__(self, grid, medium, stencil, mask, scheme, dt, nnz_cap=20_000_000):
        self.grid = grid
        self.mask = mask
        self.scheme = scheme
        self.dt = dt
        self.stencil = stencil
        self.rho_full = medium.sample(grid)
        self.inside = mask.inside
        self.rho = self.rho_full[self.inside]
        if scheme == "euler":
            limit = float(self.rho.min())
            if dt > limit * (1 + 1e-12):
                raise SolverError(
                    f"dt={dt:g} violates the explicit stability bound "
                    f"stability_dt={limit:g}")
        self.matrix_mode = mask.n_nodes * len(stencil) <= nnz_cap
        w0 = stencil.self_weight()
        if self.matrix_mode:
            W = masked_exchange_matrix(stencil, mask, nnz_cap)
            kappa = np.asarray(W.sum(axis=1)).ravel() + w0
            if np.any(kappa <= 0):
                raise SolverError("mask contains a node with zero in-domain kernel mass")
            self.kappa = kappa
            if scheme == "euler":
                self.W = W
                self.kdiag = kappa - w0
            else:
                r = _effective_step(self.rho, kappa, dt)
                coo = W.tocoo()
                data = coo.data * np.minimum(r[coo.row], r[coo.col])
                C = sparse.csr_matrix((data, (coo.row, coo.col)), shape=W.shape)
                self.C = C
                self.cdiag = np.asarray(C.sum(axis=1)).ravel()
        else:
            kappa_full = _mask_kappa(stencil, mask)
            if np.any((kappa_full <= 0) & self.inside):
                raise SolverError("mask contains a node with zero in-domain kernel mass")
            kappa_safe = np.where(self.inside, kappa_full, 1.0)
            self.r_eff = np.where(
                self.inside, _effective_step(self.rho_full, kappa_safe, dt), 0.0)

    def restrict(self, values):
        return values[self.inside]

    def scatter(self, vec):
        out = np.zeros(self.grid.shape)
        out[self.inside] = vec
        return out

    def step(self, state):
        if self.matrix_mode:
            if self.scheme == "euler":
                return state + self.dt * (self.W @ state - self.kdiag * state) / self.rho
            return state + (self.C @ state - self.cdiag * state) / self.rho
        full = self.scatter(state)
        if self.scheme == "euler":
            out = _masked_euler_update(full, self.rho_full, self.inside,
                                       self.stencil, self.dt)
        else:
            out = _masked_exponential_update(full, self.rho_full, self.inside,
                                             self.stencil, self.r_eff)
        return out[self.inside]

    def rate(self, state):
        if self.matrix_mode:
            if self.scheme == "euler":
                return (self.W @ state - self.kdiag * state) / self.rho
            # generator, not the per-step increment: exchange at raw weights
            W = getattr(self, "_Wgen", None)
            if W is None:
                W = masked_exchange_matrix(self.stencil, self.mask)
                self._Wgen = W
                self._kgen = np.asarray(W.sum(axis=1)).ravel()
            return (W @ state - self._kgen * state) / self.rho
        full = self.scatter(state)
        upd = _masked_euler_update(full, self.rho_full, self.inside, self.stencil, 1.0)
        return (upd - full)[self.inside]


@dataclass
class Probes:
    """What the per-snapshot diagnostics measure."""
    lp_p: float = 2.0
    lp_radius: float | None = None
    dist_target: str = "auto"   # auto | e_rho | zero


def _resolve_target(medium, u0, boundary, mask, probes):
    """Constant the distance columns compare against: the rho-weighted mean of
    the initial data when the medium is integrable (grid-local in mask mode),
    zero otherwise."""
    if probes.dist_target == "zero":
        return 0.0
    cls = classify(medium)
    if probes.dist_target == "e_rho" and cls.integrable is not True:
        raise SolverError("E_rho undefined: the medium is not integrable")
    if boundary == "mask":
        # the conserved ratio of the masked dynamics
        w = mask.indicator()
        rho = medium.sample(u0.grid)
        denom = float(np.sum(w * rho))
        return float(np.sum(w * rho * u0.values) / denom)
    if cls.integrable is True:
        from .media import weighted_mean
        return weighted_mean(medium, u0)[0]
    return 0.0


def run(u0, medium, stencil, config, probes=None):
    """Advance u0 to t_end, recording diagnostics every snapshot_every steps.

    Deterministic for identical inputs. The masked initial state is the data
    restricted to the mask. NaN production aborts with the offending step.
    """
    config.validate()
    probes = probes or Probes()
    grid = u0.grid
    _check_stencil_fits(u0, stencil)
    medium_eff = medium
    if config.floor_alpha is not None:
        medium_eff = floor_medium(medium, config.floor_alpha)

    if config.scheme == "picard-oracle":
        return _picard_run(u0, medium_eff, stencil, config, probes)

    mask = None
    if config.boundary == "mask":
        mask = DomainMask(grid, config.mask_radius)
        stepper = _MaskedStepper(grid, medium_eff, stencil, mask,
                                 config.scheme, config.dt)
        state = stepper.restrict(u0.values)
    else:
        stepper = _ZeroExtendStepper(grid, medium_eff, stencil,
                                     config.scheme, config.dt)
        state = u0.values.copy()

    n_steps = int(round(config.t_end / config.dt))
    if abs(n_steps * config.dt - config.t_end) > 1e-9 * max(1.0, config.t_end):
        n_steps = int(math.ceil(config.t_end / config.dt - 1e-12))
    target = _resolve_target(medium_eff, u0, config.boundary, mask, probes)

    traj = Trajectory()

    def record(step_idx, t, state):
        full = state if config.boundary != "mask" else stepper.scatter(state)
        u = Field(grid, full, copy=True)
        u_t = stepper.rate(state)
        if config.boundary == "mask":
            u_t = stepper.scatter(u_t)
        rec = diagnostics.compute_record(
            t, u, medium_eff, stencil, boundary=config.boundary, mask=mask,
            target=target, lp_p=probes.lp_p, lp_radius=probes.lp_radius, u_t=u_t)
        traj.snapshots.append((t, u))
        traj.diagnostics.append(rec)

    record(0, 0.0, state)
    for k in range(1, n_steps + 1):
        state = stepper.step(state)
        if not np.all(np.isfinite(state)):
            raise NumericalAbort(k)
        if k % config.snapshot_every == 0 or k == n_steps:
            record(k, k * config.dt, state)
    traj.validate()
    return traj


# ---------------------------------------------------------------------------
# fixed-point oracle


@dataclass
class PicardWindow:
    t_start: float
    t_length: float
    iterations: int
    max_ratio: float
    contraction_bound: float


@dataclass
class PicardReport:
    windows: list

    def max_ratio(self):
        return max((w.max_ratio for w in self.windows if w.max_ratio > 0), default=0.0)

    def max_bound(self):
        return max(w.contraction_bound for w in self.windows)


def _dense_conv_matrix(grid, stencil):
    n = grid.n_nodes
    if n > 10_000:
        raise SolverError("fixed-point oracle is capped at 10^4 nodes")
    W = np.zeros((n, n))
    idx = np.arange(n).reshape(grid.shape)
    for offset, w in zip(stencil.offsets, stencil.weights):
        dst, src = _slice_pair(grid.shape, offset)
        W[idx[dst].ravel(), idx[src].ravel()] += w
    return W


def picard_solve(u0, medium, stencil, t_end, tol=1e-10, dt=1e-3, window=None,
                 max_iter=400, collect=None):
    """Solve by iterating the integral fixed-point map on short time windows.

    On each window [0, t0] with t0 below half the medium minimum, the map
    w -> w0 + (1/rho) * cumulative-sum of (J*w - w) (left-endpoint rule) is a
    contraction; windows are concatenated until t_end. The medium must be
    bounded away from zero (pass a floored medium). Returns the final field;
    ``collect`` receives (t, Field) at window ends when given.
    """
    grid = u0.grid
    _check_stencil_fits(u0, stencil)
    rho = medium.sample(grid).ravel()
    rho0 = float(rho.min())
    if rho0 <= 0:
        raise SolverError("fixed-point oracle needs a medium bounded away from zero")
    t0 = window if window is not None else 0.4 * rho0
    if not 0 < t0 < 0.5 * rho0:
        raise SolverError(f"window {t0:g} must lie in (0, rho_min/2) = (0, {0.5 * rho0:g})")
    n_samples_cap = 10_000_000
    W = _dense_conv_matrix(grid, stencil)
    hN = grid.spacing ** grid.dim

    def norm_w(arr):
        # max over time slices of the discrete L1 norm
        return float(np.max(hN * np.sum(np.abs(arr), axis=1)))

    state = u0.values.ravel().copy()
    t = 0.0
    report = PicardReport(windows=[])
    while t < t_end - 1e-12:
        tau = min(t0, t_end - t)
        nsteps = max(1, int(math.ceil(tau / dt - 1e-9)))
        if (nsteps + 1) * state.size > n_samples_cap:
            raise SolverError("fixed-point oracle storage cap exceeded")
        dtw = tau / nsteps
        w = np.tile(state, (nsteps + 1, 1))
        prev_diff = None
        max_ratio = 0.0
        iterations = 0
        for it in range(max_iter):
            G = w[:-1] @ W.T - w[:-1]
            incr = np.cumsum(G, axis=0) * dtw
            w_new = np.empty_like(w)
            w_new[0] = state
            w_new[1:] = state + incr / rho
            diff = norm_w(w_new - w)
            w = w_new
            iterations = it + 1
            if prev_diff is not None and prev_diff > 100.0 * tol and diff > 0:
                max_ratio = max(max_ratio, diff / prev_diff)
            if diff < tol:
                break
            prev_diff = diff
        else:
            raise SolverError(
                f"fixed-point iteration did not reach tol={tol:g} in {max_iter} "
                "iterations; tol is likely below the discretization floor")
        report.windows.append(PicardWindow(t, tau, iterations, max_ratio,
                                           2.0 * t0 / rho0))
        state = w[-1].copy()
        t += tau
        if collect is not None:
            collect(t, Field(grid, state.reshape(grid.shape), copy=True))
    return Field(grid, state.reshape(grid.shape), copy=True), report


def _picard_run(u0, medium, stencil, config, probes):
    """Trajectory wrapper around picard_solve (snapshots at window ends)."""
    rho_min = float(np.min(medium.sample(u0.grid)))
    if rho_min <= 0:
        raise SolverError("picard-oracle needs floor_alpha for a degenerate medium")
    target = _resolve_target(medium, u0, "zero-extend", None, probes)
    traj = Trajectory()

    def rec(t, u):
        traj.snapshots.append((t, u))
        traj.diagnostics.append(diagnostics.compute_record(
            t, u, medium, stencil, boundary="zero-extend", mask=None,
            target=target, lp_p=probes.lp_p, lp_radius=probes.lp_radius))

    rec(0.0, u0.copy())
    _, report = picard_solve(u0, medium, stencil, config.t_end,
                             tol=config.picard_tol, dt=config.dt, collect=rec)
    traj.picard_report = report
    traj.validate()
    return traj


# ---------------------------------------------------------------------------
# monotone approximation driver


@dataclass
class MonotoneReport:
    radii: list
    alphas: list
    max_violation: float
    envelope_ok: bool | None
    envelope_margin: float | None


def monotone_approx_run(u0, medium, stencil, n_list, t_probe, dt=0.1,
                        snapshot_every=10, alphas=None, growth_bound=None):
    """Run the truncated-data, floored-medium approximations for each n.

    For radius n the initial data is u0 restricted to |x| <= n and the medium
    is floored at alpha_n (default rho(0) * 2^-n). Returns the trajectories
    plus a report asserting that the runs are pointwise nondecreasing in n at
    every recorded time, and (when the medium admits a quadratic-growth
    envelope) that each run stays below A e^(lambda t)(1 + |x|^2).
    """
    if list(n_list) != sorted(n_list) or len(n_list) < 2:
        raise SolverError("n_list must be increasing with at least two entries")
    grid = u0.grid
    r = grid.radius()
    trajectories = []
    radii, alpha_used = [], []
    from .media import default_alpha
    for i, n in enumerate(n_list):
        alpha = alphas[i] if alphas is not None else default_alpha(medium, n)
        chi = (r <= n * (1 + 1e-12)).astype(float)
        u0_n = Field(grid, u0.values * chi, copy=False)
        cfg = SolverConfig(scheme="exponential", dt=dt, t_end=t_probe,
                           boundary="zero-extend", snapshot_every=snapshot_every,
                           floor_alpha=alpha)
        trajectories.append(run(u0_n, medium, stencil, cfg))
        radii.append(float(n))
        alpha_used.append(float(alpha))

    max_violation = 0.0
    for lo, hi in zip(trajectories[:-1], trajectories[1:]):
        for (_, ulo), (_, uhi) in zip(lo.snapshots, hi.snapshots):
            gap = float(np.max(ulo.values - uhi.values))
            max_violation = max(max_violation, gap)

    envelope_ok = None
    envelope_margin = None
    cls = classify(medium)
    if cls.decay_floor is not None:
        from .media import quadratic_growth_constant
        eta2 = quadratic_growth_constant(medium)
        lam = stencil_second_moment(stencil) / eta2
        quad = 1.0 + r * r
        A = growth_bound if growth_bound is not None else float(
            np.max(u0.values / quad))
        worst = -math.inf
        for traj in trajectories:
            for t, u in traj.snapshots:
                bound = A * math.exp(lam * t) * quad
                worst = max(worst, float(np.max(u.values - bound)))
        envelope_ok = worst <= 1e-9 * A
        envelope_margin = worst
    return trajectories, MonotoneReport(radii, alpha_used, max_violation,
                                        envelope_ok, envelope_margin)


def trust_radius(grid, stencil, medium, t):
    """Radius inside which zero-extension has not yet polluted the solution.

    Desk-scale estimate: the pollution front starts one stencil radius inside
    the box and advances diffusively at the local rate, so the margin is
    sqrt(V t / rho) with rho evaluated near the current front (three
    fixed-point refinements, clamped at zero).
    """
    L = grid.half_extent
    Rs = stencil.truncation_radius
    V = stencil_second_moment(stencil)
    x = max(0.0, L - Rs)
    axis = np.abs(grid.axis())
    rho_axis = medium.rho_of_radius(axis)
    for _ in range(3):
        sel = axis <= max(x, grid.spacing)
        rho_ref = float(rho_axis[sel].min()) if np.any(sel) else float(rho_axis.min())
        x = max(0.0, L - Rs - math.sqrt(V * t / rho_ref))
    return x
