"""Channel-parameter sampling and the 1-D search localization/mapping estimator.

The search runs along the measured LOS angle: every candidate UE range
``d0`` fixes the clock offset from the LOS delay, which in turn fixes every
incidence point on its measured AOD ray. The UE velocity then follows by
least squares from the measured radial velocities, and the misfit of that
fit is the cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from . import geometry as geo
from .fim import FisherMatrix, inv_psd, sqrt_factor, symmetrize
from .geometry import SPEED_OF_LIGHT, Scenario

DEFAULT_SAMPLES = 2000
DEFAULT_D_MIN = 0.1
REFINE_XTOL = 1e-6


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MeasuredChannelParams:
    """Per-path measured ``(theta, tau, v)``, LOS first, in the truth path order."""

    aod: np.ndarray
    delay: np.ndarray
    radial_velocity: np.ndarray
    covariance: Optional[np.ndarray] = None
    seed: Optional[int] = None
    has_los: bool = True

    @property
    def num_ips(self) -> int:
        return self.aod.size - (1 if self.has_los else 0)

    def vector(self) -> np.ndarray:
        return np.column_stack([self.aod, self.delay, self.radial_velocity]).reshape(-1)

    @classmethod
    def from_vector(cls, gamma, has_los: bool = True, covariance=None, seed=None) -> "MeasuredChannelParams":
        g = np.asarray(gamma, dtype=float).reshape(-1, 3)
        return cls(np.atleast_1d(geo.wrap_angle(g[:, 0])), g[:, 1].copy(), g[:, 2].copy(),
                   covariance, seed, has_los)

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> "MeasuredChannelParams":
        """Noiseless measurements of the active paths."""
        gamma = geo.channel_param_vector(scenario)
        if not scenario.has_los:
            gamma = gamma[3:]
        return cls.from_vector(gamma, scenario.has_los)


def sample_channel_params(truth, efim: FisherMatrix, seed=None) -> MeasuredChannelParams:
    """Draw ``gamma_hat ~ N(truth, I(gamma)^-1)`` through a symmetric square root.

    ``truth`` is the active-path parameter vector (or a :class:`Scenario`).
    """
    if isinstance(truth, Scenario):
        truth = MeasuredChannelParams.from_scenario(truth).vector()
    truth = np.asarray(truth, dtype=float)
    if efim.size != truth.size:
        raise ValueError(f"EFIM size {efim.size} does not match {truth.size} channel parameters")
    cov, _, singular = inv_psd(efim.matrix)
    if singular:
        raise EstimationError("channel-parameter EFIM is singular")
    # symmetric square root, so the draw does not depend on a factor ordering
    w, V = np.linalg.eigh(cov)
    root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    rng = np.random.default_rng(seed)
    draw = truth + root @ rng.standard_normal(truth.size)
    return MeasuredChannelParams.from_vector(draw, efim.has_los, covariance=cov, seed=seed)


@dataclass(frozen=True)
class Candidate:
    """Vectorised evaluation of the search cost at a set of UE ranges."""

    d0: np.ndarray
    clock_offset: np.ndarray
    ue_position: np.ndarray  # (N, 2)
    ip_positions: np.ndarray  # (N, L, 2)
    velocity: np.ndarray  # (N, 2)
    residual: np.ndarray
    feasible: np.ndarray


def _unit(theta):
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def candidate_evaluate(d0, meas: MeasuredChannelParams, bs_position=(0.0, 0.0)) -> Candidate:
    """Clock offset, IP positions, LS velocity and misfit for candidate UE ranges ``d0``.

    Infeasible candidates (non-positive IP ranges, degenerate least squares)
    get an infinite residual.
    """
    if not meas.has_los:
        raise EstimationError("the range search is anchored on the LOS path")
    d0 = np.atleast_1d(np.asarray(d0, dtype=float))
    pB = np.asarray(bs_position, dtype=float)
    c = SPEED_OF_LIGHT
    tb = _unit(meas.aod)  # (P, 2)
    t0, tl = tb[0], tb[1:]
    B = c * meas.delay[0] - d0
    d_l = c * meas.delay[None, 1:] - B[:, None]  # (N, L)
    rel0 = d0[:, None] * t0  # UE relative to BS
    e_l = rel0 @ tl.T  # (N, L)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (d0[:, None] ** 2 - d_l ** 2) / (2 * (e_l - d_l))
    d2 = d_l - d1
    feasible = np.all(np.isfinite(d1) & (d1 > 0) & (d2 > 0), axis=1) & (d0 > 0)
    rel_l = d1[:, :, None] * tl[None]  # (N, L, 2)
    # direction rows at the UE: LOS toward the BS, NLOS toward each IP
    to_ip = rel_l - rel0[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        rows_ip = to_ip / np.linalg.norm(to_ip, axis=2, keepdims=True)
        row0 = -rel0 / d0[:, None]
    X = np.concatenate([row0[:, None, :], rows_ip], axis=1)  # (N, L+1, 2)
    X = np.where(feasible[:, None, None], X, 0.0)
    b = meas.radial_velocity
    XtX = np.einsum("npi,npj->nij", X, X)
    Xtb = np.einsum("npi,p->ni", X, b)
    det = XtX[:, 0, 0] * XtX[:, 1, 1] - XtX[:, 0, 1] ** 2
    scale = np.einsum("nii->n", XtX) ** 2
    ok = feasible & (det > 1e-12 * scale)
    safe = np.where(ok, det, 1.0)
    vx = (XtX[:, 1, 1] * Xtb[:, 0] - XtX[:, 0, 1] * Xtb[:, 1]) / safe
    vy = (XtX[:, 0, 0] * Xtb[:, 1] - XtX[:, 0, 1] * Xtb[:, 0]) / safe
    vel = np.stack([vx, vy], axis=1)
    fit = np.einsum("npi,ni->np", X, vel)
    resid = np.linalg.norm(fit - b[None], axis=1)
    resid = np.where(ok, resid, np.inf)
    return Candidate(d0, B, pB + rel0, pB + rel_l, vel, resid, ok)


@dataclass(frozen=True)
class LocalizationResult:
    d0: float
    ue_position: np.ndarray
    ip_positions: np.ndarray
    clock_offset: float
    velocity: np.ndarray
    residual: float
    grid: np.ndarray
    residual_curve: np.ndarray
    boundary_min: bool = False
    tie: bool = False
    refined: bool = False
    refine_steps: int = 0
    refine_failed: bool = False
    bs_position: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def scenario(self, has_los: bool = True) -> Scenario:
        return Scenario(self.ue_position, self.ip_positions, velocity=self.velocity,
                        clock_offset=self.clock_offset, bs_position=self.bs_position, has_los=has_los)

    def state(self) -> np.ndarray:
        return geo.pack_state(self.scenario())


def _pick(cand: Candidate, i: int):
    return (float(cand.d0[i]), cand.ue_position[i], cand.ip_positions[i], float(cand.clock_offset[i]),
            cand.velocity[i], float(cand.residual[i]))


def locate(meas: MeasuredChannelParams, d_min: float = DEFAULT_D_MIN, d_max: Optional[float] = None,
           num_samples: int = DEFAULT_SAMPLES, bs_position=(0.0, 0.0), xtol: float = 1e-6) -> LocalizationResult:
    """Grid search over the UE range followed by a bounded scalar refinement.

    The default grid spans ``[0.1, 2 c tau_0]``. Ties on the grid go to the
    smaller range and are flagged, as is a minimum on the grid boundary.
    """
    if meas.num_ips < 2:
        raise EstimationError("at least two incidence points are needed with a LOS path")
    if d_max is None:
        d_max = 2 * SPEED_OF_LIGHT * meas.delay[0]
    if not (d_min > 0 and d_max > d_min):
        raise ValueError(f"invalid search interval [{d_min}, {d_max}]")
    grid = np.linspace(d_min, d_max, int(num_samples))
    cand = candidate_evaluate(grid, meas, bs_position)
    curve = cand.residual
    if not np.any(cand.feasible):
        raise EstimationError("infeasible geometry or grid")
    i = int(np.argmin(curve))  # first occurrence: smaller range wins ties
    best = curve[i]
    tie = bool(np.sum(curve <= best * (1 + 1e-12) + 1e-300) > 1 and best > 0)
    boundary = i in (0, grid.size - 1)
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]

    def cost(d):
        return float(candidate_evaluate(d, meas, bs_position).residual[0])

    pick = _pick(cand, i)
    if best > 0 and hi > lo:
        opt = minimize_scalar(cost, bounds=(lo, hi), method="bounded", options={"xatol": xtol})
        if np.isfinite(opt.fun) and opt.fun <= best:
            pick = _pick(candidate_evaluate(opt.x, meas, bs_position), 0)
    d0, p0, pl, B, v, r = pick
    return LocalizationResult(d0, np.array(p0), np.array(pl), B, np.array(v), r, grid, curve, boundary, tie,
                              bs_position=np.asarray(bs_position, dtype=float))


def _misfit(gamma_model: np.ndarray, meas_vec: np.ndarray) -> np.ndarray:
    diff = gamma_model - meas_vec
    diff[0::3] = geo.wrap_angle(diff[0::3])
    return diff


def refine(result: LocalizationResult, meas: MeasuredChannelParams, weighted: bool = True,
           max_nfev: int = 200) -> LocalizationResult:
    """Full-state nonlinear least squares on ``gamma(s) - gamma_hat``.

    With ``weighted`` and a sampling covariance available, residuals are
    whitened by the inverse covariance. The result is kept only if it lowers
    the cost; otherwise the input comes back (flagged when the solver failed).
    """
    template = result.scenario(meas.has_los)
    meas_vec = meas.vector()
    first = 0 if meas.has_los else 3
    if weighted and meas.covariance is not None:
        info, _, _ = inv_psd(meas.covariance)
        W = sqrt_factor(symmetrize(info)).T
    else:
        W = None

    def residuals(s):
        try:
            sc = geo.unpack_state(s, template)
            gamma = geo.channel_param_vector(sc)[first:]
        except geo.GeometryError:
            return np.full(meas_vec.size, 1e12)
        r = _misfit(gamma, meas_vec)
        return W @ r if W is not None else r

    s0 = geo.pack_state(template)
    r0 = residuals(s0)
    cost0 = float(r0 @ r0)
    if cost0 == 0.0:
        return _with_refine(result, template, 0, False, refined=True)
    try:
        sol = least_squares(residuals, s0, method="lm", x_scale="jac", xtol=1e-12, ftol=1e-14, gtol=1e-14,
                            max_nfev=max_nfev)
    except (ValueError, np.linalg.LinAlgError):
        return _with_refine(result, template, 0, True)
    cost1 = float(sol.fun @ sol.fun)
    if sol.status <= 0 and not cost1 < cost0:
        return _with_refine(result, template, sol.nfev, True)
    if not cost1 < cost0:
        return _with_refine(result, template, sol.nfev, False)
    sc = geo.unpack_state(sol.x, template)
    d0 = float(np.linalg.norm(sc.ue_position - sc.bs_position))
    unweighted = _misfit(geo.channel_param_vector(sc)[first:], meas_vec)
    return LocalizationResult(d0, sc.ue_position.copy(), sc.ip_positions.copy(), sc.clock_offset,
                              sc.velocity.copy(), float(np.linalg.norm(unweighted)), result.grid,
                              result.residual_curve, result.boundary_min, result.tie, True, int(sol.nfev),
                              False, result.bs_position)


def _with_refine(result: LocalizationResult, sc: Scenario, steps: int, failed: bool,
                 refined: bool = False) -> LocalizationResult:
    return LocalizationResult(result.d0, result.ue_position, result.ip_positions, result.clock_offset,
                              result.velocity, result.residual, result.grid, result.residual_curve,
                              result.boundary_min, result.tie, refined, steps, failed, result.bs_position)
