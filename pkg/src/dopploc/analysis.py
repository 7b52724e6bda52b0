"""Speed-dependence of the position/clock/velocity information, and solvability.

The reordered Jacobian splits the state rows into positions + clock offset
(top) and velocity (bottom), and the channel-parameter columns into
angles/delays (left) and radial velocities (right)::

    J_R = [[A, B],
           [O, D]]

With the velocity direction fixed, ``A``, ``O`` and ``D`` do not depend on
the speed while ``B`` scales linearly with it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import geometry as geo
from .channel import PilotBlock, RadioConfig
from .fim import (
    RANK_TOL,
    FisherMatrix,
    channel_efim,
    factor_rank,
    inv_from_factor,
    inv_psd,
    mode_jacobian,
    sqrt_factor,
    symmetrize,
)
from .geometry import KNOWN_VELOCITY, MOBILE, STATIONARY, Scenario

SVD_TRUNCATION = 1e-12


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class ReorderedJacobian:
    A: np.ndarray
    B: np.ndarray
    O: np.ndarray
    D: np.ndarray
    B_bar: np.ndarray
    speed: float
    direction: np.ndarray
    column_order: np.ndarray

    @property
    def num_ips(self) -> int:
        return self.D.shape[1] - 1

    def assemble(self) -> np.ndarray:
        return np.block([[self.A, self.B], [self.O, self.D]])

    def at_speed(self, speed: float) -> "ReorderedJacobian":
        """Same geometry and direction, different speed (only ``B`` changes)."""
        return ReorderedJacobian(self.A, speed * self.B_bar, self.O, self.D, self.B_bar, float(speed),
                                 self.direction, self.column_order)


def reorder_columns(num_ips: int) -> np.ndarray:
    """Column order ``[theta_0, tau_0, ..., theta_L, tau_L, v_0, ..., v_L]`` into the full gamma."""
    n = num_ips + 1
    ang_delay = [3 * l + q for l in range(n) for q in (0, 1)]
    radial = [3 * l + 2 for l in range(n)]
    return np.array(ang_delay + radial, dtype=int)


def reorder_jacobian(jac: Optional[np.ndarray], scenario: Scenario,
                     direction: Optional[Sequence[float]] = None) -> ReorderedJacobian:
    """Block split of the full mobile Jacobian.

    ``direction`` is only needed when the scenario speed is zero, to define
    the speed-normalised block ``B_bar``.
    """
    if not scenario.has_los:
        raise AnalysisError("the speed analysis assumes a LOS path")
    if jac is None:
        jac = geo.state_jacobian(scenario)
    L = scenario.num_ips
    speed = float(np.linalg.norm(scenario.velocity))
    if speed > 0:
        t_v = scenario.velocity / speed
    elif direction is not None:
        t_v = np.asarray(direction, dtype=float) / np.linalg.norm(direction)
    else:
        raise AnalysisError("zero speed: a velocity direction is required")
    cols = reorder_columns(L)
    JR = jac[:, cols]
    n_top = 2 * L + 3
    n_ad = 2 * (L + 1)
    A, B = JR[:n_top, :n_ad], JR[:n_top, n_ad:]
    O, D = JR[n_top:, :n_ad], JR[n_top:, n_ad:]
    if speed > 0:
        B_bar = B / speed
    else:
        unit = geo.state_jacobian(scenario.replace(velocity=t_v))[:, cols]
        B_bar = unit[:n_top, n_ad:]
    return ReorderedJacobian(A, B, O, D, B_bar, speed, t_v, cols)


def approx_diagonal_fim(efim: FisherMatrix):
    """Split ``diag(I(gamma)^-1)^-1`` into angle/delay and radial-velocity parts.

    Returns ``(F1, F2, singular)`` with ``F1`` of size ``2(L+1)`` ordered
    ``[theta_0, tau_0, theta_1, ...]`` and ``F2`` of size ``L+1``.
    """
    if not efim.has_los or efim.mode != MOBILE:
        raise AnalysisError("expected a mobile LOS channel-parameter EFIM")
    cov, _, singular = inv_psd(efim.matrix)
    prec = 1.0 / np.diag(cov)
    cols = reorder_columns(efim.num_paths - 1)
    prec = prec[cols]
    n_ad = 2 * efim.num_paths
    return np.diag(prec[:n_ad]), np.diag(prec[n_ad:]), singular


def null_basis(rows: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of the null space of ``rows``.

    Rows are normalised first; singular values below ``tol * max`` count as zero.
    """
    n = rows.shape[1]
    if rows.shape[0] == 0:
        return np.eye(n)
    norms = np.linalg.norm(rows, axis=1)
    rows = rows[norms > 0] / norms[norms > 0, None]
    if rows.shape[0] == 0:
        return np.eye(n)
    _, S, Vt = np.linalg.svd(rows, full_matrices=True)
    rank = int(np.sum(S > tol * S.max()))
    return Vt[rank:].T


@dataclass(frozen=True)
class EfimDecomposition:
    """Stationary/mobility split of the position-clock and velocity EFIMs.

    ``*_bar`` matrices are speed-normalised; multiply by ``speed**2``.
    Square-root factors are kept alongside the matrices (``X @ X.T``) so that
    inverses and ranks can be taken without squaring condition numbers.
    """

    speed: float
    A_S: np.ndarray
    B_G_bar: np.ndarray
    B_L_bar: np.ndarray
    D0: np.ndarray
    D_L: np.ndarray
    E_s: np.ndarray
    E_v: np.ndarray
    F1: np.ndarray
    F2: np.ndarray
    stationary_factor: np.ndarray
    net_gain_factor: np.ndarray
    velocity_factor: np.ndarray
    velocity_info_singular: bool = False

    @property
    def num_ips(self) -> int:
        return (self.A_S.shape[0] - 3) // 2

    @property
    def B_G(self) -> np.ndarray:
        return self.speed ** 2 * self.B_G_bar

    @property
    def B_L(self) -> np.ndarray:
        return self.speed ** 2 * self.B_L_bar

    @property
    def A1(self) -> np.ndarray:
        n = 2 * self.num_ips + 2
        return self.A_S[:n, :n]

    @property
    def a2(self) -> np.ndarray:
        n = 2 * self.num_ips + 2
        return self.A_S[:n, n]

    @property
    def A4(self) -> float:
        n = 2 * self.num_ips + 2
        return float(self.A_S[n, n])

    @property
    def position_clock_factor(self) -> np.ndarray:
        """Factor of ``E_s``: ``[A F1^1/2, v * B_bar F2^1/2 Q]``."""
        return np.hstack([self.stationary_factor, self.speed * self.net_gain_factor])

    @property
    def A0_factor(self) -> np.ndarray:
        """Factor of ``A0``: position rows of ``A F1^1/2`` with the clock row projected out."""
        n = 2 * self.num_ips + 2
        X = self.stationary_factor
        return X[:n] @ null_basis(X[n : n + 1], tol=0.0)

    @property
    def A0(self) -> np.ndarray:
        """Stationary position information after eliminating the clock offset."""
        X = self.A0_factor
        return symmetrize(X @ X.T)

    @property
    def B0_factor(self) -> np.ndarray:
        n = 2 * self.num_ips + 2
        return self.net_gain_factor[:n]

    @property
    def B0(self) -> np.ndarray:
        X = self.B0_factor
        return symmetrize(X @ X.T)

    def position_factor(self, speed: Optional[float] = None) -> np.ndarray:
        """Factor of ``E_p = A0 + v^2 B0`` (clock offset eliminated)."""
        v = self.speed if speed is None else float(speed)
        n = 2 * self.num_ips + 2
        X = np.hstack([self.stationary_factor, v * self.net_gain_factor])
        return X[:n] @ null_basis(X[n : n + 1], tol=0.0)


def efim_decomposition(reordered: ReorderedJacobian, F1: np.ndarray, F2: np.ndarray) -> EfimDecomposition:
    A, D, Bb = reordered.A, reordered.D, reordered.B_bar
    v = reordered.speed
    v2 = v ** 2
    f1 = np.sqrt(np.diag(F1))
    f2 = np.sqrt(np.diag(F2))
    stat = A * f1
    gain = Bb * f2
    vel = D * f2
    A_S = symmetrize(stat @ stat.T)
    B_G_bar = symmetrize(gain @ gain.T)
    D0 = symmetrize(vel @ vel.T)
    # radial-velocity directions not used up by the velocity unknowns
    q_vel = null_basis(vel)
    d_singular = q_vel.shape[1] != vel.shape[1] - vel.shape[0]
    net = gain @ q_vel
    B_L_bar = symmetrize(B_G_bar - net @ net.T)
    E_s = symmetrize(A_S + v2 * (net @ net.T))
    # velocity EFIM: velocity rows projected off the position-clock row space
    top = np.hstack([stat, v * gain])
    bottom = np.hstack([np.zeros((vel.shape[0], stat.shape[1])), vel])
    vfac = bottom @ null_basis(top)
    E_v = symmetrize(vfac @ vfac.T)
    D_L = symmetrize(D0 - E_v) if v2 > 0 else np.zeros_like(D0)
    if v2 == 0:
        vfac, E_v = vel, D0
    return EfimDecomposition(reordered.speed, A_S, B_G_bar, B_L_bar, D0, D_L, E_s, E_v, F1, F2,
                             stat, net, vfac, d_singular)


def decompose(scenario: Scenario, cfg: RadioConfig, pilots: PilotBlock,
              efim: Optional[FisherMatrix] = None) -> EfimDecomposition:
    """Convenience: EFIM -> diagonal approximation -> decomposition at the scenario speed."""
    if efim is None:
        efim = channel_efim(scenario, cfg, pilots)
    F1, F2, _ = approx_diagonal_fim(efim)
    return efim_decomposition(reorder_jacobian(None, scenario), F1, F2)


def position_clock_efim(dec: EfimDecomposition):
    """Position EFIM ``A0 + v^2 B0`` and clock-offset EFIM (scalar)."""
    Xp = dec.position_factor()
    E_p = symmetrize(Xp @ Xp.T)
    n = 2 * dec.num_ips + 2
    inner, _, singular = inv_from_factor(np.hstack([dec.stationary_factor[:n], dec.speed * dec.B0_factor]))
    if singular:
        raise AnalysisError("A1 + v^2 B0 is singular")
    E_c = dec.A4 - float(dec.a2 @ inner @ dec.a2)
    return E_p, E_c


def rank_one_terms(M: np.ndarray, truncation: float = SVD_TRUNCATION) -> List[np.ndarray]:
    """Split a symmetric PSD matrix into rank-1 terms, largest first."""
    w, V = np.linalg.eigh(symmetrize(M))
    if w.size == 0 or w.max() <= 0:
        return []
    order = np.argsort(w)[::-1]
    return [w[i] * np.outer(V[:, i], V[:, i]) for i in order if w[i] > truncation * w.max()]


def rank_one_terms_from_factor(X: np.ndarray, truncation: float = SVD_TRUNCATION) -> List[np.ndarray]:
    """Rank-1 terms of ``X @ X.T`` from the SVD of ``X`` (singular values below ``truncation * max`` dropped)."""
    if X.size == 0:
        return []
    U, S, _ = np.linalg.svd(X, full_matrices=False)
    if S.max() <= 0:
        return []
    return [S[i] ** 2 * np.outer(U[:, i], U[:, i]) for i in range(S.size) if S[i] > truncation * S.max()]


def miller_limit(base_inv: np.ndarray, terms: Sequence[np.ndarray], degenerate_tol: float = 1e-12):
    """``lim_{t->inf} (E + t * sum(terms))^-1`` from ``E^-1`` by rank-1 updates.

    Each step is ``M <- M - M B M / tr(B M)``. Returns ``(limit, flagged)``;
    ``flagged`` is set when some ``tr(B M)`` is numerically zero (that term
    adds no new direction and is skipped).
    """
    M = np.array(base_inv, dtype=float)
    flagged = False
    scale = abs(np.trace(M))
    for Bi in terms:
        tr = float(np.trace(Bi @ M))
        if abs(tr) <= degenerate_tol * np.linalg.norm(Bi) * scale:
            flagged = True
            continue
        M = symmetrize(M - M @ Bi @ M / tr)
    return M, flagged


@dataclass(frozen=True)
class AsymptoticLimit:
    position_cov: np.ndarray
    clock_info: float
    peb: float
    meb: List[float]
    ceb: float
    rank_b0: int
    a0_singular: bool
    flagged: bool


def asymptotic_limit(dec: EfimDecomposition) -> AsymptoticLimit:
    """Position covariance and clock information as the speed tends to infinity.

    When ``A0`` is nonsingular the rank-1 recursion starts from ``A0^-1``.
    In the LOS mobile model ``A0`` is structurally singular (the stationary
    problem is unsolvable); the recursion then runs on the clock-coupled
    block ``A1`` instead, and the position covariance is recovered by the
    rank-1 clock-offset correction
    ``E_p^-1 = M + M a2 a2^T M / E_c`` with ``M = lim (A1 + v^2 B0)^-1``.
    """
    L = dec.num_ips
    n = 2 * L + 2
    terms = rank_one_terms_from_factor(dec.B0_factor)
    A0_inv, _, a0_singular = inv_from_factor(dec.A0_factor)
    A1_inv, _, a1_singular = inv_from_factor(dec.stationary_factor[:n])
    if a1_singular:
        raise AnalysisError("A1 is singular: angles/delays do not resolve the IP positions")
    M, flagged = miller_limit(A1_inv, terms)
    Ma = M @ dec.a2
    E_c = dec.A4 - float(dec.a2 @ Ma)
    if not a0_singular:
        cov, flagged = miller_limit(A0_inv, terms)
    elif not E_c > 1e-12 * dec.A4:
        flagged = True
        cov = np.full_like(M, np.inf)
    else:
        cov = symmetrize(M + np.outer(Ma, Ma) / E_c)
    peb = float(np.sqrt(np.trace(cov[0:2, 0:2])))
    meb = [float(np.sqrt(np.trace(cov[2 * l : 2 * l + 2, 2 * l : 2 * l + 2]))) for l in range(1, L + 1)]
    ceb = float(1.0 / np.sqrt(E_c)) if E_c > 0 else float("inf")
    return AsymptoticLimit(cov, E_c, peb, meb, ceb, len(terms), a0_singular, flagged)


def direct_position_inverse(dec: EfimDecomposition, speed: float) -> np.ndarray:
    """``(A0 + v^2 B0)^-1`` evaluated directly at a given speed."""
    inv, _, _ = inv_from_factor(dec.position_factor(speed))
    return inv


@dataclass(frozen=True)
class DecompositionBounds:
    peb: float
    meb: List[float]
    ceb: float
    veb: float


def decomposition_bounds(dec: EfimDecomposition) -> DecompositionBounds:
    """Bounds from ``E_s`` (positions + clock) and ``E_v`` (velocity)."""
    L = dec.num_ips
    cov_s, _, s_sing = inv_from_factor(dec.position_clock_factor)
    cov_v, _, v_sing = inv_from_factor(dec.velocity_factor)
    inf = float("inf")
    if s_sing:
        peb, meb, ceb = inf, [inf] * L, inf
    else:
        peb = float(np.sqrt(np.trace(cov_s[0:2, 0:2])))
        meb = [float(np.sqrt(np.trace(cov_s[2 * l : 2 * l + 2, 2 * l : 2 * l + 2]))) for l in range(1, L + 1)]
        ceb = float(np.sqrt(cov_s[2 * L + 2, 2 * L + 2]))
    veb = inf if v_sing else float(np.sqrt(np.trace(cov_v)))
    return DecompositionBounds(peb, meb, ceb, veb)


@dataclass(frozen=True)
class SpeedCurve:
    speeds: np.ndarray
    peb: np.ndarray
    ceb: np.ndarray
    veb: np.ndarray
    veb_nondecreasing: bool
    floor_speed: float


def decomposition_curve(reordered: ReorderedJacobian, F1: np.ndarray, F2: np.ndarray,
                        speeds: Sequence[float], rel_slack: float = 1e-9) -> SpeedCurve:
    """Bounds of the diagonal-approximation model over a speed grid (fixed F, fixed direction)."""
    speeds = np.asarray(speeds, dtype=float)
    peb, ceb, veb = [], [], []
    for s in speeds:
        b = decomposition_bounds(efim_decomposition(reordered.at_speed(s), F1, F2))
        peb.append(b.peb)
        ceb.append(b.ceb)
        veb.append(b.veb)
    veb = np.array(veb)
    steps = np.diff(veb) >= -rel_slack * np.abs(veb[:-1])
    # small-speed floor: first grid point where VEB rises 1% above its starting value
    above = np.nonzero(veb > 1.01 * veb[0])[0]
    floor_speed = float(speeds[above[0]]) if above.size else float(speeds[-1])
    return SpeedCurve(speeds, np.array(peb), np.array(ceb), veb, bool(np.all(steps)), floor_speed)


def veb_growth(reordered: ReorderedJacobian, F1: np.ndarray, F2: np.ndarray, speeds: Sequence[float]) -> SpeedCurve:
    """VEB samples over an increasing speed grid with a monotonicity verdict."""
    speeds = np.asarray(speeds, dtype=float)
    if np.any(np.diff(speeds) <= 0):
        raise ValueError("speed grid must be strictly increasing")
    return decomposition_curve(reordered, F1, F2, speeds)


def saturation_speed(speeds: np.ndarray, values: np.ndarray, rel: float = 0.01) -> Optional[float]:
    """Smallest grid speed beyond which every further per-decade change is below ``rel``.

    Speeds are assumed log-spaced; ``None`` if the curve never settles.
    """
    speeds = np.asarray(speeds, dtype=float)
    values = np.asarray(values, dtype=float)
    logv = np.log10(speeds)
    for i in range(len(speeds) - 1):
        ok = True
        for j in range(i, len(speeds)):
            decade = np.searchsorted(logv, logv[j] + 1.0 - 1e-9)
            if decade >= len(speeds):
                break
            if abs(values[decade] - values[j]) > rel * abs(values[j]):
                ok = False
                break
        if ok and np.searchsorted(logv, logv[i] + 1.0 - 1e-9) < len(speeds):
            return float(speeds[i])
    return None


# ---------------------------------------------------------------------------
# solvability

TABLE_ROWS = (
    ("With LOS (stationary)", True, STATIONARY),
    ("Without LOS (stationary)", False, STATIONARY),
    ("With LOS (mobile)", True, MOBILE),
    ("Without LOS (mobile)", False, MOBILE),
    ("With LOS (known v)", True, KNOWN_VELOCITY),
    ("Without LOS (known v)", False, KNOWN_VELOCITY),
)


@dataclass(frozen=True)
class SolvabilityVerdict:
    solvable: bool
    unknowns: int
    measurements: int
    min_nlos: Optional[int]


def _counts(L: int, has_los: bool, mobility: str):
    unknowns = 2 * L + (5 if mobility == MOBILE else 3)
    if mobility == STATIONARY:
        meas = 2 * L + (2 if has_los else 0)
    elif mobility == MOBILE:
        meas = 3 * L + (3 if has_los else 0)
    elif mobility == KNOWN_VELOCITY:
        # with v known the LOS radial velocity follows from the AOD
        meas = 3 * L + (2 if has_los else 0)
    else:
        raise ValueError(f"unknown mobility {mobility!r}")
    return unknowns, meas


def solvability(L: int, has_los: bool, mobility: str) -> SolvabilityVerdict:
    """Counting rule: solvable iff channel parameters >= unknown states."""
    if L < 0:
        raise ValueError("L must be nonnegative")
    unknowns, meas = _counts(L, has_los, mobility)
    min_nlos = None
    for n in range(0, 64):
        u, m = _counts(n, has_los, mobility)
        if m >= u:
            min_nlos = n
            break
    return SolvabilityVerdict(meas >= unknowns, unknowns, meas, min_nlos)


@dataclass(frozen=True)
class RankCheck:
    rank: int
    dim: int
    position_clock_rank: Optional[int]
    expected: SolvabilityVerdict

    @property
    def full_rank(self) -> bool:
        return self.rank == self.dim


def numerical_rank_check(scenario: Scenario, cfg: RadioConfig, pilots: PilotBlock, mode: str = MOBILE,
                         tol: float = RANK_TOL) -> RankCheck:
    """Numerical rank of the state FIM, plus (mobile) the rank of the position-clock EFIM.

    The position-clock EFIM is the velocity Schur complement of the state
    FIM; its factor is the position-clock rows of ``J R`` projected onto the
    null space of the velocity rows.
    """
    efim = channel_efim(scenario, cfg, pilots, mode)
    jac = mode_jacobian(scenario, mode)
    factor = jac @ sqrt_factor(efim.matrix)
    rank = factor_rank(factor, tol)
    pc_rank = None
    if mode == MOBILE:
        L = scenario.num_ips
        top, bottom = factor[: 2 * L + 3], factor[2 * L + 3 :]
        _, S, Vt = np.linalg.svd(bottom)
        null = Vt[np.sum(S > tol * S.max()):].T
        pc_rank = factor_rank(top @ null, tol)
    return RankCheck(rank, jac.shape[0], pc_rank, solvability(scenario.num_ips, scenario.has_los, mode))
