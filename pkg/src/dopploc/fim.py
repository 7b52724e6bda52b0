"""Fisher information in the channel-parameter and state domains, and error bounds."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import geometry as geo
from .channel import PilotBlock, RadioConfig, noise_variance, signal_derivatives
from .geometry import MOBILE, STATIONARY, Scenario

# relative singular-value threshold for information square-root factors
RANK_TOL = 1e-10
# relative eigenvalue threshold when only the (equilibrated) matrix is available
EIG_TOL = 1e-13

# domain tags
FULL = "full"
CHANNEL = "channel"
STATE = "state"


@dataclass(frozen=True)
class FisherMatrix:
    """Symmetric information matrix tagged with its parameter domain."""

    matrix: np.ndarray
    domain: str
    num_paths: int
    has_los: bool = True
    mode: str = MOBILE
    singular: bool = False

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def scaled(self, factor: float) -> "FisherMatrix":
        return FisherMatrix(self.matrix * factor, self.domain, self.num_paths, self.has_los, self.mode,
                            self.singular)


@dataclass(frozen=True)
class BoundsReport:
    peb: float
    meb: List[float]
    ceb: float
    veb: float
    singular: bool = False
    rank: Optional[int] = None

    @property
    def meb_aggregate(self) -> float:
        """Root-mean-square of the per-IP mapping bounds."""
        if not self.meb:
            return float("nan")
        return float(np.sqrt(np.mean(np.square(self.meb))))


@dataclass(frozen=True)
class StateCrb:
    covariance: np.ndarray
    rank: int
    singular: bool


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _equilibrate(m: np.ndarray):
    d = np.sqrt(np.abs(np.diag(m)))
    d[d == 0] = 1.0
    return m / np.outer(d, d), d


def numerical_rank(m: np.ndarray, tol: float = EIG_TOL) -> int:
    """Rank of a symmetric PSD matrix: equilibrated eigenvalues above ``tol * max``."""
    if m.size == 0:
        return 0
    w = np.linalg.eigvalsh(_equilibrate(symmetrize(m))[0])
    top = w.max()
    if top <= 0:
        return 0
    return int(np.sum(w > tol * top))


def sqrt_factor(m: np.ndarray) -> np.ndarray:
    """``R`` with ``R @ R.T == m`` for a symmetric PSD matrix (negative round-off clipped)."""
    e, d = _equilibrate(symmetrize(m))
    w, V = np.linalg.eigh(e)
    return (V * np.sqrt(np.clip(w, 0.0, None))) * d[:, None]


def inv_from_factor(factor: np.ndarray, tol: float = RANK_TOL):
    """Pseudo-inverse of ``factor @ factor.T`` via SVD of the row-equilibrated factor.

    Working on the factor keeps singular-value ratios resolvable down to
    machine precision (eigenvalue ratios down to its square). Returns
    ``(inverse, rank, singular)``.
    """
    d = np.linalg.norm(factor, axis=1)
    d[d == 0] = 1.0
    U, S, _ = np.linalg.svd(factor / d[:, None], full_matrices=False)
    keep = S > tol * S.max() if S.size and S.max() > 0 else np.zeros_like(S, dtype=bool)
    rank = int(keep.sum())
    inv_e = (U[:, keep] / S[keep] ** 2) @ U[:, keep].T
    return symmetrize(inv_e / np.outer(d, d)), rank, rank < factor.shape[0]


def factor_rank(factor: np.ndarray, tol: float = RANK_TOL) -> int:
    return inv_from_factor(factor, tol)[1]


def inv_psd(m: np.ndarray, tol: float = EIG_TOL):
    """Inverse of a symmetric PSD matrix after diagonal equilibration.

    Returns ``(inverse, rank, singular)``; when singular the Moore-Penrose
    pseudo-inverse of the equilibrated matrix is used.
    """
    m = symmetrize(np.asarray(m, dtype=float))
    if m.size == 0:
        return m.copy(), 0, False
    e, d = _equilibrate(m)
    w, V = np.linalg.eigh(e)
    top = w.max()
    keep = w > tol * top if top > 0 else np.zeros_like(w, dtype=bool)
    rank = int(keep.sum())
    inv_e = (V[:, keep] / w[keep]) @ V[:, keep].T
    return symmetrize(inv_e / np.outer(d, d)), rank, rank < m.shape[0]


def _mode_param_mask(num_paths: int, mode: str) -> np.ndarray:
    """Boolean mask over the 5P full-channel parameters kept in ``mode``."""
    keep = np.ones(5 * num_paths, dtype=bool)
    if mode == STATIONARY:
        keep[2 : 3 * num_paths : 3] = False
    return keep


def fim_channel_params(scenario: Scenario, cfg: RadioConfig, pilots: PilotBlock,
                       mode: str = MOBILE, sigma2: Optional[float] = None) -> FisherMatrix:
    """FIM of ``[gamma, alpha, xi]`` from the Gaussian observation model.

    In stationary mode the radial velocities are treated as known and dropped.
    """
    dmu = signal_derivatives(scenario, cfg, pilots)
    s2 = noise_variance(cfg) if sigma2 is None else sigma2
    G, K, n = dmu.shape
    flat = dmu.reshape(G * K, n)
    info = (2.0 / s2) * np.real(flat.conj().T @ flat)
    P = n // 5
    keep = _mode_param_mask(P, mode)
    info = symmetrize(info[np.ix_(keep, keep)])
    return FisherMatrix(info, FULL, P, scenario.has_los, mode)


def _interest_count(fm: FisherMatrix) -> int:
    per_path = 2 if fm.mode == STATIONARY else 3
    return per_path * fm.num_paths


def efim_channel_params(full: FisherMatrix) -> FisherMatrix:
    """Schur complement eliminating the gain nuisance block ``(alpha, xi)``."""
    if full.domain != FULL:
        raise ValueError("expected a full channel-parameter FIM")
    n = _interest_count(full)
    M = full.matrix
    A, Bm, C = M[:n, :n], M[:n, n:], M[n:, n:]
    C_inv, _, singular = inv_psd(C)
    efim = symmetrize(A - Bm @ C_inv @ Bm.T)
    return FisherMatrix(efim, CHANNEL, full.num_paths, full.has_los, full.mode, singular)


def state_fim(efim: FisherMatrix, jac: np.ndarray) -> np.ndarray:
    return symmetrize(jac @ efim.matrix @ jac.T)


def crb_state(efim: FisherMatrix, jac: np.ndarray) -> StateCrb:
    """Inverse of ``J I(gamma) J^T``; flagged pseudo-inverse when rank deficient."""
    if jac.shape[1] != efim.size:
        raise ValueError(f"Jacobian has {jac.shape[1]} columns, EFIM has size {efim.size}")
    cov, rank, singular = inv_from_factor(jac @ sqrt_factor(efim.matrix))
    return StateCrb(cov, rank, singular)


def state_rank(efim: FisherMatrix, jac: np.ndarray, tol: float = RANK_TOL) -> int:
    """Numerical rank of ``J I(gamma) J^T`` (singular values of its square-root factor)."""
    return factor_rank(jac @ sqrt_factor(efim.matrix), tol)


def extract_bounds(crb, num_ips: int, mode: str = MOBILE) -> BoundsReport:
    """PEB, per-IP MEB, CEB and VEB from a state-domain CRB.

    ``crb`` may be a :class:`StateCrb` or a plain matrix. Singular CRBs give
    infinite bounds.
    """
    rank = None
    if isinstance(crb, StateCrb):
        rank = crb.rank
        if crb.singular:
            inf = float("inf")
            return BoundsReport(inf, [inf] * num_ips, inf, inf if mode == MOBILE else float("nan"),
                                singular=True, rank=rank)
        crb = crb.covariance
    L = num_ips

    def block(i, j):
        return float(np.sqrt(max(np.trace(crb[i:j, i:j]), 0.0)))

    peb = block(0, 2)
    meb = [block(2 * l, 2 * l + 2) for l in range(1, L + 1)]
    ceb = float(np.sqrt(max(crb[2 * L + 2, 2 * L + 2], 0.0)))
    veb = block(2 * L + 3, 2 * L + 5) if mode == MOBILE and crb.shape[0] >= 2 * L + 5 else float("nan")
    return BoundsReport(peb, meb, ceb, veb, singular=False, rank=rank)


def channel_efim(scenario: Scenario, cfg: RadioConfig, pilots: PilotBlock, mode: str = MOBILE,
                 sigma2: Optional[float] = None) -> FisherMatrix:
    return efim_channel_params(fim_channel_params(scenario, cfg, pilots, mode=mode, sigma2=sigma2))


def mode_jacobian(scenario: Scenario, mode: str = MOBILE) -> np.ndarray:
    jac = geo.state_jacobian(scenario)
    return geo.select_jacobian(jac, scenario.num_ips, scenario.has_los, mode)


def compute_bounds(scenario: Scenario, cfg: RadioConfig, pilots: PilotBlock, mode: str = MOBILE) -> BoundsReport:
    """End-to-end bounds for one scenario."""
    efim = channel_efim(scenario, cfg, pilots, mode)
    return extract_bounds(crb_state(efim, mode_jacobian(scenario, mode)), scenario.num_ips, mode)


def approx_fim(efim: FisherMatrix):
    """Diagonal approximation ``diag(I^-1)^-1`` of a channel-parameter EFIM.

    Returns ``(F, singular)`` with ``F`` a full-size diagonal matrix in the
    original parameter order.
    """
    cov, _, singular = inv_psd(efim.matrix)
    return np.diag(1.0 / np.diag(cov)), singular


def compute_approx_bounds(scenario: Scenario, cfg: RadioConfig, pilots: PilotBlock,
                          efim: Optional[FisherMatrix] = None) -> BoundsReport:
    """Bounds from ``J F J^T`` with the diagonal approximation of the EFIM."""
    if efim is None:
        efim = channel_efim(scenario, cfg, pilots)
    F, _ = approx_fim(efim)
    approx = FisherMatrix(F, CHANNEL, efim.num_paths, efim.has_los, efim.mode)
    return extract_bounds(crb_state(approx, mode_jacobian(scenario, efim.mode)), scenario.num_ips, efim.mode)
