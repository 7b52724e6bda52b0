"""Scenario geometry and the state -> channel-parameter map.

The state vector is ordered ``[p0 (2), p1..pL (2L), B (1), v (2)]`` and the
channel-parameter vector ``[theta_0, tau_0, v_0, ..., theta_L, tau_L, v_L]``.
The Jacobian uses denominator layout: row ``i`` is the derivative with respect
to state entry ``i``, column ``j`` is channel parameter ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
DEGENERATE_DISTANCE = 1e-9

# mobility modes
MOBILE = "mobile"
STATIONARY = "stationary"
KNOWN_VELOCITY = "known_velocity"
MODES = (MOBILE, STATIONARY, KNOWN_VELOCITY)


class GeometryError(ValueError):
    """Raised for degenerate geometry (coincident points)."""

    def __init__(self, message: str, path: Optional[int] = None):
        super().__init__(message)
        self.path = path


def _vec2(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.shape != (2,):
        raise ValueError(f"expected a 2-vector, got shape {arr.shape}")
    return arr


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]."""
    wrapped = np.mod(np.asarray(theta, dtype=float) + np.pi, 2 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    return wrapped if np.ndim(wrapped) else float(wrapped)


@dataclass(frozen=True)
class Scenario:
    """BS, UE and incidence-point layout plus clock offset and velocity.

    ``clock_offset`` is expressed in meters. ``ue_position`` is the UE
    position at the first transmission; later positions follow
    ``p0 + v * g * T_int``.
    """

    ue_position: np.ndarray
    ip_positions: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    clock_offset: float = 0.0
    bs_position: np.ndarray = field(default_factory=lambda: np.zeros(2))
    has_los: bool = True

    def __post_init__(self):
        object.__setattr__(self, "ue_position", _vec2(self.ue_position))
        object.__setattr__(self, "bs_position", _vec2(self.bs_position))
        object.__setattr__(self, "velocity", _vec2(self.velocity))
        ips = np.asarray(self.ip_positions, dtype=float)
        ips = ips.reshape(-1, 2) if ips.size else np.zeros((0, 2))
        object.__setattr__(self, "ip_positions", ips)
        object.__setattr__(self, "clock_offset", float(self.clock_offset))
        for arr in (self.ue_position, self.bs_position, self.velocity, self.ip_positions):
            arr.setflags(write=False)

    @property
    def num_ips(self) -> int:
        return self.ip_positions.shape[0]

    @property
    def state_dim(self) -> int:
        return 2 * self.num_ips + 5

    def replace(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def ue_position_at(self, g: int, t_int: float) -> np.ndarray:
        return self.ue_position + self.velocity * g * t_int

    def validate(self) -> None:
        d0 = np.linalg.norm(self.ue_position - self.bs_position)
        if d0 < DEGENERATE_DISTANCE:
            raise GeometryError("UE coincides with BS", path=0)
        for l, p in enumerate(self.ip_positions, start=1):
            if np.linalg.norm(p - self.bs_position) < DEGENERATE_DISTANCE:
                raise GeometryError(f"IP {l} coincides with BS", path=l)
            if np.linalg.norm(p - self.ue_position) < DEGENERATE_DISTANCE:
                raise GeometryError(f"IP {l} coincides with UE", path=l)


def pack_state(scenario: Scenario) -> np.ndarray:
    """Flatten a scenario into the state vector ``s``."""
    return np.concatenate(
        [
            scenario.ue_position,
            scenario.ip_positions.reshape(-1),
            [scenario.clock_offset],
            scenario.velocity,
        ]
    )


def unpack_state(s: Sequence[float], template: Scenario) -> Scenario:
    """Inverse of :func:`pack_state`; BS position and LOS flag come from ``template``."""
    s = np.asarray(s, dtype=float)
    L = (s.size - 5) // 2
    if s.size != 2 * L + 5:
        raise ValueError(f"state vector length {s.size} is not 2L+5")
    return Scenario(
        ue_position=s[0:2],
        ip_positions=s[2 : 2 + 2 * L].reshape(L, 2),
        clock_offset=s[2 * L + 2],
        velocity=s[2 * L + 3 : 2 * L + 5],
        bs_position=template.bs_position,
        has_los=template.has_los,
    )


@dataclass(frozen=True)
class PathGeometry:
    """Channel parameters and geometric by-products of one path.

    For the LOS path ``d_bs_ip`` and ``d_ip_ue`` are ``None`` and
    ``distance`` is ``d0``.
    """

    index: int
    aod: float
    delay: float
    radial_velocity: float
    distance: float
    dir_bs: np.ndarray
    dir_ue: np.ndarray
    d_bs_ip: Optional[float] = None
    d_ip_ue: Optional[float] = None

    @property
    def is_los(self) -> bool:
        return self.index == 0


def state_to_channel_params(scenario: Scenario) -> List[PathGeometry]:
    """Map the scenario state to per-path AOD, delay and radial velocity.

    Returns all ``L + 1`` paths, LOS first, regardless of ``has_los``;
    callers drop the LOS entry when it is absent.
    """
    scenario.validate()
    pB, p0, v, B = scenario.bs_position, scenario.ue_position, scenario.velocity, scenario.clock_offset
    paths = []
    diff = p0 - pB
    d0 = float(np.hypot(*diff))
    t_b = diff / d0
    t_u = -t_b
    paths.append(
        PathGeometry(
            index=0,
            aod=float(np.arctan2(t_b[1], t_b[0])),
            delay=(d0 + B) / SPEED_OF_LIGHT,
            radial_velocity=float(v @ t_u),
            distance=d0,
            dir_bs=t_b,
            dir_ue=t_u,
        )
    )
    for l, pl in enumerate(scenario.ip_positions, start=1):
        d1 = float(np.hypot(*(pl - pB)))
        d2 = float(np.hypot(*(pl - p0)))
        t_b = (pl - pB) / d1
        t_u = (pl - p0) / d2
        paths.append(
            PathGeometry(
                index=l,
                aod=float(np.arctan2(t_b[1], t_b[0])),
                delay=(d1 + d2 + B) / SPEED_OF_LIGHT,
                radial_velocity=float(v @ t_u),
                distance=d1 + d2,
                dir_bs=t_b,
                dir_ue=t_u,
                d_bs_ip=d1,
                d_ip_ue=d2,
            )
        )
    return paths


def channel_param_vector(scenario: Scenario, paths: Optional[List[PathGeometry]] = None) -> np.ndarray:
    """Stack ``[theta_l, tau_l, v_l]`` for every path, LOS first (all L+1 paths)."""
    if paths is None:
        paths = state_to_channel_params(scenario)
    return np.array([[p.aod, p.delay, p.radial_velocity] for p in paths]).reshape(-1)


def state_jacobian(scenario: Scenario, paths: Optional[List[PathGeometry]] = None) -> np.ndarray:
    """Analytic Jacobian d(gamma)/d(s) of shape ``(2L+5, 3(L+1))``.

    Always covers all L+1 paths and the full mobile state; use
    :func:`select_jacobian` to restrict to a LOS/mobility configuration.
    """
    if paths is None:
        paths = state_to_channel_params(scenario)
    L = scenario.num_ips
    v = scenario.velocity
    c = SPEED_OF_LIGHT
    J = np.zeros((2 * L + 5, 3 * (L + 1)))
    iB = 2 * L + 2
    iv = slice(2 * L + 3, 2 * L + 5)
    for path in paths:
        l = path.index
        col = 3 * l
        t_b, t_u = path.dir_bs, path.dir_ue
        if l == 0:
            d_bs = path.distance
            d_ue = path.distance
        else:
            d_bs = path.d_bs_ip
            d_ue = path.d_ip_ue
        # bearing derivative w.r.t. the point the AOD looks at
        dtheta = np.array([-t_b[1], t_b[0]]) / d_bs
        dv_p0 = (path.radial_velocity * t_u - v) / d_ue
        if l == 0:
            J[0:2, col] = dtheta
            J[0:2, col + 1] = t_b / c
            J[0:2, col + 2] = dv_p0
        else:
            rows = slice(2 * l, 2 * l + 2)
            J[rows, col] = dtheta
            J[0:2, col + 1] = -t_u / c
            J[rows, col + 1] = (t_b + t_u) / c
            J[0:2, col + 2] = dv_p0
            J[rows, col + 2] = -dv_p0
        J[iB, col + 1] = 1.0 / c
        J[iv, col + 2] = t_u
    return J


def param_index(num_ips: int, has_los: bool = True, mode: str = MOBILE) -> np.ndarray:
    """Indices into the full ``3(L+1)`` channel-parameter vector kept for a configuration.

    Stationary mode drops the radial velocities; LOS-absent drops path 0.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    per_path = (0, 1) if mode == STATIONARY else (0, 1, 2)
    first = 0 if has_los else 1
    return np.array([3 * l + q for l in range(first, num_ips + 1) for q in per_path], dtype=int)


def state_index(num_ips: int, mode: str = MOBILE) -> np.ndarray:
    """Indices into the full ``2L+5`` state kept for a mobility mode."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    n = 2 * num_ips + 5 if mode == MOBILE else 2 * num_ips + 3
    return np.arange(n)


def select_jacobian(jac: np.ndarray, num_ips: int, has_los: bool = True, mode: str = MOBILE) -> np.ndarray:
    return jac[np.ix_(state_index(num_ips, mode), param_index(num_ips, has_los, mode))]
