"""MISO-OFDM observation model with per-path delay and Doppler phase ramps."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from .geometry import SPEED_OF_LIGHT, PathGeometry, Scenario, state_to_channel_params


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(watt) + 30.0


@dataclass(frozen=True)
class RadioConfig:
    """Radio and waveform parameters. Defaults reproduce the reference setup.

    All values are SI (Hz, s, W, W/Hz); ``noise_figure`` is linear.
    ``element_spacing=None`` means half a wavelength.
    """

    carrier_frequency: float = 28e9
    bandwidth: float = 400e6
    num_subcarriers: int = 20
    num_transmissions: int = 20
    measurement_interval: float = 1e-3
    num_antennas: int = 16
    element_spacing: Optional[float] = None
    tx_power: float = 1.0
    noise_psd: float = float(dbm_to_watt(-173.855))
    noise_figure: float = float(db_to_linear(10.0))
    rcs: float = 10.0
    power_split_per_subcarrier: bool = False
    centered_subcarriers: bool = False

    def __post_init__(self):
        for name in ("carrier_frequency", "bandwidth", "measurement_interval", "tx_power",
                     "noise_psd", "noise_figure", "rcs"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("num_subcarriers", "num_transmissions", "num_antennas"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.element_spacing is not None and not self.element_spacing > 0:
            raise ValueError("element_spacing must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def subcarrier_spacing(self) -> float:
        return self.bandwidth / self.num_subcarriers

    @property
    def spacing(self) -> float:
        return self.wavelength / 2 if self.element_spacing is None else self.element_spacing

    @property
    def symbol_power(self) -> float:
        """|x_{g,k}|^2 under the configured power convention."""
        if self.power_split_per_subcarrier:
            return self.tx_power / self.num_subcarriers
        return self.tx_power

    def subcarrier_indices(self) -> np.ndarray:
        k = np.arange(self.num_subcarriers, dtype=float)
        if self.centered_subcarriers:
            k -= (self.num_subcarriers - 1) / 2
        return k

    def replace(self, **changes) -> "RadioConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class ComplexGain:
    amplitude: float
    phase: float

    @property
    def value(self) -> complex:
        return self.amplitude * np.exp(-1j * self.phase)


@dataclass(frozen=True)
class PilotBlock:
    """Precoders ``(G, N_B)`` with unit-modulus entries and symbols ``(G, K)``."""

    precoders: np.ndarray
    symbols: np.ndarray
    seed: Optional[int] = None


@dataclass(frozen=True)
class ObservationBlock:
    noise_free: np.ndarray
    observed: np.ndarray
    noise_variance: float


def make_pilots(cfg: RadioConfig, seed: Optional[int] = 0) -> PilotBlock:
    """Random-phase unit-modulus precoders and constant-amplitude pilots."""
    rng = np.random.default_rng(seed)
    G, K, N = cfg.num_transmissions, cfg.num_subcarriers, cfg.num_antennas
    precoders = np.exp(1j * rng.uniform(-np.pi, np.pi, size=(G, N)))
    symbols = np.sqrt(cfg.symbol_power) * np.exp(1j * rng.uniform(-np.pi, np.pi, size=(G, K)))
    return PilotBlock(precoders=precoders, symbols=symbols, seed=seed)


def _element_offsets(cfg: RadioConfig) -> np.ndarray:
    n = np.arange(cfg.num_antennas, dtype=float)
    return n - (cfg.num_antennas - 1) / 2


def steering_vector(theta, cfg: RadioConfig) -> np.ndarray:
    """ULA response along the x-axis, phase-referenced to the array centre.

    ``theta`` may be a scalar (returns ``(N_B,)``) or an array of angles
    (returns ``(N_B, len(theta))``).
    """
    theta = np.asarray(theta, dtype=float)
    kd = 2 * np.pi * cfg.spacing / cfg.wavelength
    phase = kd * np.multiply.outer(_element_offsets(cfg), np.cos(theta))
    return np.exp(1j * phase)


def steering_derivative(theta, cfg: RadioConfig) -> np.ndarray:
    """d a_B / d theta, same shape convention as :func:`steering_vector`."""
    theta = np.asarray(theta, dtype=float)
    kd = 2 * np.pi * cfg.spacing / cfg.wavelength
    n = _element_offsets(cfg)
    return steering_vector(theta, cfg) * (-1j * kd * np.multiply.outer(n, np.sin(theta)))


def path_gain(path: PathGeometry, cfg: RadioConfig) -> ComplexGain:
    """Free-space LOS gain, or the bistatic radar-equation gain for an NLOS path."""
    lam = cfg.wavelength
    if path.is_los:
        if path.distance <= 0:
            raise ValueError("LOS distance must be positive")
        amp = lam / (4 * np.pi * path.distance)
    else:
        if path.d_bs_ip <= 0 or path.d_ip_ue <= 0:
            raise ValueError(f"path {path.index}: distances must be positive")
        amp = np.sqrt(cfg.rcs / (4 * np.pi)) * lam / (4 * np.pi * path.d_bs_ip * path.d_ip_ue)
    phase = float(np.angle(np.exp(1j * 2 * np.pi * path.distance / lam)))
    return ComplexGain(amplitude=float(amp), phase=phase)


def active_paths(scenario: Scenario, paths: Optional[List[PathGeometry]] = None) -> List[PathGeometry]:
    """Geometry of the paths actually present (drops LOS when ``has_los`` is false)."""
    if paths is None:
        paths = state_to_channel_params(scenario)
    return paths if scenario.has_los else paths[1:]


def channel_vector(g: int, k: float, paths: Sequence[PathGeometry], gains: Sequence[ComplexGain],
                   cfg: RadioConfig) -> np.ndarray:
    """h_{g,k}: sum of steered, delay-rotated and Doppler-rotated path gains."""
    h = np.zeros(cfg.num_antennas, dtype=complex)
    for path, gain in zip(paths, gains):
        h += (
            gain.value
            * steering_vector(path.aod, cfg)
            * np.exp(-2j * np.pi * cfg.subcarrier_spacing * k * path.delay)
            * np.exp(2j * np.pi * g * cfg.measurement_interval * path.radial_velocity / cfg.wavelength)
        )
    return h


@dataclass
class _PathArrays:
    """Per-path quantities stacked into arrays for vectorised evaluation."""

    aod: np.ndarray
    delay: np.ndarray
    radial_velocity: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray

    @classmethod
    def from_paths(cls, paths, gains):
        return cls(
            aod=np.array([p.aod for p in paths]),
            delay=np.array([p.delay for p in paths]),
            radial_velocity=np.array([p.radial_velocity for p in paths]),
            amplitude=np.array([gn.amplitude for gn in gains]),
            phase=np.array([gn.phase for gn in gains]),
        )


def _signal_terms(arr: _PathArrays, cfg: RadioConfig, pilots: PilotBlock):
    """Return per-path signal components ``(G, K, P)`` and building blocks."""
    G = cfg.num_transmissions
    k = cfg.subcarrier_indices()
    g = np.arange(G, dtype=float)
    beam = pilots.precoders @ steering_vector(arr.aod, cfg)  # (G, P)
    delay_rot = np.exp(-2j * np.pi * cfg.subcarrier_spacing * np.multiply.outer(k, arr.delay))  # (K, P)
    doppler_rot = np.exp(
        2j * np.pi * cfg.measurement_interval / cfg.wavelength * np.multiply.outer(g, arr.radial_velocity)
    )  # (G, P)
    rho = arr.amplitude * np.exp(-1j * arr.phase)
    unit = pilots.symbols[:, :, None] * (doppler_rot[:, None, :] * delay_rot[None, :, :])
    return unit, beam, rho, g, k


def signal_from_params(aod, delay, radial_velocity, amplitude, phase, cfg: RadioConfig,
                       pilots: PilotBlock) -> np.ndarray:
    """mu_{g,k} of shape ``(G, K)`` directly from per-path channel parameters."""
    arr = _PathArrays(*(np.atleast_1d(np.asarray(x, dtype=float))
                        for x in (aod, delay, radial_velocity, amplitude, phase)))
    unit, beam, rho, _, _ = _signal_terms(arr, cfg, pilots)
    return np.einsum("gkp,gp,p->gk", unit, beam, rho)


def noise_free_signal(scenario: Scenario, cfg: RadioConfig, pilots: PilotBlock,
                      gains: Optional[Sequence[ComplexGain]] = None) -> np.ndarray:
    """Noise-free received samples mu_{g,k} of shape ``(G, K)``."""
    paths = active_paths(scenario)
    if gains is None:
        gains = [path_gain(p, cfg) for p in paths]
    arr = _PathArrays.from_paths(paths, gains)
    return signal_from_params(arr.aod, arr.delay, arr.radial_velocity, arr.amplitude, arr.phase, cfg, pilots)


def signal_derivatives(scenario: Scenario, cfg: RadioConfig, pilots: PilotBlock,
                       gains: Optional[Sequence[ComplexGain]] = None) -> np.ndarray:
    """d mu_{g,k} / d gamma_tilde, shape ``(G, K, 5P)`` for P active paths.

    Parameter order: ``[theta_0, tau_0, v_0, ..., theta_P, tau_P, v_P,
    alpha_0..alpha_P, xi_0..xi_P]``.
    """
    paths = active_paths(scenario)
    if gains is None:
        gains = [path_gain(p, cfg) for p in paths]
    arr = _PathArrays.from_paths(paths, gains)
    unit, beam, rho, g, k = _signal_terms(arr, cfg, pilots)
    P = len(paths)
    dbeam = pilots.precoders @ steering_derivative(arr.aod, cfg)
    base = unit * (beam * rho)[:, None, :]
    d_theta = unit * (dbeam * rho)[:, None, :]
    d_tau = base * (-2j * np.pi * cfg.subcarrier_spacing * k)[None, :, None]
    d_v = base * (2j * np.pi * cfg.measurement_interval / cfg.wavelength * g)[:, None, None]
    d_alpha = unit * (beam * np.exp(-1j * arr.phase))[:, None, :]
    d_xi = -1j * base
    out = np.empty(base.shape[:2] + (5 * P,), dtype=complex)
    out[:, :, 0 : 3 * P : 3] = d_theta
    out[:, :, 1 : 3 * P : 3] = d_tau
    out[:, :, 2 : 3 * P : 3] = d_v
    out[:, :, 3 * P : 4 * P] = d_alpha
    out[:, :, 4 * P :] = d_xi
    return out


def noise_variance(cfg: RadioConfig) -> float:
    """Per-subcarrier noise power N0 * NF * (W / K) in watts."""
    return cfg.noise_psd * cfg.noise_figure * cfg.subcarrier_spacing


def sample_observations(scenario: Scenario, cfg: RadioConfig, pilots: PilotBlock, seed=None,
                        sigma2: Optional[float] = None) -> ObservationBlock:
    """Noisy observations y = mu + CN(0, sigma_n^2)."""
    mu = noise_free_signal(scenario, cfg, pilots)
    s2 = noise_variance(cfg) if sigma2 is None else float(sigma2)
    rng = np.random.default_rng(seed)
    noise = np.sqrt(s2 / 2) * (rng.standard_normal(mu.shape) + 1j * rng.standard_normal(mu.shape))
    return ObservationBlock(noise_free=mu, observed=mu + noise, noise_variance=s2)
