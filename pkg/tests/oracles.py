"""Independent reference computations used as test oracles.

Forward maps and signals are re-derived from the plain geometric definitions
with explicit loops. The finite-difference helpers difference the package's
own forward maps, to check its analytic derivatives.
"""

import mpmath as mp
import numpy as np

from dopploc import geometry as geo
from dopploc.channel import active_paths, path_gain, signal_from_params

C = 299_792_458.0


def path_params(bs, ue, ips, vel, clock, has_los=True):
    """[(theta, tau, v_radial)] per active path, from first principles."""
    bs, ue, vel = (np.asarray(x, dtype=float) for x in (bs, ue, vel))
    out = []
    if has_los:
        d0 = np.sqrt((ue[0] - bs[0]) ** 2 + (ue[1] - bs[1]) ** 2)
        theta = np.arctan2(ue[1] - bs[1], ue[0] - bs[0])
        v0 = (vel[0] * (bs[0] - ue[0]) + vel[1] * (bs[1] - ue[1])) / d0
        out.append((theta, (d0 + clock) / C, v0))
    for ip in ips:
        d1 = np.hypot(ip[0] - bs[0], ip[1] - bs[1])
        d2 = np.hypot(ip[0] - ue[0], ip[1] - ue[1])
        theta = np.arctan2(ip[1] - bs[1], ip[0] - bs[0])
        vl = (vel[0] * (ip[0] - ue[0]) + vel[1] * (ip[1] - ue[1])) / d2
        out.append((theta, (d1 + d2 + clock) / C, vl))
    return out


def range_rate_fd(ue, ip, vel, h=1e-3):
    """Rate of change of the UE-IP distance along the trajectory, negated.

    The radial velocity convention uses the direction from the UE toward the
    IP, so an approaching UE has positive radial velocity.
    """
    ue, ip, vel = (np.asarray(x, dtype=float) for x in (ue, ip, vel))
    d = lambda t: np.linalg.norm(ip - (ue + vel * t))  # noqa: E731
    return -(d(h) - d(-h)) / (2 * h)


def naive_mu(params, amps, phases, cfg, pilots):
    """mu[g, k] by explicit summation over paths and antenna elements."""
    G, K, N = cfg.num_transmissions, cfg.num_subcarriers, cfg.num_antennas
    lam = C / cfg.carrier_frequency
    spacing = cfg.spacing
    df = cfg.bandwidth / K
    ks = cfg.subcarrier_indices()
    mu = np.zeros((G, K), dtype=complex)
    for g in range(G):
        for ki in range(K):
            k = ks[ki]
            acc = 0.0 + 0.0j
            for (theta, tau, vr), a, xi in zip(params, amps, phases):
                rho = a * np.exp(-1j * xi)
                rot = np.exp(-2j * np.pi * df * k * tau) * np.exp(2j * np.pi * g * cfg.measurement_interval * vr / lam)
                for n in range(N):
                    steer = np.exp(2j * np.pi * spacing / lam * (n - (N - 1) / 2) * np.cos(theta))
                    acc += rho * steer * rot * pilots.precoders[g, n]
            mu[g, ki] = acc * pilots.symbols[g, ki]
    return mu


def fd_jacobian(sc, h=1e-6):
    """Central differences of the package forward map over the packed state."""
    s0 = geo.pack_state(sc)
    cols = []
    for i in range(s0.size):
        sp, sm = s0.copy(), s0.copy()
        sp[i] += h
        sm[i] -= h
        gp = geo.channel_param_vector(geo.unpack_state(sp, sc))
        gm = geo.channel_param_vector(geo.unpack_state(sm, sc))
        diff = gp - gm
        diff[0::3] = geo.wrap_angle(diff[0::3])
        cols.append(diff / (2 * h))
    return np.array(cols)


def fd_signal_derivatives(sc, cfg, pilots):
    """Central differences of the signal over per-path (theta, tau, v, alpha, xi)."""
    paths = active_paths(sc)
    gains = [path_gain(p, cfg) for p in paths]
    base = np.array([[p.aod, p.delay, p.radial_velocity, g.amplitude, g.phase] for p, g in zip(paths, gains)])
    P = len(paths)
    steps = {0: 1e-6, 1: 1e-14, 2: 1e-5, 3: None, 4: 1e-6}
    cols = {}
    for l in range(P):
        for q in range(5):
            h = steps[q] if steps[q] is not None else 1e-6 * base[l, 3]
            up, dn = base.copy(), base.copy()
            up[l, q] += h
            dn[l, q] -= h
            d = (signal_from_params(*up.T, cfg, pilots) - signal_from_params(*dn.T, cfg, pilots)) / (2 * h)
            idx = 3 * l + q if q < 3 else (3 * P + l if q == 3 else 4 * P + l)
            cols[idx] = d
    return np.stack([cols[i] for i in range(5 * P)], axis=-1)


def mp_inverse(m, dps=50):
    with mp.workdps(dps):
        inv = mp.matrix(np.asarray(m, dtype=float).tolist()) ** -1
        return np.array(inv.tolist(), dtype=float)


def mp_inverse_from_factor(X, dps=60):
    """(X X^T)^-1 with the product and the inverse formed in high precision."""
    with mp.workdps(dps):
        M = mp.matrix(np.asarray(X, dtype=float).tolist())
        return np.array(((M * M.T) ** -1).tolist(), dtype=float)


def mp_schur(m, keep, drop, dps=50):
    """m[keep, keep] - m[keep, drop] m[drop, drop]^-1 m[drop, keep] in high precision."""
    m = np.asarray(m, dtype=float)
    with mp.workdps(dps):
        A = mp.matrix(m[np.ix_(keep, keep)].tolist())
        B = mp.matrix(m[np.ix_(keep, drop)].tolist())
        Cm = mp.matrix(m[np.ix_(drop, drop)].tolist())
        return np.array((A - B * Cm ** -1 * B.T).tolist(), dtype=float)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))
