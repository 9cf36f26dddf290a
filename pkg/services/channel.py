"""
Line-of-sight channel model of a pinching-antenna system.

Waveguides run along the x-axis at height H, waveguide m sits at y_m and is fed
from (-L/2, y_m, H). A PA at x radiates the guided signal after a feed-to-PA
phase of 2π(x + L/2)/λ_g; free-space propagation to the user adds spherical
phase 2π r/λ and amplitude √η / r.
"""

import numpy as np

from interfaces.geometry import check_positions


def inwaveguide_vector(x_m, cfg, check=True):
    """e(x_m): unit-modulus feed-to-PA phase factors exp(-j 2π/λ_g (x_{m,n} + L/2))."""
    x_m = check_positions(x_m, cfg, check_spacing=False) if check else np.asarray(x_m, dtype=float)
    return np.exp(-2j * np.pi * (x_m + cfg.L / 2.0) / cfg.guided_wavelength)


def pa_distances(user, x_m, y_m, cfg):
    """Distances r_n from every PA of one waveguide to a ground user."""
    user = np.asarray(user, dtype=float)
    x_m = np.asarray(x_m, dtype=float)
    return np.sqrt((user[0] - x_m) ** 2 + (user[1] - y_m) ** 2 + cfg.H ** 2)


def freespace_vector(user, x_m, y_m, cfg):
    """h̃_k(x_m): √η exp(-j 2π r_n/λ) / r_n for every PA on the waveguide."""
    r = pa_distances(user, x_m, y_m, cfg)
    return cfg.sqrt_eta * np.exp(-2j * np.pi * r / cfg.wavelength) / r


def channel_terms(user, x_m, y_m, cfg, check=True):
    """Per-PA contributions to h_k(x_m); both the guided and the free-space phase lag."""
    return freespace_vector(user, x_m, y_m, cfg) * inwaveguide_vector(x_m, cfg, check=check)


def waveguide_channel(user, x_m, y_m, cfg, check=True):
    """h_k(x_m) = Σ_n √η exp(-j2π(r_n/λ + (x_{m,n}+L/2)/λ_g)) / r_n."""
    return complex(np.sum(channel_terms(user, x_m, y_m, cfg, check=check)))


def amplitude_bound(user, x_m, y_m, cfg):
    """√η Σ_n 1/r_n, the phase-aligned upper bound on |h_k(x_m)|."""
    return float(cfg.sqrt_eta * np.sum(1.0 / pa_distances(user, x_m, y_m, cfg)))


def channel_matrix(users, layout, cfg, check=True):
    """
    Assembles H[k, m] = h_k(x_m) for every user and waveguide.

    Returns:
        np.ndarray: complex array of shape (K, M).
    """
    positions = users.positions if hasattr(users, "positions") else np.asarray(users, dtype=float).reshape(-1, 2)
    y = cfg.waveguide_y
    counts = layout.counts
    if check:
        layout.validate(cfg, check_spacing=False)

    if len(set(counts)) == 1:
        X = np.vstack(layout.waveguides)  # (M, N)
        return dense_channel_matrix(positions, X, cfg)

    H = np.empty((positions.shape[0], layout.M), dtype=complex)
    for m, x_m in enumerate(layout.waveguides):
        for k, user in enumerate(positions):
            H[k, m] = waveguide_channel(user, x_m, y[m], cfg, check=False)
    return H


def dense_channel_matrix(positions, X, cfg):
    """
    Vectorized H for layouts with N PAs on every waveguide.

    X has shape (..., M, N); leading axes batch over layouts (e.g. a particle
    swarm). Returns shape (..., K, M). No coordinate checks are made.
    """
    positions = np.asarray(positions, dtype=float)
    X = np.asarray(X, dtype=float)
    y = cfg.waveguide_y[: X.shape[-2]]
    dx = positions[:, 0][:, None, None] - X[..., None, :, :]
    dy = positions[:, 1][:, None, None] - y[None, :, None]
    r = np.sqrt(dx ** 2 + dy ** 2 + cfg.H ** 2)
    phase = 2.0 * np.pi * (r / cfg.wavelength + (X[..., None, :, :] + cfg.L / 2.0) / cfg.guided_wavelength)
    return np.sum(cfg.sqrt_eta * np.exp(-1j * phase) / r, axis=-1)
