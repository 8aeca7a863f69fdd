"""Hexagonal multi-cell radio network simulator.

A deployment is a triangular lattice of three-sector sites. Each cell points a
directional antenna at one of three azimuths and carries one adjustable
integer downtilt, the action variable of the learning problem. Users are
dropped uniformly over a disc covering the layout; downlink received power
follows an urban macro empirical path-loss model plus a parabolic antenna
pattern, and interference is full-buffer: every non-serving cell transmits at
full power all the time. The per-user traffic volume is carried in the config
for bookkeeping but does not enter the SINR computation.

All angles are degrees. Positions and heights are meters, powers dBm.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import CellGraph, build_graph

# action space: downtilt set in whole degrees; the action index IS the tilt
TILT_DEGREES = np.arange(16)
N_ACTIONS = 16

SINR_FLOOR_DB = -20.0      # stands in for cells with no attached users
SINR_FEATURE_LO = -20.0    # feature normalization window, dB
SINR_FEATURE_HI = 40.0
MIN_PROPAGATION_M = 10.0   # path-loss model validity clamp

CELLS_PER_SITE = 3
SECTOR_AZIMUTHS_DEG = (0.0, 120.0, 240.0)


@dataclass(frozen=True)
class SimConfig:
    """Deployment and episode parameters; defaults are the full-scale profile."""

    seed: int = 0
    n_rings: int = 2
    users: int = 1000
    neighbors: int = 5
    intersite_min_m: float = 300.0
    intersite_max_m: float = 1500.0
    bs_height_m: float = 32.0
    ue_height_m: float = 1.5
    freq_mhz: float = 2100.0
    tx_power_dbm: float = 46.0
    noise_dbm: float = -104.0
    traffic_mbps: float = 1.0
    episode_len: int = 20


@dataclass(frozen=True)
class Layout:
    """Site and cell geometry for one intersite-distance draw."""

    site_xy: np.ndarray        # (S, 2)
    cell_site: np.ndarray      # (C,) site index of each cell
    cell_xy: np.ndarray        # (C, 2) cell position == its site position
    cell_azimuth_deg: np.ndarray  # (C,)
    intersite_m: float

    @property
    def n_sites(self) -> int:
        return len(self.site_xy)

    @property
    def n_cells(self) -> int:
        return len(self.cell_site)


def hex_site_layout(n_rings: int, intersite_m: float) -> np.ndarray:
    """Site positions on a triangular lattice: a center plus full hex rings.

    Ring r contributes 6*r sites, so the total is 1 + sum(6r). Sites are
    ordered center first, then ring by ring in a fixed axial-coordinate order,
    which keeps ids stable across runs.
    """
    if n_rings < 0:
        raise ValueError(f"n_rings must be >= 0, got {n_rings}")
    coords = []
    for q in range(-n_rings, n_rings + 1):
        for r in range(-n_rings, n_rings + 1):
            if abs(q + r) <= n_rings:
                ring = max(abs(q), abs(r), abs(q + r))
                coords.append((ring, q, r))
    coords.sort()
    xy = np.array([(q + 0.5 * r, r * np.sqrt(3.0) / 2.0) for _, q, r in coords])
    return xy * intersite_m


def build_layout(n_rings: int, intersite_m: float) -> Layout:
    """Expand a site lattice into three sectored cells per site."""
    site_xy = hex_site_layout(n_rings, intersite_m)
    n_sites = len(site_xy)
    cell_site = np.repeat(np.arange(n_sites), CELLS_PER_SITE)
    cell_xy = site_xy[cell_site]
    azimuth = np.tile(np.asarray(SECTOR_AZIMUTHS_DEG), n_sites)
    return Layout(site_xy, cell_site, cell_xy, azimuth, float(intersite_m))


def user_disc_radius(layout: Layout) -> float:
    """Radius of the user drop area: layout extent plus one intersite margin."""
    return float(np.max(np.hypot(layout.site_xy[:, 0], layout.site_xy[:, 1]))
                 + layout.intersite_m)


def place_users(layout: Layout, n_users: int, rng: np.random.Generator) -> np.ndarray:
    """Drop users uniformly over the bounding disc of the layout."""
    radius = user_disc_radius(layout)
    r = radius * np.sqrt(rng.random(n_users))
    theta = 2.0 * np.pi * rng.random(n_users)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def path_loss_db(distance_m, freq_mhz: float, bs_height_m: float,
                 ue_height_m: float, metro_correction_db: float = 3.0):
    """Urban macro path loss in dB (COST-231 extension of the Hata model).

    Parameters
    ----------
    distance_m : array_like
        Horizontal link distance in meters, clamped below at 10 m where the
        empirical model stops being meaningful. Nonpositive distances are a
        caller bug and raise.
    freq_mhz, bs_height_m, ue_height_m : float
        Carrier frequency and antenna heights. Large-city mobile antenna
        correction is used, the standard pairing with the +3 dB metropolitan
        term.

    Returns
    -------
    ndarray or float
        Path loss in dB, strictly increasing in distance beyond the clamp.
    """
    d = np.asarray(distance_m, dtype=np.float64)
    if np.any(d <= 0.0):
        raise ValueError("path loss undefined for nonpositive distance")
    d_km = np.maximum(d, MIN_PROPAGATION_M) / 1000.0
    a_ue = 3.2 * np.log10(11.75 * ue_height_m) ** 2 - 4.97
    loss = (46.3 + 33.9 * np.log10(freq_mhz) - 13.82 * np.log10(bs_height_m)
            - a_ue + (44.9 - 6.55 * np.log10(bs_height_m)) * np.log10(d_km)
            + metro_correction_db)
    return loss if loss.shape else float(loss)


def antenna_gain_db(horiz_off_deg, vert_off_deg, boresight_gain_db: float = 15.0):
    """Sectored antenna gain in dB for given offsets from boresight.

    Parabolic horizontal pattern with a 65 degree 3 dB width, parabolic
    vertical pattern with a 10 degree width; both attenuations floor at 30 dB,
    as does their combination. ``vert_off_deg`` is the depression angle toward
    the user minus the electrical downtilt, so a tilt-matched user on the
    azimuth sees the full boresight gain.
    """
    phi = (np.asarray(horiz_off_deg, dtype=np.float64) + 180.0) % 360.0 - 180.0
    theta = np.asarray(vert_off_deg, dtype=np.float64)
    a_h = -np.minimum(12.0 * (phi / 65.0) ** 2, 30.0)
    a_v = -np.minimum(12.0 * (theta / 10.0) ** 2, 30.0)
    combined = np.maximum(a_h + a_v, -30.0)
    out = combined + boresight_gain_db
    return out if out.shape else float(out)


@dataclass
class Snapshot:
    """One full-interference evaluation of the network at fixed tilts."""

    rx_dbm: np.ndarray              # (C, U) received power per cell/user
    serving: np.ndarray             # (U,) serving cell per user
    sinr_db: np.ndarray             # (U,)
    cell_mean_sinr_db: np.ndarray   # (C,) arithmetic mean in dB, floor for empty
    cell_sinr_percentiles_db: np.ndarray  # (C, 3) p10/p50/p90, floor for empty
    tilts_deg: np.ndarray           # (C,) tilts the snapshot was computed at


def association_and_sinr(rx_dbm: np.ndarray, noise_dbm: float):
    """Attach each user to its strongest cell and compute the downlink SINR.

    Ties go to the lowest cell id. SINR is formed in the linear power domain
    (serving power over the sum of every other cell plus noise) and reported
    in dB. Raising any single interferer's entry can only lower the SINR of
    users it does not serve.
    """
    serving = np.argmax(rx_dbm, axis=0)
    mw = np.power(10.0, rx_dbm / 10.0)
    total = mw.sum(axis=0)
    serve_mw = mw[serving, np.arange(rx_dbm.shape[1])]
    noise_mw = 10.0 ** (noise_dbm / 10.0)
    sinr = serve_mw / (total - serve_mw + noise_mw)
    return serving, 10.0 * np.log10(sinr)


def compute_snapshot(layout: Layout, users_xy: np.ndarray, tilts_deg: np.ndarray,
                     cfg: SimConfig) -> Snapshot:
    """Propagate every cell to every user and summarize per-cell SINR stats."""
    tilts_deg = np.asarray(tilts_deg)
    dx = users_xy[:, 0][None, :] - layout.cell_xy[:, 0][:, None]
    dy = users_xy[:, 1][None, :] - layout.cell_xy[:, 1][:, None]
    dist = np.maximum(np.hypot(dx, dy), MIN_PROPAGATION_M)

    bearing = np.degrees(np.arctan2(dy, dx))
    horiz_off = bearing - layout.cell_azimuth_deg[:, None]
    depression = np.degrees(np.arctan2(cfg.bs_height_m - cfg.ue_height_m, dist))
    gain = antenna_gain_db(horiz_off, depression - tilts_deg[:, None])
    loss = path_loss_db(dist, cfg.freq_mhz, cfg.bs_height_m, cfg.ue_height_m)
    rx_dbm = cfg.tx_power_dbm + gain - loss

    serving, sinr_db = association_and_sinr(rx_dbm, cfg.noise_dbm)

    n_cells = layout.n_cells
    mean_db = np.full(n_cells, SINR_FLOOR_DB)
    pct_db = np.full((n_cells, 3), SINR_FLOOR_DB)
    for c in range(n_cells):
        attached = sinr_db[serving == c]
        if attached.size:
            mean_db[c] = attached.mean()
            pct_db[c] = np.percentile(attached, [10.0, 50.0, 90.0])
    return Snapshot(rx_dbm, serving, sinr_db, mean_db, pct_db,
                    np.array(tilts_deg, dtype=np.int64))


def cell_feature_matrix(layout: Layout, snap: Snapshot, norm_radius_m: float) -> np.ndarray:
    """Per-cell learning features, one row per cell.

    Columns: position scaled by the layout radius (2), unit antenna direction
    (2), SINR percentiles mapped from [-20, 40] dB onto [0, 1] with clamping
    (3), and tilt scaled by its maximum (1).
    """
    pos = layout.cell_xy / norm_radius_m
    az = np.radians(layout.cell_azimuth_deg)
    direction = np.column_stack([np.cos(az), np.sin(az)])
    span = SINR_FEATURE_HI - SINR_FEATURE_LO
    pct = np.clip((snap.cell_sinr_percentiles_db - SINR_FEATURE_LO) / span, 0.0, 1.0)
    tilt = snap.tilts_deg[:, None] / float(TILT_DEGREES[-1])
    return np.hstack([pos, direction, pct, tilt])


N_FEATURES = 8


def neighborhood_mean_rewards(cell_mean_sinr_db: np.ndarray,
                              neighborhoods: list[np.ndarray]) -> np.ndarray:
    """Reward per cell: mean of the cell-mean SINR over its closed neighborhood."""
    return np.array([cell_mean_sinr_db[nb].mean() for nb in neighborhoods])


class NetworkEnv:
    """Mutable training environment: geometry, users, tilts, graph, snapshot.

    ``reset_episode`` redraws the intersite distance, the user drop and the
    tilts, and rebuilds the cell graph; the site topology (ring count) never
    changes. All randomness comes from the generator handed in, so a fixed
    seed reproduces the entire episode sequence.
    """

    def __init__(self, cfg: SimConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.layout: Layout | None = None
        self.users_xy: np.ndarray | None = None
        self.tilts_deg: np.ndarray | None = None
        self.graph: CellGraph | None = None
        self.snapshot: Snapshot | None = None
        self.norm_radius_m: float = 1.0
        self.reset_episode()

    @property
    def n_cells(self) -> int:
        return self.layout.n_cells

    def reset_episode(self) -> None:
        d = self.rng.uniform(self.cfg.intersite_min_m, self.cfg.intersite_max_m)
        self.layout = build_layout(self.cfg.n_rings, d)
        self.norm_radius_m = user_disc_radius(self.layout)
        self.users_xy = place_users(self.layout, self.cfg.users, self.rng)
        self.tilts_deg = self.rng.integers(0, N_ACTIONS, size=self.layout.n_cells)
        self.graph = build_graph(self.layout.site_xy, self.layout.cell_site,
                                 self.cfg.neighbors)
        self.snapshot = compute_snapshot(self.layout, self.users_xy,
                                         self.tilts_deg, self.cfg)

    def apply_actions(self, tilts_deg: np.ndarray) -> None:
        """Set all tilts simultaneously and recompute the snapshot once."""
        t = np.asarray(tilts_deg)
        if t.shape != (self.n_cells,):
            raise ValueError(f"expected {self.n_cells} tilts, got shape {t.shape}")
        if np.any(t < TILT_DEGREES[0]) or np.any(t > TILT_DEGREES[-1]):
            raise ValueError("tilt outside the action set")
        self.tilts_deg = t.astype(np.int64)
        self.snapshot = compute_snapshot(self.layout, self.users_xy,
                                         self.tilts_deg, self.cfg)

    def features(self) -> np.ndarray:
        return cell_feature_matrix(self.layout, self.snapshot, self.norm_radius_m)

    def rewards(self) -> np.ndarray:
        return neighborhood_mean_rewards(self.snapshot.cell_mean_sinr_db,
                                         self.graph.closed_neighborhoods)


def snapshot_to_csv(path, snap: Snapshot, users_xy: np.ndarray) -> None:
    """Write one row per user: id, position, serving cell, SINR."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "x", "y", "serving_cell", "sinr_db"])
        for u in range(len(users_xy)):
            w.writerow([u, repr(float(users_xy[u, 0])), repr(float(users_xy[u, 1])),
                        int(snap.serving[u]), repr(float(snap.sinr_db[u]))])
