"""Build one network, drop users, and look at the resulting SINR field.

Writes two CSVs into the current directory (snapshot.csv, graph.csv) that can
be loaded into any plotting tool; the terminal output summarizes the same data.
"""

from pathlib import Path

import numpy as np

from tiltopt.graph import graph_to_csv
from tiltopt.simulator import NetworkEnv, SimConfig, snapshot_to_csv

OUT = Path.cwd()


def main():
    cfg = SimConfig(seed=3, n_rings=1, users=300, neighbors=5)
    env = NetworkEnv(cfg)
    snap = env.snapshot

    print(f"sites: {env.layout.n_sites}, cells: {env.n_cells}, "
          f"intersite distance: {env.layout.intersite_m:.0f} m")
    print(f"user SINR: p10 {np.percentile(snap.sinr_db, 10):6.2f} dB, "
          f"median {np.percentile(snap.sinr_db, 50):6.2f} dB, "
          f"p90 {np.percentile(snap.sinr_db, 90):6.2f} dB")

    counts = np.bincount(snap.serving, minlength=env.n_cells)
    print(f"users per cell: min {counts.min()}, max {counts.max()}, "
          f"empty cells: {int(np.sum(counts == 0))}")

    print("\nper-cell view (first site):")
    print(f"{'cell':>4} {'azimuth':>8} {'tilt':>5} {'users':>6} {'mean SINR':>10}")
    for c in range(3):
        print(f"{c:>4} {env.layout.cell_azimuth_deg[c]:>8.0f} "
              f"{env.tilts_deg[c]:>5} {counts[c]:>6} "
              f"{snap.cell_mean_sinr_db[c]:>10.2f}")

    rewards = env.rewards()
    print(f"\nneighborhood-mean reward: min {rewards.min():.2f}, "
          f"mean {rewards.mean():.2f}, max {rewards.max():.2f} dB")

    snapshot_to_csv(OUT / "snapshot.csv", snap, env.users_xy)
    graph_to_csv(OUT / "graph.csv", env.graph)
    print(f"wrote {OUT / 'snapshot.csv'} and {OUT / 'graph.csv'}")


if __name__ == "__main__":
    main()
