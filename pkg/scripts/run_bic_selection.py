"""How often a BIC scan recovers the true latent dimension.

    python3 scripts/run_bic_selection.py --replicates 20
"""

import argparse
from collections import Counter
from dataclasses import dataclass

from ggfa.core import sample
from ggfa.fit import FitConfig, bic_scan
from ggfa.synth import planted_truth


@dataclass
class Config:
    p_x: int = 4
    q: int = 4
    p_z: int = 2
    c: float = 2.0
    truth_seed: int = 0
    n: int = 5000
    replicates: int = 20
    scan: tuple = (1, 2, 3)
    restarts: int = 3


def main(cfg: Config) -> None:
    truth = planted_truth(cfg.p_x, cfg.q, cfg.p_z, cfg.c, seed=cfg.truth_seed)
    picks = []
    for r in range(cfg.replicates):
        scan = bic_scan(sample(truth, cfg.n, 1000 + r), cfg.scan, FitConfig(n_restarts=cfg.restarts))
        picks.append(scan.best_p_z)
        print(f"replicate {r}: " + "  ".join(f"p_z={row.p_z} bic={row.bic:.1f}" for row in scan.rows))
    counts = Counter(picks)
    print(f"selected {cfg.p_z} in {counts[cfg.p_z]}/{cfg.replicates} replicates; counts {dict(counts)}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--replicates", type=int, default=Config.replicates)
    ap.add_argument("--c", type=float, default=Config.c)
    ap.add_argument("--n", type=int, default=Config.n)
    a = ap.parse_args()
    main(Config(c=a.c, n=a.n, replicates=a.replicates))
