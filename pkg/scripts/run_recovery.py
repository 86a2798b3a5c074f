"""Recover a planted truth at large N and report canonical loading errors.

    python3 scripts/run_recovery.py --n 20000 --restarts 20
"""

import argparse
from dataclasses import dataclass

import numpy as np

from ggfa.canon import canonicalize
from ggfa.core import sample
from ggfa.fit import FitConfig, fit
from ggfa.synth import planted_truth


@dataclass
class Config:
    p_x: int = 5
    q: int = 5
    p_z: int = 2
    c: float = 1.5
    truth_seed: int = 0
    n: int = 20_000
    data_seed: int = 105
    restarts: int = 20


def main(cfg: Config) -> None:
    truth = planted_truth(cfg.p_x, cfg.q, cfg.p_z, cfg.c, seed=cfg.truth_seed)
    data = sample(truth, cfg.n, cfg.data_seed)
    est = canonicalize(fit(data, cfg.p_z, FitConfig(n_restarts=cfg.restarts)).params).params
    S0, S1 = truth.M @ truth.M.T, est.M @ est.M.T
    print(f"max |M - M_true|       {np.max(np.abs(est.M - truth.M)):.4f}")
    print(f"MM^T relative Frobenius {np.linalg.norm(S1 - S0) / np.linalg.norm(S0):.4f}")
    print(f"c estimate {est.c:.4f} (truth {truth.c})")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=Config.n)
    ap.add_argument("--restarts", type=int, default=Config.restarts)
    ap.add_argument("--c", type=float, default=Config.c)
    a = ap.parse_args()
    main(Config(c=a.c, n=a.n, restarts=a.restarts))
