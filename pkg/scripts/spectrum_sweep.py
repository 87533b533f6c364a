"""Bracket tightness and envelope errors across Dirichlet-random simplex FIMs.

For each class count, draws probability vectors and reports how tightly the
analytic bracket pins the top eigenvalue and how the two structural envelope
errors behave.

Usage: python scripts/spectrum_sweep.py [--draws 2000] [--seed 0]
"""

import argparse

import numpy as np

from fimlab.simplex import envelope_errors, lambda_max_bracket, simplex_fim, spectrum


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--draws", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{'C':>4}{'mean gap':>11}{'p95 gap':>10}{'mean rel gap':>14}"
          f"{'mean diag err':>15}{'mean rank1 bnd':>16}")
    for C in (2, 3, 5, 10, 20, 50):
        gaps, rel_gaps, diag_errs, rank1 = [], [], [], []
        for _ in range(args.draws):
            p = rng.dirichlet(np.ones(C))
            bracket = lambda_max_bracket(p)
            lam = spectrum(simplex_fim(p)).lambda_max
            assert bracket.contains(lam)
            gaps.append(bracket.gap)
            rel_gaps.append(bracket.gap / lam)
            env = envelope_errors(p)
            diag_errs.append(env.diag_error)
            rank1.append(env.rank1_error_bound)
        print(f"{C:>4}{np.mean(gaps):>11.4f}{np.percentile(gaps, 95):>10.4f}"
              f"{np.mean(rel_gaps):>14.4f}{np.mean(diag_errs):>15.4f}{np.mean(rank1):>16.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
