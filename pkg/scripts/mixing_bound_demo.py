"""Mixing tail bound for a Gilbert-Elliott channel: stage constants, moment and partial sums."""
from __future__ import annotations

import argparse

from aoi_lab.channels import MarkovChannel, markov_alpha_bound, window_success_probability
from aoi_lab.dominance import mixing_tail_bound, moment_partial_sums


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--kappa", type=int, default=7)
    parser.add_argument("--p", type=float, default=1.0)
    args = parser.parse_args()
    ge = MarkovChannel.gilbert_elliott(0.1, 0.1, 0.9)
    eps_fail = 1 - window_success_probability(ge, args.kappa)
    env = markov_alpha_bound(ge.P)
    tail = mixing_tail_bound(eps_fail, args.kappa, env, args.p)
    sums = moment_partial_sums(tail, args.p, 10**5)
    print(f"eps_fail={eps_fail:.4f} envelope C={env.C:.4f} rho={env.rho:.4f}")
    print(f"mu={tail.info['mu']:.4f} delta={tail.info['delta']} M={tail.info['M']}")
    print(f"moment={tail.info['moment']:.6g} stage-B moment={tail.info['moment_stage_b']:.6g}")
    for m in (10, 100, 1000, 10**4, 10**5):
        print(f"m={m:>6d} u={tail(m):.3e} partial sum={sums[m]:.6f}")


if __name__ == "__main__":
    main()
