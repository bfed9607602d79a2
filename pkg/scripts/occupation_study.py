#!/usr/bin/env python3
"""Long-run occupation of the switching chain against the envelope sandwich.

Simulates one long marginal path per scenario and compares the time average
of h(state) = state with the bounds implied by the envelope invariant
measures.

Usage: python scripts/occupation_study.py [T] [h]
"""

import sys

import numpy as np

from switchsde.engine import SimParams, monte_carlo, occupation_time_average, simulate_hybrid
from switchsde.markov import invariant_measure
from switchsde.scenario import load_scenario


def main():
    T = float(sys.argv[1]) if len(sys.argv) > 1 else 10_000.0
    h = float(sys.argv[2]) if len(sys.argv) > 2 else 0.1
    for name in ("fixtures/two_state_trig.json", "fixtures/three_state_rational.json"):
        sc = load_scenario(name)
        ids = np.arange(1, sc.M + 1, dtype=float)
        mu_bar = invariant_measure(sc.envelopes.qbar)
        mu_star = invariant_measure(sc.envelopes.qstar)
        lo, hi = float(mu_star @ ids), float(mu_bar @ ids)
        params = SimParams.from_scenario(sc, n_paths=1, horizon=T, h=h, chunk_size=8)
        path = simulate_hybrid(sc, params, 0)
        avg = occupation_time_average(path, ids)
        inside = lo <= avg <= hi
        print(f"{name}: time-average {avg:.4f}  envelope window [{lo:.4f}, {hi:.4f}]"
              f"  {'inside' if inside else 'OUTSIDE'}  ({len(path.jumps['lambda'])} jumps)")

        coupled = monte_carlo(sc, SimParams.from_scenario(sc, n_paths=64, horizon=50.0, h=0.01), coupled=True)
        occ = {k: v.round(4).tolist() for k, v in coupled.occupation.items()}
        print(f"  coupled occupation (64 paths, T=50): {occ}")
        print(f"  ordering violations: {coupled.ordering_violations}")


if __name__ == "__main__":
    main()
