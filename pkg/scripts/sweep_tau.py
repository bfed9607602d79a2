#!/usr/bin/env python3
"""Sweep the observation period and print the certificate table.

Usage: python scripts/sweep_tau.py fixtures/linear_feedback.json [n_grid]
"""

import sys

from switchsde.scenario import load_scenario
from switchsde.stability import feasible_tau_search, max_tau_for_contraction


def main():
    path = sys.argv[1] if len(sys.argv) > 1 else "fixtures/linear_feedback.json"
    n_grid = int(sys.argv[2]) if len(sys.argv) > 2 else 25
    sc = load_scenario(path)
    if sc.envelopes is None:
        raise SystemExit("scenario declares no envelopes")
    tau_star = max_tau_for_contraction(float(sc.C.max()), sc.Ma, float(sc.gains.max()))
    print(f"scenario {sc.hash}  contraction threshold tau* = {tau_star:.6g}")
    certs, passing, best = feasible_tau_search(
        sc.envelopes.qbar, sc.envelopes.qstar, sc.C, sc.c, sc.gains, sc.Ma, n_grid=n_grid
    )
    print(f"{'tau':>12} {'K(tau)':>12} {'eta_3C':>10} {'lam*':>10} {'lam_bar':>10} {'rho':>10} pass")
    for tau, cert in certs:
        print(
            f"{tau:12.6f} {cert.k_tau:12.5f} {cert.eta_3C:10.4f} "
            f"{cert.lam_star:10.5f} {cert.lam_bar:10.4g} {cert.rho:10.4f} "
            f"{'yes' if cert.passed else 'no'}"
        )
    if best:
        print(f"\nbest: tau = {best[0]:.6g} with decay-rate bound rho = {best[1].rho:.4f}")
    else:
        print("\nno tau certifies this scenario")


if __name__ == "__main__":
    main()
