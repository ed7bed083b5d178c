"""Trap-curve detection, the lambda perturbation and the bracket scan on paper-trap.

    python demos/trap_and_brackets.py
"""

import numpy as np

from monobound.model import get_model
from monobound.sde import simulate_canonical
from monobound.trap import detect_trap, hormander_scan, perturbation_check


def main():
    model = get_model("paper-trap")
    rep = detect_trap(model)
    print(f"has_trap={rep.has_trap} kappa={rep.kappa:.12f} residual sup={rep.residual_sup:.2e}")
    print(f"gamma(0), gamma(1) = {rep.gamma([0.0, 1.0])}")

    for row in perturbation_check(model)["rows"]:
        print(f"lambda + {row['eps']:g}: trap={row['has_trap']} "
              f"min residual={row['min_residual_sup']:.3e}")

    h = hormander_scan(model, (-2, 2), (-4, 4), n_u=41, n_x=81)
    rows = np.unique(h.u[np.nonzero(h.fail)[0]])
    print(f"bracket condition fails at {h.fail.sum()} nodes, on u = {rows}")

    # a canonical path started on the curve stays there
    c = simulate_canonical(model, -np.log(rep.kappa), 0.5, 1.0, 0.01, seed=4, n_paths=5)
    print(f"max |U + log kappa| along 5 paths: {np.abs(c.extras['u'] + np.log(rep.kappa)).max():.1e}")


if __name__ == "__main__":
    main()
