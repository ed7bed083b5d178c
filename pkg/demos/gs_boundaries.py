"""Solve both stopping problems for a monotone-rho model and check boundary monotonicity.

    python demos/gs_boundaries.py [model-name]
"""

import sys

import numpy as np

from monobound.conjecture import classify_model, verify_gs
from monobound.model import get_model
from monobound.solver import SolverConfig, extract_boundaries, solve_qd, solve_st


def main(name="mono-rho-tanh"):
    model = get_model(name)
    cfg = SolverConfig(n_phi=129, n_x=129)
    c = classify_model(model)
    print(f"{name}: rho {c.rho_direction}, {c.mu_order}")
    for solve in (solve_st, solve_qd):
        field = solve(cfg, model)
        bset = extract_boundaries(field)
        verdict = verify_gs(bset, c)
        print(f"\n{field.mode}: {field.iterations} iterations, residual {field.residual:.2e}")
        xs = np.linspace(*model.x_domain, 9)
        for key, curve in bset.curves.items():
            vals = np.interp(xs, bset.x_nodes, curve)
            print(f"  {key}(x) at x = {np.round(xs, 1)}")
            print(f"       {np.round(vals, 4)}")
            print(f"  expected {verdict.expected[key]}, observed {verdict.observed[key]}, "
                  f"violation {verdict.violation[key]:.2f} cells")
        print(f"  verdict: {'pass' if verdict.all_pass else 'FAIL'}")


if __name__ == "__main__":
    main(*sys.argv[1:])
