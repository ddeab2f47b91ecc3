"""Convergence study for levels 0..K against the reference table.

    python scripts/run_convergence.py --levels 3 --out results/convergence
"""

import argparse
import os
import time

from thermophase import experiments as ex


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--mesh-scale", type=int, default=2)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="results/convergence")
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()

    def progress(k, errors):
        print(f"level {k} done after {time.perf_counter() - t0:.0f} s", flush=True)

    table = ex.convergence_study(args.levels, mesh_scale=args.mesh_scale,
                                 workers=args.workers, progress=progress)
    with open(os.path.join(args.out, "convergence.csv"), "w") as f:
        f.write(table.to_csv())
    print(table.to_text())
    print("ratio to reference (e, rho, theta, eta, mu_rho, grad_theta, mu_eta):")
    for k in range(len(table)):
        if k in ex.REFERENCE_TABLE:
            ratios = [table.rows[k][c] / ex.REFERENCE_TABLE[k][i]
                      for i, c in enumerate(ex.COLUMNS)]
            print(f"  k={k}: " + " ".join(f"{r:5.2f}" for r in ratios))


if __name__ == "__main__":
    main()
