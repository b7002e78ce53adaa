"""Compare the five screening methods across signal strength and sparsity.

Setting 1 (pi = 0.01) varies the signal centre mu0; setting 3 draws
centres from U(2, 4) and varies pi; with location-specific centres the
oracle recursion does not apply, so only the data-driven rules and
distilled sensing run there.  The oracle SMART rule pools ranked
posteriors and so lands close to the nominal 5% rates with fewer
measurements than simple thresholding, which overshoots its cutoffs and
ends up conservative.  Distilled sensing has no error target at all.

Run with ``python3 demos/sweep_methods.py``; it takes under a minute.
"""

from smartseq.simulate import METHODS, SweepSpec, run_sweep
from smartseq.thresholds import ErrorBudget


def show(spec):
    res = run_sweep(spec)
    print(f"{spec.setting}, sweeping {spec.param}")
    print(f"{'method':7s} {spec.param:>5s} {'FPR':>7s} {'MDR':>7s} {'EAST':>6s}")
    for v in spec.grid:
        for m in spec.methods:
            rep = res.reports.get((m, v))
            if rep is None:
                print(f"{m:7s} {v:5.2f}  failed: {res.errors[(m, v)]}")
                continue
            print(f"{m:7s} {v:5.2f} {rep.fpr:7.4f} {rep.mdr:7.4f} {rep.east:6.2f}")
        print()


budget = ErrorBudget(0.05, 0.05)
show(SweepSpec(setting="setting1", grid=(2.0, 3.0, 4.0), p=10_000, replications=10,
               budget=budget, methods=METHODS, seed=1))
show(SweepSpec(setting="setting3", grid=(0.05, 0.1, 0.2), p=10_000, replications=10,
               budget=budget, methods=("DD.ST", "DD.SM", "DS"), seed=2))
