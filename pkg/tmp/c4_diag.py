"""Diagnose C4 undercoverage: per-rep miss direction, draw SD, CI variants."""
import time
import numpy as np
from ivqr.simulate import LocationScaleConfig, _generate
from ivqr.fixpoint import fit, SolverOptions
from ivqr.bootstrap import bootstrap_estimate, percentile_ci

t0 = time.perf_counter()
fast = SolverOptions(canonicalize=False)
dgp = LocationScaleConfig(n=1000, d_d=1, design="symmetric")
streams = np.random.SeedSequence(44).spawn(300)[:100]

rows = []
for k, stream in enumerate(streams):
    data_stream, boot_stream = stream.spawn(2)
    sample, truth = _generate(dgp, data_stream)
    target = float(truth(0.5).theta_end[0])
    res = fit(sample, 0.5, algorithm="brent", opts=fast)
    bs = boot_stream.spawn(1)[0]
    boot = bootstrap_estimate(
        sample, 0.5, algorithm="brent", b=200, seed=bs, opts=fast
    )
    point = float(boot.point.stacked()[-1])
    draws = boot.draws[:, -1]
    roots = draws - point
    ci95 = percentile_ci(boot, 0.95)[-1]
    ci90 = percentile_ci(boot, 0.90)[-1]
    # pure percentile variant
    pp95 = (
        float(np.quantile(draws, 0.025)),
        float(np.quantile(draws, 0.975)),
    )
    pp90 = (
        float(np.quantile(draws, 0.05)),
        float(np.quantile(draws, 0.95)),
    )
    rows.append(
        dict(
            k=k,
            err=point - target,
            sd=float(draws.std(ddof=1)),
            skew=float(
                ((roots - roots.mean()) ** 3).mean() / roots.std() ** 3
            ),
            root95=(ci95[0] <= target <= ci95[1]),
            root90=(ci90[0] <= target <= ci90[1]),
            pp95=pp95[0] <= target <= pp95[1],
            pp90=pp90[0] <= target <= pp90[1],
            miss_low95=target < ci95[0],
            miss_high95=target > ci95[1],
        )
    )
    if (k + 1) % 20 == 0:
        print(f"... {k + 1}/100 at {time.perf_counter() - t0:.0f}s", flush=True)

err = np.array([r["err"] for r in rows])
print(f"MC sd of theta_end error : {err.std(ddof=1):.4f} (bias {err.mean():+.4f})")
print(f"mean bootstrap draw sd   : {np.mean([r['sd'] for r in rows]):.4f}")
print(f"mean bootstrap root skew : {np.mean([r['skew'] for r in rows]):+.3f}")
for key in ("root95", "pp95", "root90", "pp90"):
    print(f"coverage {key:7s}: {np.mean([r[key] for r in rows]):.3f}")
low = sum(r["miss_low95"] for r in rows)
high = sum(r["miss_high95"] for r in rows)
print(f"root95 misses: {low} below lower bound, {high} above upper bound")
print(f"elapsed {time.perf_counter() - t0:.1f}s")
