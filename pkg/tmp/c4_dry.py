import time
import numpy as np
from ivqr.simulate import LocationScaleConfig, McConfig, run_monte_carlo
from ivqr.fixpoint import SolverOptions

t0 = time.perf_counter()
fast = SolverOptions(canonicalize=False)
mc = McConfig(
    dgp=LocationScaleConfig(n=1000, d_d=1, design="symmetric"),
    estimators=("brent",),
    taus=(0.5,),
    reps=300,
    bootstrap_b=200,
    levels=(0.9, 0.95),
    seed=44,
    solver_opts=fast,
    bootstrap_opts=fast,
)
rep = run_monte_carlo(mc)
c = rep.cell("brent", 0.5)
for lv, cov in sorted(c.coverage.items()):
    print(f"nominal {lv}: coverage {float(np.asarray(cov)[0]):.4f}")
print("fails:", c.failures, "| bias:", np.round(c.bias, 4), "| rmse:", np.round(c.rmse, 4))
print(f"elapsed {time.perf_counter()-t0:.1f}s for 300 reps x B=200")
