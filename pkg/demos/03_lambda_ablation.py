#!/usr/bin/env python3
"""Error bound and measured error of the Newton estimate across lambda, with and without the norm constraint."""

# %%
from certunlearn.evaluation import ABLATION_LAMBDAS, ExperimentConfig, ablation_lambda, prepare

setup = prepare(ExperimentConfig())
rows = ablation_lambda(setup, ABLATION_LAMBDAS)

# %%
print("%8s %10s %12s %16s" % ("lambda", "bound", "err (C=10)", "err (no bound)"))
for r in rows:
    print("%8g %10.3f %12.3f %16.3f" % (r.lam, r.err_bound, r.approx_err, r.approx_err_unconstrained))
