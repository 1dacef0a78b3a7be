#!/usr/bin/env python3
"""Test F1 of the certified model as the privacy budget loosens, for a small and a large lambda."""

# %%
from certunlearn.evaluation import (
    SWEEP_DELTA,
    SWEEP_EPSILONS,
    SWEEP_LAMBDAS,
    ExperimentConfig,
    budget_sweep,
    prepare,
    sweep_summary,
)

setup = prepare(ExperimentConfig())
rows = budget_sweep(setup, SWEEP_EPSILONS, SWEEP_DELTA, SWEEP_LAMBDAS)

# %% Every repeat reuses one noise stream across the grid, so curves differ only through sigma.
for lam, s in sweep_summary(rows).items():
    pts = "  ".join("%g:%.3f" % (e, f) for e, f in zip(s["epsilon"], s["mean_f1"]))
    print("lambda %-6g spearman %.2f  %s" % (lam, s["spearman"], pts))
