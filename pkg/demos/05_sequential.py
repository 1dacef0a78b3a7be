#!/usr/bin/env python3
"""Ten successive deletion requests answered by chained Newton steps and one terminal noise draw."""

# %%
from certunlearn.evaluation import ExperimentConfig, prepare, sequential_trace
from certunlearn.numerics import SeededRng
from certunlearn.training import train_pgd
from certunlearn.unlearning import Budget, unlearn_sequential

setup = prepare(ExperimentConfig())
trained = train_pgd(setup.model, setup.train, setup.exp.train)
order = SeededRng(0, "requests").generator().permutation(len(setup.train))[:100]
requests = [order[i:i + 10].tolist() for i in range(0, 100, 10)]

# %% Group privacy keeps per-request granularity at the price of a k-fold epsilon.
for group in (False, True):
    res = unlearn_sequential(setup.model, trained, setup.train, requests, setup.exp.unlearn,
                             Budget(0.5, 0.1), rng=SeededRng(0), group_privacy=group)
    print("group privacy %-5s certified (%.1f, %.1f), sigma %.3f" % (
        group, res.certified_budget.epsilon, res.certified_budget.delta, res.sigma))

# %%
for row in sequential_trace(setup.model, res, setup.test):
    print("step %2d  removed %3d  grad norm %.4f  bound %.2f  test F1 %.3f" % (
        row["step"], row["n_u_cumulative"], row["grad_norm"], row["delta_bound_step"], row["f1_test"]))
