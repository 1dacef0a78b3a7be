#!/usr/bin/env python3
"""Train a norm-constrained MLP, remove 20 samples with a certified Newton step and compare with retraining."""

# %%
import numpy as np

from certunlearn.evaluation import ExperimentConfig, approximation_error, prepare, utility_report
from certunlearn.numerics import SeededRng
from certunlearn.training import retrain_oracle, train_pgd
from certunlearn.unlearning import Budget, unlearn_single

exp = ExperimentConfig()
setup = prepare(exp)
print("parameters:", setup.model.dim, " train/test:", len(setup.train), len(setup.test))

# %% Projected gradient descent keeps ||w|| <= C, which the error bound relies on.
trained = train_pgd(setup.model, setup.train, exp.train)
print("||w|| = %.3f (C = %g), residual gradient norm %.2e" % (
    np.linalg.norm(trained.w), exp.train.C, trained.residual_grad_norm))

# %% One Newton step with a LiSSA inverse-Hessian estimate, then calibrated Gaussian noise.
result = unlearn_single(
    setup.model, trained, setup.train, setup.split, exp.unlearn, Budget(1.0, 0.1), "analytic", SeededRng(0)
)
print("error bound %.3f, sigma %.3f" % (result.delta_bound, result.sigma))

# %% The retrained model is the reference the certificate is about.
retrained = retrain_oracle(setup.model, setup.train, setup.split, exp.train)
print("||w_tilde - w_retrained|| = %.3f  (bound %.3f)" % (
    approximation_error(result.w_tilde, retrained.w), result.delta_bound))

for name, w in [("original", trained.w), ("retrained", retrained.w),
                ("w_tilde", result.w_tilde), ("w_minus", result.w_minus)]:
    rep = utility_report(setup.model, w, setup.train, setup.split, setup.test)
    print("%-10s F1 unlearn %.3f  retain %.3f  test %.3f" % (name, rep.f1_unlearn, rep.f1_retain, rep.f1_test))
