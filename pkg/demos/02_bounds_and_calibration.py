#!/usr/bin/env python3
"""How the error bound and the Gaussian noise scale respond to lambda, C, G and the budget."""

# %%
import numpy as np

from certunlearn.unlearning import (
    Budget,
    UnlearnConfig,
    analytic_delta,
    bound_basic,
    bound_efficient,
    bound_practical,
    sigma_analytic,
    sigma_classic,
)

base = UnlearnConfig(C=10.0, M=1.0, L=1.0, lam=1000.0, lambda_min=0.0, rho=0.05, H=2000.0)
d = 100
print("basic %.4f  efficient %.4f  practical(G=1) %.4f" % (
    bound_basic(base), bound_efficient(base, d), bound_practical(base, d, 1.0)))

# %% Larger lambda shrinks the bound; it levels off at 2C plus the sampling term.
for lam in [10.0, 1e2, 1e3, 1e4]:
    cfg = base.replace(lam=lam, H=2 * lam)
    print("lambda %-8g bound %.3f" % (lam, bound_practical(cfg, d, 0.0)))

# %% Classic versus analytic noise for the same sensitivity.
for eps in [0.1, 0.5, 1.0, 5.0, 10.0]:
    b = Budget(eps, 1e-5)
    sc, sa = sigma_classic(1.0, b), sigma_analytic(1.0, b)
    print("eps %-5g classic %.4f (delta %.1e)  analytic %.4f (delta %.1e)" % (
        eps, sc, analytic_delta(sc, 1.0, eps), sa, analytic_delta(sa, 1.0, eps)))

# %% At large eps the classic formula no longer meets the exact condition; the analytic value does.
eps = np.geomspace(0.1, 10, 12)
print("classic meets delta=1e-5:", [bool(analytic_delta(sigma_classic(1.0, Budget(e, 1e-5)), 1.0, e) <= 1e-5) for e in eps])
