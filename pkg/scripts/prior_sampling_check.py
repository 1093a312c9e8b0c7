#!/usr/bin/env python3
"""Flat-likelihood filter check: the chain must reproduce the trajectory prior.

With the likelihood forced flat, the reversible-jump chain's stationary law
is the marked-Poisson prior, so the jump count is Poisson(rho T), jump
patterns follow the rate decomposition and positions are uniform.  This is
the strongest whole-filter diagnostic available; run it after touching any
move or ratio code.

Usage: python scripts/prior_sampling_check.py [steps]
"""

from __future__ import annotations

import sys

import numpy as np
from scipy import stats

from shotcox.dependence import ClaytonDependence, MarginalTail
from shotcox.filtering import FilterConfig, run_filter
from shotcox.shotnoise import MarginalShotParams


def main() -> int:
    steps = int(sys.argv[1]) if len(sys.argv) > 1 else 400_000
    params = (MarginalShotParams(2.0, 1.0, 1.0), MarginalShotParams(2.0, 1.0, 1.0))
    dep = ClaytonDependence((MarginalTail(2.0, 1.0), MarginalTail(2.0, 1.0)), 1.0)
    mean = dep.rho_total  # horizon 1, so rho T = 3

    cfg = FilterConfig(iterations=steps, burn_fraction=0.5, num_samples=1500)
    res = run_filter(None, None, params, dep, cfg, rng=np.random.default_rng(0), horizon=1.0)

    ns = np.array([s.num_jumps for s in res.samples])
    kmax = 10
    obs = np.bincount(np.minimum(ns, kmax), minlength=kmax + 1)
    pmf = stats.poisson.pmf(np.arange(kmax + 1), mean)
    pmf[kmax] = 1.0 - pmf[:kmax].sum()
    chi = stats.chisquare(obs, pmf * len(ns))
    print(f"jump count: mean {ns.mean():.3f} (target {mean}), chi-square p = {chi.pvalue:.3f}")

    pats = []
    for s in res.samples:
        for row in s.sizes:
            both = row[0] > 0 and row[1] > 0
            pats.append(2 if both else (0 if row[0] > 0 else 1))
    freq = np.bincount(np.array(pats), minlength=3) / len(pats)
    target = np.array([dep.rho_unique[0], dep.rho_unique[1], dep.rho_common]) / dep.rho_total
    print(f"patterns: observed {np.round(freq, 4)} target {np.round(target, 4)}")

    pos = [s.times[0] for s in res.samples if s.num_jumps == 1]
    ks = stats.kstest(pos, "uniform")
    print(f"single-jump position: n = {len(pos)}, KS-uniform p = {ks.pvalue:.3f}")
    print("acceptance:", {m: round(res.acceptance_rate(m), 3) for m in "sphbd"})
    ok = chi.pvalue > 0.01 and ks.pvalue > 0.01
    print("OK" if ok else "SUSPICIOUS")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
