"""Tune one global weight vector: baselines, CEM, then a GP refinement.

The two-segment benchmark has two strong channels, each favored by half of
the users, plus two weak ones (one of which mostly echoes channel 0). A
single weight vector cannot serve both segments perfectly, but it can learn
to drop the weak channels. We compare:

  equal        every channel gets 1/K of the budget
  statistical  weights proportional to each channel's hit count
  CEM          Dirichlet cross-entropy search over the simplex
  BayesOpt     GP + expected improvement in a box around the CEM optimum

Run:  python3 demos/02_global_weights.py      (about half a minute)
"""

from __future__ import annotations

import numpy as np

from mcfusion import (BoConfig, CemConfig, baseline_weights, evaluate_objective, generate_benchmark,
                      preset, run_bayesopt, run_cem)

L = 50
ds = generate_benchmark(preset("two-segment", seed=0, n_users=300))
print(f"{ds.N} users, {ds.K} channels of depth {ds.depth}, merged set size L={L}\n")


def show(label, w, score):
    print(f"{label:<12s} recall@{L} = {score:.4f}   weights {np.round(np.asarray(w), 3)}")


for mode in ("equal", "statistical"):
    w = baseline_weights(ds, mode)
    show(mode, w.w, evaluate_objective(ds, w, L))

state, w_cem = run_cem(ds, CemConfig(master_seed=0), L)
show("CEM", w_cem.w, state.best_score)
print(f"{'':12s} {state.iter} iterations, final alpha {np.round(state.best_alpha.alpha, 2)}")

print("\nCEM trajectory (mean score of the Q samples, score of the current mean weights):")
for h in state.history[:: max(1, len(state.history) // 6)]:
    print(f"    iter {h['iter']:>2d}  mean {h['mean']:.4f}  incumbent {h['incumbent']:.4f}")

bo = run_bayesopt(ds, state.best_alpha, BoConfig(master_seed=0), L)
show("BayesOpt", bo.weights.w, bo.best_score)
print(f"{'':12s} {len(bo.trace)} objective calls; the CEM point is call 0, "
      f"so the result can only match or beat it")
