"""A forward and backward pass through the relation head.

The head takes decoder outputs (here a seeded Gaussian stand-in), builds
pairwise relation features per layer, summarises each layer with a small
relational transformer, and mixes everything through learned per-pair
gates.  Its outputs are exactly the two graphs the reconstruction stage
consumes.
"""
from __future__ import annotations

import numpy as np

from plantstruct.egrtr import forward, gradient_check, init_state, random_trace

N, D, L = 4, 8, 2
trace = random_trace(N, D, L, seed=1)
state = init_state(N, D, L, seed=0)
out = forward(trace, state)

print("relation tensor", out.g_rel.shape, "connectivity", out.g_conn.shape)
print("gate range per layer:")
for l, g in enumerate(out.gates):
    print(f"  layer {l}: [{g.min():.3f}, {g.max():.3f}]")

# Each layer's expert is one vector broadcast to every pair.
print("experts constant over pairs:",
      all(np.all(out.r_prime[l] == out.r_prime[l, 0, 0]) for l in range(L + 1)))

np.set_printoptions(precision=2, suppress=True)
print("\nconnectivity probabilities:")
print(out.g_conn)

# The backward pass is written by hand; central differences confirm it.
errs = gradient_check(out.r_a, out.r_z, out.experts, state, step=1e-5)
print(f"\nlargest relative gradient error: {errs['max']:.2e}")
