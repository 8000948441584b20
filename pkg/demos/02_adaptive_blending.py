"""How adaptive blending evens out the skin-type distribution.

Run:  python demos/02_adaptive_blending.py

Starts from the FST counts of a light-skewed training set and the FST of its
tone-shifted counterparts, sets initial replacement probabilities from the
shortfall of each group, then simulates a few rounds where groups with a low
validation AUC get their probability raised.
"""

import numpy as np

np.set_printoptions(suppress=True)

from fairskin.sampler import chi_square_to_uniform, expected_blend_counts, init_probs, update_probs

original = np.array([1, 6619, 3388, 7, 0, 0])  # FST I..VI
counterparts = np.array([4, 4076, 5831, 104, 0, 0])  # after shifting every image

state = init_probs(original / original.sum(), tau=0.7, delta=0.05, eval_period_K=5)
print("initial replacement probability per FST:", np.round(state.p_synth, 3))

blended = expected_blend_counts(original, counterparts, state)
print("expected counts after one pass:        ", np.round(blended, 1))
print(f"chi-square to uniform: {chi_square_to_uniform(original):.4f} -> {chi_square_to_uniform(blended):.4f}")

# pretend FST III and IV keep under-performing
aucs = [0.80, 0.85, 0.62, 0.55, None, None]
for k in range(1, 4):
    state = update_probs(state, aucs)
    print(f"after evaluation {k}: p = {np.round(state.p_synth, 3)}")
print("probabilities never exceed 0.9 and groups without an AUC keep theirs.")
