"""Shift light skin into FST IV while leaving the lesion untouched.

Run:  python demos/01_skin_tone_normalization.py [out_dir]

Generates a handful of synthetic FST II lesion images, moves each skin tone
into the FST IV band with one refinement step, and writes before/after pairs
side by side.
"""

import sys
from pathlib import Path

import numpy as np

from fairskin.colorspace import srgb_to_lab
from fairskin.data import generate_synthetic
from fairskin.imgio import write_rgb
from fairskin.skintone import ToneParams, classify_fst, compute_ita, transform_skin_tone

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "tone"
out.mkdir(parents=True, exist_ok=True)

data = generate_synthetic(6, 0.5, seed=11, fst_probs=(0, 1, 0, 0, 0, 0))
params = ToneParams(target_fst="IV")

print(f"{'image':<12}{'ITA before':>11}{'target':>9}{'after':>8}  FST")
for i in range(len(data)):
    img, mask = data.images[i], data.masks[i]
    res = transform_skin_tone(img, mask, params, np.random.default_rng([11, i]))

    # the lesion keeps its exact bytes; only skin and the blended rim move
    assert np.array_equal(res.image[mask], img[mask])
    after = compute_ita(srgb_to_lab(res.image), mask)
    print(
        f"{data.ids[i]:<12}{res.original_ita:>11.2f}{res.target_ita:>9.2f}{after:>8.2f}"
        f"  {classify_fst(res.original_ita).name} -> {classify_fst(after).name}"
    )
    pair = np.concatenate([img, np.full((img.shape[0], 2, 3), 255, np.uint8), res.image], axis=1)
    write_rgb(out / f"{data.ids[i]}_pair.png", pair)

print(f"\nside-by-side images in {out}")
