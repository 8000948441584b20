"""Where does the model look?  CAM, Grad-CAM and guided Grad-CAM overlays.

Run:  python demos/04_explain.py [out_dir]

For a GAP + linear-head network Grad-CAM is the rectified CAM divided by the
number of spatial positions; the script checks that on every image before
writing the overlays and a gallery of the lowest-SNNL channels.
"""

import sys
from pathlib import Path

import numpy as np

from fairskin.data import generate_synthetic
from fairskin.imgio import write_rgb
from fairskin.interpret import cam, grad_cam, guided_grad_cam, normalize_map, overlay, visualize_channels
from fairskin.model import ModelConfig, build_model, sgd_train
from fairskin.pruning import channel_gammas

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "explain"
out.mkdir(parents=True, exist_ok=True)

data = generate_synthetic(600, 0.9, seed=5)
batch = data.to_batch()
model = sgd_train(build_model(ModelConfig(seed=5)), batch, 5, 0.05, np.random.default_rng(5))

for i in range(3):
    x = batch.images[i]
    c = int(model.predict_proba(x[None]).argmax())
    g = grad_cam(model, x, c).values
    rect = np.maximum(cam(model, x, c).values, 0.0)
    gap = np.abs(normalize_map(g) - normalize_map(rect)).max()
    print(f"image {i}: class {data.class_names[c]}, |Grad-CAM - ReLU(CAM)| after scaling = {gap:.1e}")
    write_rgb(out / f"img_{i}_gradcam.png", overlay(data.images[i], g))
    write_rgb(out / f"img_{i}_guided.png", overlay(data.images[i], guided_grad_cam(model, x, c).values))

gammas = channel_gammas(model, batch, 0)
lowest = [int(k) for k in np.argsort(gammas, kind="stable")[:3]]
print("channels that best separate skin groups (lowest gamma):", lowest, np.round(gammas[lowest], 3))
files, index = visualize_channels(model, batch.images[:2], lowest, out / "channels", gammas=gammas, rgb=data.images[:2])
print(f"wrote {len(files)} channel overlays and {index}")
