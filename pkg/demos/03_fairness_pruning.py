"""Prune the channels that encode skin tone and watch equalized odds.

Run:  python demos/03_fairness_pruning.py [seed]

Uses the default run configuration: 4000 synthetic images whose lesion class
follows skin type 90% of the time. It trains the small CNN, then
1. prunes by single-attribute SNNL channel scores, and
2. meta-learns weights over (skin, age, gender) and prunes by the weighted score.
Each candidate is fine-tuned and kept only if it is fairer on the meta split
without losing more than three points of accuracy; otherwise it is reverted.
Takes two to three minutes.
"""

import sys

import numpy as np

from fairskin.config import RunConfig
from fairskin.metafair import meta_prune
from fairskin.metrics import eodds_difference, predictions_from_model
from fairskin.model import ModelConfig, accuracy, build_model, sgd_train
from fairskin.pipeline import load_data, split_data
from fairskin.pruning import iterative_prune

cfg = RunConfig(seed=int(sys.argv[1]) if len(sys.argv) > 1 else 2)
data = load_data(cfg)
splits = split_data(data, cfg)
batch = data.to_batch()
train, meta, test = (batch.subset(splits[k]) for k in ("train", "meta", "test"))
print(f"train {len(train)}, meta {len(meta)}, test {len(test)} images")


def describe(name, model):
    eo = eodds_difference(predictions_from_model(model, test), 0)
    print(f"{name:<12} channels {model.config.feature_dim:>2}  test accuracy {accuracy(model, test):.3f}  EOdds(skin) {eo:.3f}")


def show_steps(history):
    for s in history["steps"]:
        verdict = "reverted" if s["reverted"] else "kept"
        print(f"  step {s['iteration']}: drop {s['pruned_original']}, meta acc {s['accuracy']:.3f}, 1-EOdds {s['fairness']:.3f} ({verdict})")


model = build_model(ModelConfig(conv_channels=cfg.model.conv_channels, seed=cfg.seed))
model = sgd_train(model, train, cfg.train.epochs, cfg.train.lr, np.random.default_rng([cfg.seed, 2]))
describe("baseline", model)

prune_cfg = cfg.prune.to_prune_config(cfg.metrics.positive_class, cfg.seed)
pruned, hist = iterative_prune(model, train, meta, 0, prune_cfg, cfg.snnl_params())
show_steps(hist.to_dict())
describe("SNNL pruned", pruned)

meta_pruned, w, mhist = meta_prune(model, train, meta, cfg.meta.to_meta_config(cfg.seed), prune_cfg, cfg.snnl_params())
print("  learned weights (skin, age, gender):", np.round(w.w, 4))
show_steps(mhist["prune"])
describe("meta pruned", meta_pruned)
