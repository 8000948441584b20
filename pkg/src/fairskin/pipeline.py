"""End-to-end orchestration: normalize, train, prune, meta-prune, evaluate, explain.

Every random draw comes from generators seeded by the run seed, so a
config plus seed fixes every artifact. All outputs land under
``config.out`` together with ``run_manifest.json``, which records the
config hash, the stages run and a SHA-256 per artifact.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import RunConfig
from .data import (
    LesionData,
    generate_synthetic,
    load_dataset,
    load_manifest,
    stratified_split,
)
from .errors import BadConfig, FairskinError, SingleClass
from .imgio import write_rgb
from .interpret import cam, grad_cam, guided_grad_cam, overlay, visualize_channels
from .metafair import meta_prune
from .metrics import MetricConfig, _clean, fairness_report, macro_ovr_auc, predictions_from_model
from .model import (
    Batch,
    ModelConfig,
    ToyModel,
    accuracy,
    build_model,
    kfold_indices,
    load_checkpoint,
    save_checkpoint,
    sgd_epoch,
    sgd_train,
)
from .pruning import channel_gammas, iterative_prune
from .sampler import fst_distribution, init_probs, replacement_mask, update_probs
from .skintone import classify_fst, transform_skin_tone

log = logging.getLogger(__name__)

MODEL_ORDER = ("baseline", "pruned", "meta_pruned")


class StageError(FairskinError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


@dataclass
class RunState:
    config: RunConfig
    out: Path
    data: Optional[LesionData] = None
    splits: dict = field(default_factory=dict)
    counterparts: Optional[np.ndarray] = None
    counterpart_fst: Optional[np.ndarray] = None
    models: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    def add(self, path) -> Path:
        self.artifacts.append(Path(path))
        return Path(path)

    def batch(self, split: str) -> Batch:
        idx = self.splits[split]
        return self.data.subset(idx).to_batch(self.config.data.skin_scheme)


def load_data(cfg: RunConfig) -> LesionData:
    d = cfg.data
    if d.source == "synthetic":
        return generate_synthetic(
            d.n, d.bias, cfg.seed, size=d.size, age_bias=d.age_bias, gender_bias=d.gender_bias
        )
    return load_dataset(load_manifest(d.manifest))


def split_data(data: LesionData, cfg: RunConfig) -> dict:
    """Seeded test / meta / train split, stratified on (label, skin group)."""
    rng = np.random.default_rng([cfg.seed, 1])
    strata = np.stack([data.labels, data.attrs(cfg.data.skin_scheme)[:, 0]], axis=1)
    rest, test = stratified_split(strata, cfg.data.test_fraction, rng)
    train, meta = stratified_split(strata[rest], cfg.meta.meta_split, rng)
    return {"train": rest[train], "meta": rest[meta], "test": test}


def _transform_one(args):
    img, mask, params, seed, i = args
    res = transform_skin_tone(img, mask, params, np.random.default_rng([seed, i]))
    return res.image, res.achieved_ita


def tone_counterparts(data: LesionData, cfg: RunConfig, workers: int = 1):
    """Tone-shifted copy of every image and the FST its skin lands in.

    Image ``i`` uses its own generator seeded by ``(seed, i)``, so results do
    not depend on the worker count.
    """
    params = cfg.tone.to_params(cfg.seed)
    jobs = [(data.images[i], data.masks[i], params, cfg.seed, i) for i in range(len(data))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_transform_one, jobs, chunksize=64))
    else:
        results = [_transform_one(j) for j in jobs]
    images = np.stack([r[0] for r in results]) if results else data.images.copy()
    fst = np.array([int(classify_fst(r[1])) if np.isfinite(r[1]) else -1 for r in results], dtype=np.int64)
    return images, fst


def per_fst_auc(model: ToyModel, data: LesionData, idx: np.ndarray) -> dict:
    probs = model.predict_proba(data.images[idx] / 255.0)
    out = {}
    for f in range(1, 7):
        sel = data.fst[idx] == f
        try:
            out[f] = macro_ovr_auc(probs[sel], data.labels[idx][sel]) if sel.sum() >= 2 else None
        except SingleClass:
            out[f] = None
    return out


def train_model(state: RunState) -> ToyModel:
    cfg = state.config
    tc = cfg.train
    rng = np.random.default_rng([cfg.seed, 2])
    train = state.batch("train")
    model = build_model(
        ModelConfig(
            input_size=(cfg.data.size, cfg.data.size, 3),
            conv_channels=cfg.model.conv_channels,
            n_classes=cfg.model.n_classes,
            seed=cfg.seed,
        )
    )
    if not tc.adaptive_blend:
        return sgd_train(model, train, tc.epochs, tc.lr, rng, tc.batch_size)

    if state.counterparts is None:
        state.counterparts, state.counterpart_fst = tone_counterparts(state.data, cfg, cfg.workers)
    idx = state.splits["train"]
    synth = state.counterparts[idx] / 255.0
    synth_fst = state.counterpart_fst[idx]
    blend = init_probs(fst_distribution(state.data.fst[idx]), tc.tau, tc.delta, tc.eval_period_K)
    for epoch in range(1, tc.epochs + 1):
        use = replacement_mask(synth_fst, blend, rng)
        images = np.where(use[:, None, None, None], synth, train.images)
        model.trace.append(sgd_epoch(model, train, tc.lr, rng, tc.batch_size, images=images))
        if epoch % tc.eval_period_K == 0:
            blend = update_probs(blend, per_fst_auc(model, state.data, state.splits["meta"]))
    state.histories["blend"] = blend.to_dict()
    return model


def cross_validate(state: RunState) -> dict:
    cfg = state.config
    idx = state.splits["train"]
    rng = np.random.default_rng([cfg.seed, 3])
    accs = []
    full = state.data.to_batch(cfg.data.skin_scheme)
    for tr, va in kfold_indices(len(idx), cfg.train.folds, rng):
        m = build_model(
            ModelConfig((cfg.data.size, cfg.data.size, 3), cfg.model.conv_channels, cfg.model.n_classes, cfg.seed)
        )
        m = sgd_train(m, full.subset(idx[tr]), cfg.train.epochs, cfg.train.lr, rng, cfg.train.batch_size)
        accs.append(accuracy(m, full.subset(idx[va])))
    return {"folds": cfg.train.folds, "accuracy": accs, "mean_accuracy": float(np.mean(accs))}


def _write_json(state: RunState, rel: str, obj) -> Path:
    path = state.out / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n")
    return state.add(path)


def _require_model(state: RunState) -> ToyModel:
    if "baseline" not in state.models:
        if not state.config.checkpoint:
            raise BadConfig("this stage needs a model: run the train stage or set 'checkpoint'")
        state.models["baseline"] = load_checkpoint(state.config.checkpoint)
    return state.models["baseline"]


def stage_normalize(state: RunState):
    cfg = state.config
    state.counterparts, state.counterpart_fst = tone_counterparts(state.data, cfg, cfg.workers)
    out_dir = state.out / "normalized"
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = f"_fst{cfg.tone.target_fst}"
    rows = []
    for i in range(len(state.data)):
        name = f"{state.data.ids[i]}{suffix}.png"
        state.add(write_rgb(out_dir / name, state.counterparts[i]))
        rows.append({"id": state.data.ids[i], "file": name, "fst_before": int(state.data.fst[i]), "fst_after": int(state.counterpart_fst[i])})
    _write_json(state, "normalized/index.json", rows)


def stage_train(state: RunState):
    cfg = state.config
    if cfg.train.folds > 1:
        _write_json(state, "histories/cross_validation.json", cross_validate(state))
    model = train_model(state)
    state.models["baseline"] = model
    state.add(save_checkpoint(model, state.out / "checkpoints" / "baseline.json"))
    _write_json(state, "histories/train.json", {"loss": model.trace, **({"blend": state.histories["blend"]} if "blend" in state.histories else {})})


def stage_prune(state: RunState):
    cfg = state.config
    model = _require_model(state)
    pcfg = cfg.prune.to_prune_config(cfg.metrics.positive_class, cfg.seed)
    pruned, hist = iterative_prune(model, state.batch("train"), state.batch("meta"), cfg.prune.attribute, pcfg, cfg.snnl_params())
    state.models["pruned"] = pruned
    state.histories["prune"] = hist.to_dict()
    state.add(save_checkpoint(pruned, state.out / "checkpoints" / "pruned.json"))
    _write_json(state, "histories/prune.json", hist.to_dict())


def stage_meta_prune(state: RunState):
    cfg = state.config
    model = _require_model(state)
    pcfg = cfg.prune.to_prune_config(cfg.metrics.positive_class, cfg.seed)
    mcfg = cfg.meta.to_meta_config(cfg.seed)
    pruned, w, hist = meta_prune(
        model, state.batch("train"), state.batch("meta"), mcfg, pcfg, cfg.snnl_params(), fair_attribute=cfg.prune.attribute
    )
    state.models["meta_pruned"] = pruned
    state.histories["meta_prune"] = hist
    state.add(save_checkpoint(pruned, state.out / "checkpoints" / "meta_pruned.json"))
    _write_json(state, "histories/meta_prune.json", hist)


def final_model_name(state: RunState) -> str:
    return [n for n in MODEL_ORDER if n in state.models][-1]


def stage_evaluate(state: RunState):
    cfg = state.config
    _require_model(state)
    test = state.batch("test")
    mcfg = MetricConfig(cfg.metrics.positive_class, cfg.metrics.di_attribute, tuple(state.data.class_names))
    for name in MODEL_ORDER:
        if name not in state.models:
            continue
        report = fairness_report(predictions_from_model(state.models[name], test), mcfg)
        state.reports[name] = report
        state.add(report.write_json(_mkdir(state.out / "reports") / f"{name}.json"))
        state.add(report.write_group_csv(state.out / "reports" / f"{name}_groups.csv"))
    final = state.reports[final_model_name(state)]
    state.add(final.write_json(state.out / "fairness_report.json"))


def _mkdir(p: Path) -> Path:
    p.mkdir(parents=True, exist_ok=True)
    return p


def stage_explain(state: RunState):
    cfg = state.config
    _require_model(state)
    name = final_model_name(state)
    model = state.models[name]
    idx = state.splits["test"][: cfg.explain.n_images]
    imgs = state.data.images[idx]
    x = imgs / 255.0
    heat_dir = _mkdir(state.out / "heatmaps")
    for j, i in enumerate(idx):
        c = cfg.explain.class_c
        if c is None:
            c = int(model.predict_proba(x[j : j + 1]).argmax())
        maps = {
            "cam": np.maximum(cam(model, x[j], c).values, 0.0),
            "gradcam": grad_cam(model, x[j], c).values,
            "guided_gradcam": guided_grad_cam(model, x[j], c).values,
        }
        for kind, m in maps.items():
            state.add(write_rgb(heat_dir / f"img_{j}_{kind}.png", overlay(imgs[j], m)))

    # channels removed by pruning, shown on the model they were removed from
    base = state.models["baseline"]
    removed = []
    for key in ("meta_prune", "prune"):
        h = state.histories.get(key)
        if h is None:
            continue
        steps = h["prune"]["steps"] if key == "meta_prune" else h["steps"]
        removed = sorted({c for s in steps if not s["reverted"] for c in s["pruned_original"]})
        if removed:
            break
    train = state.batch("train")
    gammas = channel_gammas(base, train, cfg.prune.attribute, cfg.snnl_params())
    if not removed:
        removed = [int(c) for c in np.argsort(gammas, kind="stable")[: cfg.explain.max_channels]]
    files, index = visualize_channels(
        base, x, removed[: cfg.explain.max_channels], state.out / "channels",
        image_ids=[state.data.ids[i] for i in idx], gammas=gammas, rgb=imgs,
    )
    for f in files:
        state.add(f)
    state.add(index)


STAGE_FUNCS = {
    "normalize": stage_normalize,
    "train": stage_train,
    "prune": stage_prune,
    "meta-prune": stage_meta_prune,
    "evaluate": stage_evaluate,
    "explain": stage_explain,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_run_manifest(state: RunState, status: str, error: Optional[dict] = None) -> Path:
    cfg = state.config
    seen = {}
    for p in state.artifacts:
        if p.exists():
            seen[p.relative_to(state.out).as_posix()] = p
    manifest = {
        "package_version": __version__,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "stages": list(cfg.stages),
        "status": status,
        "error": error,
        "config": cfg.to_dict(),
        "artifacts": [{"path": rel, "sha256": _sha256(p), "bytes": p.stat().st_size} for rel, p in sorted(seen.items())],
    }
    path = state.out / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def run_pipeline(config: RunConfig, out: Optional[str] = None) -> RunState:
    """Run ``config.stages`` in their canonical order.

    A failing stage writes ``error.json`` and the manifest (status
    ``"failed"``) and raises :class:`StageError`.
    """
    config.validate()
    state = RunState(config, Path(out or config.out))
    state.out.mkdir(parents=True, exist_ok=True)
    stages = [s for s in STAGE_FUNCS if s in config.stages]
    if stages:
        state.data = load_data(config)
        state.splits = split_data(state.data, config)
    for stage in stages:
        log.info("stage %s", stage)
        try:
            STAGE_FUNCS[stage](state)
        except BadConfig:
            raise
        except Exception as exc:
            err = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
            (state.out / "error.json").write_text(json.dumps(err, indent=2) + "\n")
            write_run_manifest(state, "failed", err)
            raise StageError(stage, exc) from exc
    write_run_manifest(state, "ok")
    return state
