"""Datasets: CSV manifests, the seeded synthetic lesion generator and splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .colorspace import LabImage, lab_to_srgb, srgb_to_lab
from .errors import MissingFile, ParseError
from .imgio import read_mask, read_rgb, threshold_mask, write_mask, write_rgb
from .model import Batch
from .skintone import FstType, classify_fst, compute_ita, ita_from_lb

CLASS_NAMES = ("MEL", "NV", "BCC", "BKL")
MANIFEST_HEADER = ("image", "mask", "label", "fst", "age_group", "gender")
ATTR_NAMES = ("skin", "age", "gender")
GENDERS = ("M", "F")
AGE_BANDS = ((0, 30), (30, 60), (60, math.inf))

# Skin colour prototype (L*, a*, b*) per FST I..VI.
FST_PROTOTYPES = np.array(
    [
        [79.0, 8.0, 15.0],
        [72.0, 10.0, 20.0],
        [64.0, 12.0, 20.0],
        [57.0, 13.0, 20.0],
        [46.0, 14.0, 20.0],
        [37.0, 12.0, 15.0],
    ]
)
# Class each FST group is pushed towards when the generator is biased.
FST_FAVOURED_CLASS = np.array([0, 0, 1, 2, 3, 3])
AGE_FAVOURED_CLASS = np.array([1, 2, 0])
GENDER_FAVOURED_CLASS = np.array([0, 3])
# (dark lesion, elongated lesion) per class.
CLASS_APPEARANCE = ((True, False), (False, False), (False, True), (True, True))


def age_band(age: float) -> int:
    """Band id for an age in years: 0 for [0, 30), 1 for [30, 60), 2 for 60+."""
    for i, (lo, hi) in enumerate(AGE_BANDS):
        if lo <= age < hi:
            return i
    raise ValueError(f"age {age} outside every band")


def skin_group(fst, scheme: str = "binary") -> int:
    """Collapse an FST (1..6, or None) to the group id used as the skin attribute.

    ``"binary"`` maps I-III to 0 (light) and IV-VI to 1 (dark); ``"fst"`` keeps
    all six categories as 0..5. Unknown FST gives -1.
    """
    if fst is None or int(fst) < 1:
        return -1
    fst = int(fst)
    if scheme == "binary":
        return 0 if fst <= 3 else 1
    if scheme == "fst":
        return fst - 1
    raise ValueError(f"unknown skin grouping {scheme!r}")


@dataclass
class LesionData:
    """Images with masks and per-sample labels / attributes, in memory.

    ``fst``, ``age_group`` and ``gender`` use -1 for unknown.
    """

    images: np.ndarray  # (n, H, W, 3) uint8
    masks: np.ndarray  # (n, H, W) bool
    labels: np.ndarray
    fst: np.ndarray
    age_group: np.ndarray
    gender: np.ndarray
    class_names: tuple = CLASS_NAMES
    ids: Optional[list] = None

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "LesionData":
        idx = np.asarray(idx)
        ids = None if self.ids is None else [self.ids[i] for i in idx]
        return LesionData(
            self.images[idx], self.masks[idx], self.labels[idx], self.fst[idx],
            self.age_group[idx], self.gender[idx], self.class_names, ids,
        )

    def attrs(self, skin_scheme: str = "binary") -> np.ndarray:
        skin = np.array([skin_group(f if f >= 1 else None, skin_scheme) for f in self.fst], dtype=np.int64)
        return np.stack([skin, self.age_group, self.gender], axis=1).astype(np.int64)

    def to_batch(self, skin_scheme: str = "binary", images=None) -> Batch:
        imgs = self.images if images is None else images
        return Batch(np.asarray(imgs, dtype=np.float64) / 255.0, self.labels, self.attrs(skin_scheme), ATTR_NAMES)


def _sample_skin(fst: np.ndarray, rng, jitter: float) -> np.ndarray:
    """Per-image skin Lab colour: prototype plus uniform jitter, kept inside the FST band.

    Draws are repeated until the 8-bit colour classifies back to its FST.
    """
    n = fst.shape[0]
    lab = np.zeros((n, 3))
    todo = np.arange(n)
    for _ in range(1000):
        if todo.size == 0:
            break
        cand = FST_PROTOTYPES[fst[todo] - 1] + rng.uniform(-jitter, jitter, size=(todo.size, 3))
        rgb = lab_to_srgb(LabImage(cand[:, 0:1], cand[:, 1:2], cand[:, 2:3]))
        q = srgb_to_lab(rgb)
        ok = np.array(
            [classify_fst(ita_from_lb(q.L[i, 0], q.b[i, 0])) == fst[todo[i]] for i in range(todo.size)]
        )
        lab[todo[ok]] = cand[ok]
        todo = todo[~ok]
    if todo.size:
        lab[todo] = FST_PROTOTYPES[fst[todo] - 1]
    return lab


def generate_synthetic(
    n: int,
    bias: float,
    seed: int,
    size: int = 32,
    fst_probs: Sequence[float] = (0.15, 0.30, 0.20, 0.15, 0.12, 0.08),
    age_probs: Sequence[float] = (0.20, 0.45, 0.35),
    gender_probs: Sequence[float] = (0.5, 0.5),
    age_bias: float = 0.0,
    gender_bias: float = 0.0,
    jitter: float = 2.0,
) -> LesionData:
    """Seeded synthetic lesion images on uniform skin.

    Each image has a constant skin colour drawn around its FST prototype and
    one elliptical lesion. The lesion class sets its darkness relative to the
    skin and its elongation, with overlapping ranges so classes are not
    perfectly separable. With probability ``bias`` the class is the one
    favoured by the sample's FST (``bias=1`` makes the class a function of
    FST, ``bias=0`` makes it independent); ``age_bias`` and ``gender_bias``
    do the same for the other two attributes on the remaining draws.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    for name, v in (("bias", bias), ("age_bias", age_bias), ("gender_bias", gender_bias)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n_classes = len(CLASS_NAMES)
    fst = rng.choice(6, size=n, p=np.asarray(fst_probs) / np.sum(fst_probs)) + 1
    age = rng.choice(3, size=n, p=np.asarray(age_probs) / np.sum(age_probs))
    gender = rng.choice(2, size=n, p=np.asarray(gender_probs) / np.sum(gender_probs))

    u = rng.random(n)
    labels = rng.integers(0, n_classes, size=n)
    take_age = rng.random(n) < age_bias
    take_gender = rng.random(n) < gender_bias
    labels = np.where(take_gender, GENDER_FAVOURED_CLASS[gender], labels)
    labels = np.where(take_age, AGE_FAVOURED_CLASS[age], labels)
    labels = np.where(u < bias, FST_FAVOURED_CLASS[fst - 1], labels)

    skin = _sample_skin(fst, rng, jitter)

    dark = np.array([CLASS_APPEARANCE[c][0] for c in labels])
    elong = np.array([CLASS_APPEARANCE[c][1] for c in labels])
    depth = np.where(dark, rng.uniform(18.0, 30.0, n), rng.uniform(8.0, 20.0, n))
    ratio = np.where(elong, rng.uniform(1.3, 2.2, n), rng.uniform(1.0, 1.5, n))
    major = rng.uniform(5.0, 8.0, n)
    minor = major / ratio
    theta = rng.uniform(0.0, math.pi, n)
    centre = size / 2.0 - 0.5 + rng.uniform(-3.0, 3.0, (n, 2))
    lesion_da = rng.uniform(4.0, 10.0, n)
    lesion_db = rng.uniform(-4.0, 2.0, n)
    texture = rng.normal(0.0, 2.0, (n, size, size))

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy = yy[None] - centre[:, 0, None, None]
    dx = xx[None] - centre[:, 1, None, None]
    c, s = np.cos(theta)[:, None, None], np.sin(theta)[:, None, None]
    along = dx * c + dy * s
    across = -dx * s + dy * c
    masks = (along / major[:, None, None]) ** 2 + (across / minor[:, None, None]) ** 2 <= 1.0

    L = np.where(masks, (skin[:, 0] - depth)[:, None, None] + texture, skin[:, 0, None, None])
    a = np.where(masks, (skin[:, 1] + lesion_da)[:, None, None], skin[:, 1, None, None])
    b = np.where(masks, (skin[:, 2] + lesion_db)[:, None, None], skin[:, 2, None, None])
    L = np.broadcast_to(L, (n, size, size))
    a = np.broadcast_to(a, (n, size, size))
    b = np.broadcast_to(b, (n, size, size))
    images = lab_to_srgb(LabImage(L.reshape(n * size, size), a.reshape(n * size, size), b.reshape(n * size, size)))
    images = images.reshape(n, size, size, 3)
    return LesionData(
        images=images,
        masks=masks,
        labels=labels.astype(np.int64),
        fst=fst.astype(np.int64),
        age_group=age.astype(np.int64),
        gender=gender.astype(np.int64),
        class_names=CLASS_NAMES,
        ids=[f"synth_{i:05d}" for i in range(n)],
    )


def write_dataset(data: LesionData, out_dir, fmt: str = "png") -> Path:
    """Write images, masks and ``manifest.csv`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    ids = data.ids or [f"img_{i:05d}" for i in range(len(data))]
    manifest = out / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for i, name in enumerate(ids):
            img_rel = f"images/{name}.{fmt}"
            mask_rel = f"masks/{name}.{fmt}"
            write_rgb(out / img_rel, data.images[i])
            write_mask(out / mask_rel, data.masks[i])
            writer.writerow([
                img_rel,
                mask_rel,
                data.class_names[data.labels[i]],
                int(data.fst[i]) if data.fst[i] >= 1 else "",
                int(data.age_group[i]) if data.age_group[i] >= 0 else "",
                GENDERS[data.gender[i]] if data.gender[i] >= 0 else "",
            ])
    return manifest


@dataclass
class ManifestRow:
    image: Path
    mask: Optional[Path]
    label: str
    fst: Optional[int]
    age_group: Optional[int]
    gender: Optional[str]
    line: int = 0
    fst_source: str = "manifest"


@dataclass
class Manifest:
    rows: list = field(default_factory=list)
    class_names: tuple = CLASS_NAMES
    base_dir: Path = Path(".")

    def __len__(self) -> int:
        return len(self.rows)


def _parse_optional_int(value: str, line: int, name: str, lo: int, hi: int) -> Optional[int]:
    value = value.strip()
    if value == "":
        return None
    try:
        v = int(value)
    except ValueError:
        raise ParseError(line, f"{name} must be an integer, got {value!r}") from None
    if not lo <= v <= hi:
        raise ParseError(line, f"{name} must be in [{lo}, {hi}], got {v}")
    return v


def load_manifest(path, class_names: Sequence[str] = CLASS_NAMES, fill_fst: bool = True) -> Manifest:
    """Parse a manifest CSV (header ``image,mask,label,fst,age_group,gender``).

    Paths are resolved relative to the manifest's directory. A blank ``fst``
    is filled from the image's ITA when a mask is given; otherwise it stays
    ``None``.
    """
    path = Path(path)
    base = path.parent
    class_names = tuple(class_names)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, "missing header") from None
        if tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ParseError(1, f"header must be {','.join(MANIFEST_HEADER)}")
        for line_no, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(MANIFEST_HEADER):
                raise ParseError(line_no, f"expected {len(MANIFEST_HEADER)} fields, got {len(raw)}")
            image, mask, label, fst, age, gender = (c.strip() for c in raw)
            if not image:
                raise ParseError(line_no, "image path is empty")
            if label not in class_names:
                raise ParseError(line_no, f"unknown label {label!r}")
            if gender and gender not in GENDERS:
                raise ParseError(line_no, f"gender must be M or F, got {gender!r}")
            rows.append(
                ManifestRow(
                    image=base / image,
                    mask=(base / mask) if mask else None,
                    label=label,
                    fst=_parse_optional_int(fst, line_no, "fst", 1, 6),
                    age_group=_parse_optional_int(age, line_no, "age_group", 0, len(AGE_BANDS) - 1),
                    gender=gender or None,
                    line=line_no,
                )
            )
    missing = [r.image for r in rows if not r.image.exists()]
    missing += [r.mask for r in rows if r.mask is not None and not r.mask.exists()]
    if missing:
        raise MissingFile(missing)
    if fill_fst:
        for r in rows:
            if r.fst is None and r.mask is not None:
                ita = compute_ita(srgb_to_lab(read_rgb(r.image)), read_mask(r.mask))
                r.fst = int(classify_fst(ita))
                r.fst_source = "ita"
    return Manifest(rows, class_names, base)


def load_dataset(manifest: Manifest) -> LesionData:
    """Read every image and mask of ``manifest`` into memory.

    Rows without a mask get the threshold fallback mask.
    """
    images, masks = [], []
    for r in manifest.rows:
        img = read_rgb(r.image)
        images.append(img)
        masks.append(read_mask(r.mask) if r.mask is not None else threshold_mask(img))
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise ValueError(f"manifest images differ in size: {sorted(shapes)}")
    n = len(manifest.rows)
    return LesionData(
        images=np.stack(images) if images else np.zeros((0, 32, 32, 3), np.uint8),
        masks=np.stack(masks) if masks else np.zeros((0, 32, 32), bool),
        labels=np.array([manifest.class_names.index(r.label) for r in manifest.rows], dtype=np.int64),
        fst=np.array([r.fst if r.fst is not None else -1 for r in manifest.rows], dtype=np.int64),
        age_group=np.array([r.age_group if r.age_group is not None else -1 for r in manifest.rows], dtype=np.int64),
        gender=np.array([GENDERS.index(r.gender) if r.gender else -1 for r in manifest.rows], dtype=np.int64),
        class_names=manifest.class_names,
        ids=[r.image.stem for r in manifest.rows] if n else [],
    )


def stratified_split(strata: np.ndarray, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Split indices so each stratum (row of ``strata``) is cut at ``fraction``.

    Every stratum with at least two members contributes at least one index to
    each side. Returns ``(rest, held_out)`` as sorted index arrays.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    strata = np.asarray(strata)
    if strata.ndim == 1:
        strata = strata[:, None]
    _, inverse = np.unique(strata, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    held = []
    for s in np.unique(inverse):
        members = rng.permutation(np.flatnonzero(inverse == s))
        k = int(round(fraction * members.size))
        if members.size >= 2:
            k = min(max(k, 1), members.size - 1)
        held.extend(members[:k].tolist())
    held = np.sort(np.array(held, dtype=np.int64))
    rest = np.setdiff1d(np.arange(strata.shape[0]), held)
    return rest, held
