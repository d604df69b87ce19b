"""Procedural toy datasets with hidden ground-truth phi.

Every sample is a pure function of ``(seed, split, domain, index)``, so a
dataset regenerates bit-for-bit and samples can be produced in any order.
Each task carries at least one *private* feature that its guidance model
does not know about; those are listed in :data:`PRIVATE_FEATURES`.

Ground truth phi lives on :class:`Subset` for evaluation.  Training code gets
a :class:`TrainingView`, which carries images and depth maps only.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import guidance
from .errors import ContractError, DatasetIOError
from .guidance import Manifold, PhiValue
from .numerics import cmt


class Task(str, enum.Enum):
    TOY_TIMELAPSE = "toy_timelapse"
    TOY_BLUR = "toy_blur"
    TOY_FOG = "toy_fog"
    DIGITS_BRIGHTNESS = "digits_brightness"
    DIGITS_REDNESS = "digits_redness"
    DIGITS_CONFUSION = "digits_confusion"


class Domain(str, enum.Enum):
    SOURCE = "source"
    TARGET = "target"


TASK_GUIDANCE = {
    Task.TOY_TIMELAPSE: "timelapse",
    Task.TOY_BLUR: "blur",
    Task.TOY_FOG: "fog",
    Task.DIGITS_BRIGHTNESS: "brightness",
    Task.DIGITS_REDNESS: "redness",
    Task.DIGITS_CONFUSION: "brightness",
}

PRIVATE_FEATURES = {
    Task.TOY_TIMELAPSE: ["emissive windows when cos(phi) < -0.3", "sun disc above the horizon", "dusk/dawn horizon glow"],
    Task.TOY_BLUR: ["radial vignette"],
    Task.TOY_FOG: ["greyish colour cast", "textured target style"],
    Task.DIGITS_BRIGHTNESS: ["sensor grain with std 0.03 * phi"],
    Task.DIGITS_REDNESS: ["sensor grain with std 0.03 * phi"],
    Task.DIGITS_CONFUSION: ["sensor grain with std 0.03 * phi"],
}

DEFAULT_SIZES = {
    Task.TOY_TIMELAPSE: 64,
    Task.TOY_BLUR: 64,
    Task.TOY_FOG: 64,
    Task.DIGITS_BRIGHTNESS: 32,
    Task.DIGITS_REDNESS: 32,
    Task.DIGITS_CONFUSION: 32,
}

WINDOW_THRESHOLD = -0.3
SPLITS = ("train", "val")


def task_manifold(task: Task) -> Manifold:
    return guidance.make_guidance(TASK_GUIDANCE[Task(task)]).manifold


@dataclass(frozen=True)
class DatasetSpec:
    task: Task
    n_source_train: int = 2000
    n_target_train: int = 2000
    n_source_val: int = 500
    n_target_val: int = 500
    image_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        if self.image_size is None:
            object.__setattr__(self, "image_size", DEFAULT_SIZES[self.task])
        if self.image_size < 8:
            raise ContractError(f"image_size must be at least 8, got {self.image_size}")

    @property
    def manifold(self) -> Manifold:
        return task_manifold(self.task)

    def count(self, domain: Domain, split: str) -> int:
        if self.task is Task.DIGITS_CONFUSION:
            if Domain(domain) is Domain.SOURCE:
                return 0
            # the pool takes both sides' budget
            return getattr(self, f"n_source_{split}") + getattr(self, f"n_target_{split}")
        return getattr(self, f"n_{Domain(domain).value}_{split}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task"] = self.task.value
        return d


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    gt_phi: PhiValue
    domain: Domain
    depth: np.ndarray | None = None


@dataclass
class Subset:
    """All samples of one (domain, split): images (N, 3, H, W), phi (N,), optional depth (N, H, W)."""

    domain: Domain
    images: np.ndarray
    phi: np.ndarray
    depth: np.ndarray | None = None

    def __len__(self) -> int:
        return self.images.shape[0]

    def sample(self, i: int, manifold: Manifold) -> Sample:
        depth = None if self.depth is None else self.depth[i]
        return Sample(self.images[i].transpose(1, 2, 0), PhiValue(float(self.phi[i]), manifold), self.domain, depth)


class TrainingView:
    """Images and depth maps for training; ground-truth phi is not reachable from here."""

    __slots__ = ("_source", "_source_depth", "_target")

    def __init__(self, source: np.ndarray, source_depth, target: np.ndarray):
        self._source = source
        self._source_depth = source_depth
        self._target = target

    @property
    def source_count(self) -> int:
        return self._source.shape[0]

    @property
    def target_count(self) -> int:
        return self._target.shape[0]

    def source_batch(self, idx):
        idx = np.asarray(idx)
        depth = None if self._source_depth is None else self._source_depth[idx]
        return self._source[idx], depth

    def target_batch(self, idx) -> np.ndarray:
        return self._target[np.asarray(idx)]


@dataclass
class Dataset:
    spec: DatasetSpec
    subsets: dict = field(default_factory=dict)  # (domain value, split) -> Subset

    @property
    def task(self) -> Task:
        return self.spec.task

    @property
    def manifold(self) -> Manifold:
        return self.spec.manifold

    @property
    def guidance_kind(self) -> str:
        return TASK_GUIDANCE[self.task]

    @property
    def private_features(self) -> list:
        return list(PRIVATE_FEATURES[self.task])

    def subset(self, domain: Domain, split: str = "train") -> Subset:
        return self.subsets[(Domain(domain).value, split)]

    def samples(self, domain: Domain, split: str = "train") -> list:
        sub = self.subset(domain, split)
        return [sub.sample(i, self.manifold) for i in range(len(sub))]

    def training_view(self, split: str = "train") -> TrainingView:
        target = self.subset(Domain.TARGET, split)
        if self.task is Task.DIGITS_CONFUSION:
            return TrainingView(target.images, target.depth, target.images)
        source = self.subset(Domain.SOURCE, split)
        return TrainingView(source.images, source.depth, target.images)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.spec.to_dict(), sort_keys=True).encode())
        for key in sorted(self.subsets):
            sub = self.subsets[key]
            h.update(repr(key).encode())
            h.update(np.ascontiguousarray(sub.images, dtype="<f4").tobytes())
            h.update(np.ascontiguousarray(sub.phi, dtype="<f8").tobytes())
            if sub.depth is not None:
                h.update(np.ascontiguousarray(sub.depth, dtype="<f4").tobytes())
        return h.hexdigest()


# -- rendering helpers ----------------------------------------------------------------

def _rng(seed: int, split: str, domain: Domain, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, SPLITS.index(split), 0 if domain is Domain.SOURCE else 1, index])


def _grid(size: int):
    t = (np.arange(size, dtype=np.float64) + 0.5) / size
    return np.meshgrid(t, t, indexing="ij")  # rows (y), cols (x), both in (0, 1)


def _smooth_texture(rng, size: int, waves: int = 3, amplitude: float = 0.12) -> np.ndarray:
    """Low-frequency sinusoid mixture, zero mean, shape (H, W)."""
    yy, xx = _grid(size)
    out = np.zeros((size, size))
    for _ in range(waves):
        fy, fx = rng.uniform(0.5, 3.0, size=2)
        ph = rng.uniform(0, 2 * np.pi)
        out += np.sin(2 * np.pi * (fy * yy + fx * xx) + ph)
    return amplitude * out / waves


def _chw(img_hwc: np.ndarray) -> np.ndarray:
    return np.clip(img_hwc, 0.0, 1.0).transpose(2, 0, 1).astype(np.float32)


# -- digits -----------------------------------------------------------------------

#           a  b  c  d  e  f  g
_SEGMENTS = {
    0: (1, 1, 1, 1, 1, 1, 0),
    1: (0, 1, 1, 0, 0, 0, 0),
    2: (1, 1, 0, 1, 1, 0, 1),
    3: (1, 1, 1, 1, 0, 0, 1),
    4: (0, 1, 1, 0, 0, 1, 1),
    5: (1, 0, 1, 1, 0, 1, 1),
    6: (1, 0, 1, 1, 1, 1, 1),
    7: (1, 1, 1, 0, 0, 0, 0),
    8: (1, 1, 1, 1, 1, 1, 1),
    9: (1, 1, 1, 1, 0, 1, 1),
}


def glyph_mask(digit: int, size: int, rng) -> np.ndarray:
    """Seven-segment digit mask with random placement, scale and stroke width."""
    h = rng.uniform(0.55, 0.8) * size
    w = h * rng.uniform(0.45, 0.6)
    top = rng.uniform(0.05 * size, size - h - 0.05 * size)
    left = rng.uniform(0.05 * size, size - w - 0.05 * size)
    stroke = max(1.5, rng.uniform(0.09, 0.14) * h)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    mid = top + h / 2
    bars = {
        "a": (top, top + stroke, left, left + w),
        "d": (top + h - stroke, top + h, left, left + w),
        "g": (mid - stroke / 2, mid + stroke / 2, left, left + w),
        "f": (top, mid, left, left + stroke),
        "b": (top, mid, left + w - stroke, left + w),
        "e": (mid, top + h, left, left + stroke),
        "c": (mid, top + h, left + w - stroke, left + w),
    }
    mask = np.zeros((size, size), dtype=bool)
    for on, key in zip(_SEGMENTS[digit], "abcdefg"):
        if on:
            y0, y1, x0, x1 = bars[key]
            mask |= (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)
    return mask


def render_digit(rng, size: int) -> np.ndarray:
    """Unmodified digit render, (3, H, W)."""
    base = rng.uniform(0.25, 0.85, size=3)
    tex = np.stack([_smooth_texture(rng, size, amplitude=0.15) for _ in range(3)], axis=-1)
    img = base + tex
    ink = np.where(base.mean() > 0.55, rng.uniform(0.0, 0.25, size=3), rng.uniform(0.75, 1.0, size=3))
    mask = glyph_mask(int(rng.integers(0, 10)), size, rng)
    img[mask] = ink
    return _chw(img)


def _grain(rng, shape, phi: float) -> np.ndarray:
    return (0.03 * phi * rng.standard_normal(shape)).astype(np.float32)


def _digits_sample(task: Task, rng, size: int, domain: Domain):
    img = render_digit(rng, size)
    if domain is Domain.SOURCE:
        return img, 0.0, None
    phi = float(rng.uniform(0.0, 1.0))
    kind = "redness" if task is Task.DIGITS_REDNESS else "brightness"
    out = guidance.make_guidance(kind)(img, PhiValue.linear(phi))
    if phi > 0:
        out = np.clip(out + _grain(rng, out.shape, phi), 0.0, 1.0)
    return out.astype(np.float32), phi, None


# -- timelapse ----------------------------------------------------------------------

DAY_SKY_TOP = np.array([0.35, 0.55, 0.95])
DAY_SKY_LOW = np.array([0.75, 0.85, 1.0])
NIGHT_SKY = np.array([0.02, 0.03, 0.09])
DUSK_GLOW = np.array([1.0, 0.45, 0.15])
DAWN_GLOW = np.array([0.75, 0.4, 0.85])
WINDOW_LIGHT = np.array([1.0, 0.85, 0.45])


@dataclass(frozen=True)
class Scene:
    horizon: float
    ground: tuple
    buildings: tuple  # (x0, x1, top, colour, window lit pattern seed)
    sun_side: float


def _scene(rng) -> Scene:
    horizon = rng.uniform(0.55, 0.7)
    ground = tuple(rng.uniform([0.2, 0.35, 0.15], [0.4, 0.6, 0.3]))
    buildings = []
    for _ in range(int(rng.integers(2, 5))):
        wdt = rng.uniform(0.12, 0.28)
        x0 = rng.uniform(0.0, 1.0 - wdt)
        top = horizon - rng.uniform(0.15, 0.45)
        colour = tuple(rng.uniform(0.35, 0.75) * rng.uniform(0.85, 1.15, size=3))
        buildings.append((x0, x0 + wdt, top, colour, int(rng.integers(0, 2**31))))
    return Scene(horizon, ground, tuple(buildings), float(rng.choice([-1.0, 1.0])))


def render_timelapse(scene: Scene, phi: float, size: int) -> np.ndarray:
    """Scene under sun position ``phi`` (0 = midday), (3, H, W)."""
    yy, xx = _grid(size)
    c, s = math.cos(phi), math.sin(phi)
    day = ((1 + c) / 2) ** 1.3
    light = 0.06 + 0.94 * day
    glow_w = math.exp(-((c / 0.4) ** 2)) * abs(s)
    glow = DUSK_GLOW if s > 0 else DAWN_GLOW
    # sky: vertical gradient, horizon glow at dusk/dawn
    t = np.clip(yy / scene.horizon, 0, 1)[..., None]
    sky_day = DAY_SKY_TOP * (1 - t) + DAY_SKY_LOW * t
    sky = day * sky_day + (1 - day) * NIGHT_SKY
    sky = sky + 0.6 * glow_w * (t**2) * glow
    img = sky
    # sun disc, moving along an arc; hidden once it is below the horizon
    elevation = c
    if elevation > -0.1:
        sy = scene.horizon * (1 - 0.85 * max(elevation, 0.0)) - 0.04
        sx = 0.5 + 0.35 * s * scene.sun_side
        disc = ((yy - sy) ** 2 + (xx - sx) ** 2) < 0.07**2
        disc &= yy < scene.horizon
        sun_colour = np.array([1.0, 0.95, 0.8]) * (1 - glow_w) + glow_w * np.array([1.0, 0.6, 0.3])
        img = np.where(disc[..., None], sun_colour, img)
    # lit surfaces take a warm or cold cast from the sky near the horizon
    cast = 1 + 0.35 * glow_w * (glow - 0.6)
    ground = np.asarray(scene.ground) * light * cast
    img = np.where((yy >= scene.horizon)[..., None], ground, img)
    win_on = c < WINDOW_THRESHOLD
    cell = max(1.0 / size, 0.045)
    for x0, x1, top, colour, wseed in scene.buildings:
        body = (xx >= x0) & (xx < x1) & (yy >= top) & (yy < scene.horizon + 0.02)
        img = np.where(body[..., None], np.asarray(colour) * light * cast, img)
        wr = np.random.default_rng(wseed)
        # windows on a regular grid inside the facade
        gx = np.floor((xx - x0) / (2 * cell))
        gy = np.floor((yy - top) / (2 * cell))
        in_cell = (((xx - x0) / cell) % 2 >= 1) & (((yy - top) / cell) % 2 >= 1)
        lit_pattern = wr.random((64, 64)) < 0.55
        idx_y = np.clip(gy.astype(int), 0, 63)
        idx_x = np.clip(gx.astype(int), 0, 63)
        window = body & in_cell & (yy < scene.horizon - cell) & (xx < x1 - cell * 0.5)
        glass = np.asarray(colour) * light * 0.5
        img = np.where(window[..., None], glass, img)
        if win_on:
            lit = window & lit_pattern[idx_y, idx_x]
            img = np.where(lit[..., None], WINDOW_LIGHT, img)
    return _chw(img)


def _timelapse_sample(rng, size: int, domain: Domain):
    scene = _scene(rng)
    phi = 0.0 if domain is Domain.SOURCE else float(rng.uniform(0.0, 2 * math.pi))
    return render_timelapse(scene, phi, size), phi, None


# -- blur ---------------------------------------------------------------------------

VIGNETTE_STRENGTH = 0.35


def render_blobs(rng, size: int) -> np.ndarray:
    """Sharp 'flower' scene: gradient background and hard-edged petal blobs."""
    yy, xx = _grid(size)
    top, bottom = rng.uniform(0.2, 0.8, size=3), rng.uniform(0.2, 0.8, size=3)
    img = top * (1 - yy[..., None]) + bottom * yy[..., None]
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        r = rng.uniform(0.06, 0.18)
        petals = int(rng.integers(4, 8))
        ang = np.arctan2(yy - cy, xx - cx)
        rad = np.hypot(yy - cy, xx - cx)
        edge = r * (0.75 + 0.25 * np.cos(petals * ang + rng.uniform(0, 2 * np.pi)))
        img = np.where((rad < edge)[..., None], rng.uniform(0.0, 1.0, size=3), img)
        img = np.where((rad < 0.3 * r)[..., None], rng.uniform(0.6, 1.0, size=3), img)
    return _chw(img)


def vignette(size: int) -> np.ndarray:
    yy, xx = _grid(size)
    r2 = ((yy - 0.5) ** 2 + (xx - 0.5) ** 2) / 0.5
    return (1 - VIGNETTE_STRENGTH * r2).astype(np.float32)


def _blur_sample(rng, size: int, domain: Domain):
    img = render_blobs(rng, size)
    if domain is Domain.SOURCE:
        return img, 0.0, None
    phi = float(rng.uniform(0.0, 1.0))
    out = guidance.guide_blur(img, PhiValue.linear(phi)) * vignette(size)
    return np.clip(out, 0, 1).astype(np.float32), phi, None


# -- fog ----------------------------------------------------------------------------

FOG_NEAR_M, FOG_FAR_M = 2.0, 150.0
TEXTURE_AMPLITUDE = 0.12
GREY_CAST = 0.25


def depth_gradient(size: int) -> np.ndarray:
    """Linear row gradient: far at the top row, near at the bottom."""
    yy, _ = _grid(size)
    return (FOG_FAR_M + (FOG_NEAR_M - FOG_FAR_M) * yy).astype(np.float32)


def render_street(rng, size: int, textured: bool) -> np.ndarray:
    """Flat-shaded road scene; the target style adds fine texture to every region."""
    yy, xx = _grid(size)
    horizon = rng.uniform(0.3, 0.45)
    img = np.empty((size, size, 3))
    img[:] = rng.uniform([0.5, 0.6, 0.75], [0.7, 0.8, 0.95])
    road = yy >= horizon
    img[road] = rng.uniform(0.25, 0.45) * np.ones(3)
    for _ in range(int(rng.integers(2, 5))):
        x0 = rng.uniform(0, 0.8)
        wdt = rng.uniform(0.08, 0.25)
        y0 = rng.uniform(0.15, horizon)
        box = (xx >= x0) & (xx < x0 + wdt) & (yy >= y0) & (yy < horizon + 0.15)
        img[box] = rng.uniform(0.1, 0.9, size=3)
    if textured:
        img = img + TEXTURE_AMPLITUDE * rng.standard_normal((size, size, 1)) * np.ones(3)
    return _chw(img)


def _fog_sample(rng, size: int, domain: Domain):
    depth = depth_gradient(size)
    if domain is Domain.SOURCE:
        return render_street(rng, size, textured=False), 0.0, depth
    phi = float(rng.uniform(0.0, 1.0))
    img = render_street(rng, size, textured=True)
    grey = img.mean(axis=0, keepdims=True)
    img = (1 - GREY_CAST) * img + GREY_CAST * grey
    return guidance.guide_fog(img, PhiValue.linear(phi), depth), phi, depth


# -- generation ---------------------------------------------------------------------

def generate_sample(spec: DatasetSpec, domain: Domain, split: str, index: int):
    """(image (3, H, W), gt phi, depth or None) for one index; pure in its arguments."""
    domain = Domain(domain)
    rng = _rng(spec.seed, split, domain, index)
    size = spec.image_size
    task = spec.task
    if task is Task.TOY_TIMELAPSE:
        return _timelapse_sample(rng, size, domain)
    if task is Task.TOY_BLUR:
        return _blur_sample(rng, size, domain)
    if task is Task.TOY_FOG:
        return _fog_sample(rng, size, domain)
    if task is Task.DIGITS_CONFUSION:
        # one pool; phi uniform on [0, 1] so phi = 0 images are just other members
        return _digits_sample(Task.DIGITS_BRIGHTNESS, rng, size, Domain.TARGET)
    return _digits_sample(task, rng, size, domain)


def generate(spec: DatasetSpec) -> Dataset:
    ds = Dataset(spec)
    for split in SPLITS:
        for domain in Domain:
            n = spec.count(domain, split)
            images = np.zeros((n, 3, spec.image_size, spec.image_size), dtype=np.float32)
            phis = np.zeros(n, dtype=np.float64)
            depths = None
            for i in range(n):
                img, phi, depth = generate_sample(spec, domain, split, i)
                images[i], phis[i] = img, phi
                if depth is not None:
                    if depths is None:
                        depths = np.zeros((n, spec.image_size, spec.image_size), dtype=np.float32)
                    depths[i] = depth
            ds.subsets[(domain.value, split)] = Subset(domain, images, phis, depths)
    return ds


def gen_toy_timelapse(spec: DatasetSpec) -> Dataset:
    return generate(DatasetSpec(**{**spec.to_dict(), "task": Task.TOY_TIMELAPSE}))


def gen_toy_blur(spec: DatasetSpec) -> Dataset:
    return generate(DatasetSpec(**{**spec.to_dict(), "task": Task.TOY_BLUR}))


def gen_toy_fog(spec: DatasetSpec) -> Dataset:
    return generate(DatasetSpec(**{**spec.to_dict(), "task": Task.TOY_FOG}))


def gen_digits(spec: DatasetSpec) -> Dataset:
    if spec.task not in (Task.DIGITS_BRIGHTNESS, Task.DIGITS_REDNESS, Task.DIGITS_CONFUSION):
        raise ContractError(f"gen_digits does not build task {spec.task.value}")
    return generate(spec)


# -- persistence ----------------------------------------------------------------------

MANIFEST = "manifest.json"
CACHE = "cache.cmt"


def write_png(img_chw: np.ndarray, path: Path) -> None:
    arr = np.round(np.clip(img_chw, 0, 1).transpose(1, 2, 0) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except FileNotFoundError as exc:
        raise DatasetIOError(f"{path}: image file missing") from exc
    except OSError as exc:
        raise DatasetIOError(f"{path}: unreadable image ({exc})") from exc
    return arr.transpose(2, 0, 1).copy()


def save_dataset(ds: Dataset, path) -> Path:
    """PNG per sample, a JSON manifest with one record per sample, and a float CMT1 cache."""
    root = Path(path)
    try:
        (root / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetIOError(f"{root}: {exc}") from exc
    records, arrays, index = [], [], 0
    for (domain, split), sub in sorted(ds.subsets.items(), key=lambda kv: (SPLITS.index(kv[0][1]), kv[0][0])):
        for i in range(len(sub)):
            name = f"images/{split}_{domain}_{i:05d}.png"
            write_png(sub.images[i], root / name)
            records.append(
                {
                    "index": index,
                    "file": name,
                    "domain": domain,
                    "split": split,
                    "gt_phi": float(sub.phi[i]),
                    "task": ds.task.value,
                    "seed": ds.spec.seed,
                }
            )
            index += 1
        arrays += [sub.images, sub.phi.astype(np.float32)]
        arrays.append(sub.depth if sub.depth is not None else np.zeros((0,), dtype=np.float32))
    manifest = {
        "spec": ds.spec.to_dict(),
        "manifold": ds.manifold.value,
        "guidance": ds.guidance_kind,
        "private_features": ds.private_features,
        "digest": ds.digest(),
        "cache_layout": [list(k) for k in sorted(ds.subsets, key=lambda k: (SPLITS.index(k[1]), k[0]))],
        "samples": records,
    }
    cmt.save(root / CACHE, arrays)
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1))
    return root


def _read_manifest(root: Path) -> dict:
    try:
        manifest = json.loads((root / MANIFEST).read_text())
    except FileNotFoundError as exc:
        raise DatasetIOError(f"{root / MANIFEST}: manifest not found") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DatasetIOError(f"{root / MANIFEST}: corrupt manifest ({exc})") from exc
    for key in ("spec", "samples", "cache_layout"):
        if key not in manifest:
            raise DatasetIOError(f"{root / MANIFEST}: corrupt manifest (missing '{key}')")
    return manifest


def load_dataset(path, *, use_cache: bool = True) -> Dataset:
    """Load a dataset saved by :func:`save_dataset`.

    With ``use_cache`` the float CMT1 cache is read (exact); otherwise images
    come from the 8-bit PNGs.  phi always comes from the manifest.
    """
    root = Path(path)
    manifest = _read_manifest(root)
    spec = DatasetSpec(**manifest["spec"])
    ds = Dataset(spec)
    arrays = cmt.load(root / CACHE)
    layout = [tuple(k) for k in manifest["cache_layout"]]
    if len(arrays) != 3 * len(layout):
        raise DatasetIOError(f"{root / CACHE}: expected {3 * len(layout)} tensors, found {len(arrays)}")
    by_key = {}
    for rec in manifest["samples"]:
        by_key.setdefault((rec["domain"], rec["split"]), []).append(rec)
    for j, (domain, split) in enumerate(layout):
        images, phi, depth = arrays[3 * j : 3 * j + 3]
        recs = by_key.get((domain, split), [])
        if len(recs) != images.shape[0]:
            raise DatasetIOError(f"{root / MANIFEST}: {len(recs)} records for {domain}/{split}, cache has {images.shape[0]}")
        if not use_cache and recs:
            images = np.stack([read_png(root / r["file"]) for r in recs])
        # the manifest keeps phi in full precision; the cache copy is float32
        phi = np.array([r["gt_phi"] for r in recs], dtype=np.float64)
        ds.subsets[(domain, split)] = Subset(Domain(domain), images, phi, depth if depth.size else None)
    return ds


def verify_digest(path) -> bool:
    """True when the stored digest matches a fresh regeneration from the manifest's spec."""
    manifest = _read_manifest(Path(path))
    return generate(DatasetSpec(**manifest["spec"])).digest() == manifest["digest"]
