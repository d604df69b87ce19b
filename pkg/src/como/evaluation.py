"""Quantitative evaluation in a small learned feature space.

Fréchet distances here are computed on the penultimate activations of a toy
conv classifier (source vs. coarse phi bins), not on InceptionV3 features, so
absolute values are only comparable within this package.  Every report
written by this module says so in its header.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image, ImageDraw

from .errors import ContractError, DimensionError
from .guidance import GuidanceModel, Manifold, TWO_PI, wrapped_difference
from .networks import GeneratorBundle, PhiNetA, decode_head, translate
from .numerics import ops
from .numerics.nn import Conv2d, Linear, Module
from .numerics.optim import Adam
from .numerics.tensor import Tensor, backward, no_grad

REPORT_HEADER = "feature space: toy conv classifier (source + 8 phi bins), penultimate layer; not InceptionV3"

Generator = Callable[..., np.ndarray]


# -- feature extractor ----------------------------------------------------------------

class FeatureExtractor(Module):
    """Conv classifier whose penultimate activations serve as the feature space."""

    def __init__(self, n_classes: int, *, seed: int = 0, widths=(16, 32, 64), features: int = 32):
        rng = np.random.default_rng(seed)
        cins = (3,) + tuple(widths[:-1])
        self.convs = [Conv2d(ci, co, 3, stride=2, rng=rng) for ci, co in zip(cins, widths)]
        self.fc = Linear(widths[-1] * 2, features, rng=rng, gain=np.sqrt(2.0))
        self.head = Linear(features, n_classes, rng=rng)
        self.seed = seed
        self.n_classes = n_classes
        self.assign_names()

    def embed(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = ops.leaky_relu(conv(x))
        # mean and mean-square pooling keep both brightness and contrast
        pooled = ops.concat([ops.mean(x, axis=(2, 3)), ops.mean(ops.square(x), axis=(2, 3))], axis=1)
        return ops.leaky_relu(self.fc(pooled))

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.embed(x))

    def features(self, images: np.ndarray, batch: int = 256) -> np.ndarray:
        out = []
        with no_grad():
            for i in range(0, len(images), batch):
                out.append(self.embed(Tensor(np.asarray(images[i : i + batch], dtype=np.float32))).data)
        return np.concatenate(out, axis=0).astype(np.float64) if out else np.zeros((0, self.fc.bias.shape[1]))


N_PHI_CLASSES = 8


def phi_class(phi, manifold: Manifold) -> np.ndarray:
    """Coarse phi-bin label in 1..8 (0 is reserved for the source domain)."""
    span = Manifold(manifold).span
    return 1 + np.minimum((np.asarray(phi) / span * N_PHI_CLASSES).astype(int), N_PHI_CLASSES - 1)


def train_extractor(dataset, *, seed: int = 0, epochs: int = 4, batch: int = 64, lr: float = 1e-3) -> FeatureExtractor:
    """Fit the extractor on the train split (source = class 0, target = phi bin); return it frozen."""
    from .data import Domain, Task

    parts, labels = [], []
    if dataset.task is not Task.DIGITS_CONFUSION:
        src = dataset.subset(Domain.SOURCE, "train")
        parts.append(src.images)
        labels.append(np.zeros(len(src), dtype=int))
    tgt = dataset.subset(Domain.TARGET, "train")
    parts.append(tgt.images)
    labels.append(phi_class(tgt.phi, dataset.manifold))
    x, y = np.concatenate(parts), np.concatenate(labels)
    model = FeatureExtractor(1 + N_PHI_CLASSES, seed=seed)
    opt = Adam(model.parameters(), lr=lr, betas=(0.9, 0.999))
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for i in range(0, len(x) - batch + 1, batch):
            idx = order[i : i + batch]
            opt.zero_grad()
            loss = ops.cross_entropy(model(Tensor(x[idx])), y[idx])
            backward(loss)
            opt.step()
    for p in model.parameters():
        p.requires_grad = False
    return model


def extractor_accuracy(model: FeatureExtractor, images, labels) -> float:
    with no_grad():
        logits = model(Tensor(np.asarray(images, dtype=np.float32))).data
    return float((logits.argmax(axis=1) == np.asarray(labels)).mean())


# -- distances ----------------------------------------------------------------------

def gaussian_stats(features: np.ndarray):
    f = np.asarray(features, dtype=np.float64)
    return f.mean(axis=0), np.cov(f, rowvar=False)


def _psd_sqrt(s: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((s + s.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(mu1, sigma1, mu2, sigma2) -> float:
    """|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).

    The trace of (S1 S2)^(1/2) is taken from the eigenvalues of the symmetric
    product S1^(1/2) S2 S1^(1/2), clipped at zero.
    """
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, float)), np.atleast_1d(np.asarray(mu2, float))
    s1, s2 = np.atleast_2d(np.asarray(sigma1, float)), np.atleast_2d(np.asarray(sigma2, float))
    d = mu1.shape[0]
    if mu2.shape != (d,) or s1.shape != (d, d) or s2.shape != (d, d):
        raise DimensionError(f"frechet_distance: shapes {mu1.shape}, {s1.shape} vs {mu2.shape}, {s2.shape}")
    r1 = _psd_sqrt(s1)
    inner = r1 @ s2 @ r1
    eig = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_sqrt = np.sqrt(np.clip(eig, 0, None)).sum()
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(s1) + np.trace(s2) - 2 * tr_sqrt)
    return max(value, 0.0)


def feature_frechet(f1: np.ndarray, f2: np.ndarray) -> float:
    return frechet_distance(*gaussian_stats(f1), *gaussian_stats(f2))


# -- generators -----------------------------------------------------------------------

def bundle_generator(bundle: GeneratorBundle, to_net=None, batch: int = 128) -> Generator:
    """Adapter: ``gen(x, phi, depth=None)`` from a trained bundle; ``to_net`` maps task phi to net phi."""

    def gen(x, phi, depth=None):
        phi = np.broadcast_to(np.asarray(phi, dtype=np.float64), (len(x),))
        net_phi = phi if to_net is None else to_net(phi)
        out = []
        with no_grad():
            for i in range(0, len(x), batch):
                y, _ = translate(bundle, np.asarray(x[i : i + batch]), net_phi[i : i + batch], need_model=False)
                out.append(y.data)
        return np.concatenate(out)

    return gen


def guidance_generator(model: GuidanceModel) -> Generator:
    def gen(x, phi, depth=None):
        phi = np.broadcast_to(np.asarray(phi, dtype=np.float64), (len(x),))
        return model.apply_batch(np.asarray(x), phi, depth)

    return gen


def noise_generator(seed: int = 0) -> Generator:
    """Uniform noise images, ignoring input and phi."""

    def gen(x, phi, depth=None):
        rng = np.random.default_rng(seed)
        return rng.uniform(0, 1, size=np.shape(x)).astype(np.float32)

    return gen


def constant_generator() -> Generator:
    """Returns its input: completely phi-invariant."""

    def gen(x, phi, depth=None):
        return np.asarray(x, dtype=np.float32).copy()

    return gen


def memorizer_generator(real_images: np.ndarray, real_phi: np.ndarray, manifold: Manifold) -> Generator:
    """Answers each request with the real sample whose phi is nearest, cycling through ties."""
    real_phi = np.asarray(real_phi, dtype=np.float64)

    def gen(x, phi, depth=None):
        phi = np.broadcast_to(np.asarray(phi, dtype=np.float64), (len(x),))
        out = np.empty((len(x),) + real_images.shape[1:], dtype=np.float32)
        for i, p in enumerate(phi):
            d = np.abs(wrapped_difference(real_phi, p)) if manifold is Manifold.CYCLIC else np.abs(real_phi - p)
            order = np.argsort(d, kind="stable")
            out[i] = real_images[order[i % min(len(order), 64)]]
        return out

    return gen


# -- manifold error ---------------------------------------------------------------------

def phi_abs_error(estimate, truth, manifold: Manifold) -> np.ndarray:
    estimate, truth = np.asarray(estimate, float), np.asarray(truth, float)
    if Manifold(manifold) is Manifold.CYCLIC:
        return np.abs(wrapped_difference(estimate, truth))
    return np.abs(estimate - truth)


def manifold_error(phinet_a: PhiNetA, images, gt_phi, batch: int = 256):
    """(mean, std) absolute phi error of phi-Net_A on labelled validation images."""
    images = np.asarray(images, dtype=np.float32)
    if len(images) == 0:
        raise ContractError("manifold_error needs at least one validation sample")
    heads = []
    with no_grad():
        for i in range(0, len(images), batch):
            heads.append(phinet_a(Tensor(images[i : i + batch])).data)
    est = decode_head(np.concatenate(heads), phinet_a.manifold)
    err = phi_abs_error(est, gt_phi, phinet_a.manifold)
    return float(err.mean()), float(err.std())


def error_stats(estimate, truth, manifold: Manifold):
    err = phi_abs_error(estimate, truth, manifold)
    if err.size == 0:
        raise ContractError("error_stats needs at least one value")
    return float(err.mean()), float(err.std())


# -- rolling Fréchet --------------------------------------------------------------------

@dataclass(frozen=True)
class BinSpec:
    manifold: Manifold
    count: int = 20
    width: float | None = None  # default: twice the centre spacing (50% overlap)

    @property
    def span(self) -> float:
        return Manifold(self.manifold).span

    @property
    def spacing(self) -> float:
        return self.span / self.count

    @property
    def bin_width(self) -> float:
        return 2 * self.spacing if self.width is None else self.width

    def centers(self) -> np.ndarray:
        return (np.arange(self.count) + 0.5) * self.spacing

    def members(self, phi, center: float) -> np.ndarray:
        phi = np.asarray(phi, dtype=np.float64)
        if Manifold(self.manifold) is Manifold.CYCLIC:
            d = np.abs(wrapped_difference(phi, center))
        else:
            d = np.abs(phi - center)
        return d <= self.bin_width / 2 + 1e-12

    def sample_in_bin(self, center: float, n: int, rng) -> np.ndarray:
        lo = center - self.bin_width / 2
        values = lo + self.bin_width * rng.random(n)
        if Manifold(self.manifold) is Manifold.CYCLIC:
            return np.mod(values, TWO_PI)
        return np.clip(values, 0.0, 1.0)


MIN_REAL_PER_BIN = 8


@dataclass
class RollingResult:
    centers: np.ndarray
    scores: np.ndarray  # NaN where absent
    n_real: np.ndarray
    n_fake: int

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.scores)

    @property
    def mean(self) -> float:
        return float(np.nanmean(self.scores)) if self.present.any() else float("nan")

    def coverage(self) -> dict:
        return {"present": int(self.present.sum()), "absent": int((~self.present).sum())}


def rolling_frechet(
    generator: Generator,
    extractor: FeatureExtractor,
    bins: BinSpec,
    real_images,
    real_phi,
    sources,
    *,
    source_depth=None,
    per_bin: int = 64,
    seed: int = 0,
) -> RollingResult:
    """Per-bin Fréchet distance between translations at the bin centre and real samples in the bin."""
    real_images = np.asarray(real_images)
    real_feats = extractor.features(real_images)
    sources = np.asarray(sources)
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(sources), size=per_bin, replace=len(sources) < per_bin)
    src = sources[pick]
    depth = None if source_depth is None else np.asarray(source_depth)[pick]
    centers = bins.centers()
    scores = np.full(len(centers), np.nan)
    n_real = np.zeros(len(centers), dtype=int)
    for i, c in enumerate(centers):
        mask = bins.members(real_phi, c)
        n_real[i] = int(mask.sum())
        if n_real[i] < MIN_REAL_PER_BIN:
            continue
        fake = generator(src, np.full(per_bin, c), depth)
        scores[i] = feature_frechet(extractor.features(fake), real_feats[mask])
    return RollingResult(centers, scores, n_real, per_bin)


def real_self_rolling(extractor: FeatureExtractor, bins: BinSpec, real_images, real_phi) -> RollingResult:
    """Every bin's real set compared with itself; zero wherever present."""
    feats = extractor.features(np.asarray(real_images))
    centers = bins.centers()
    scores = np.full(len(centers), np.nan)
    n_real = np.zeros(len(centers), dtype=int)
    for i, c in enumerate(centers):
        mask = bins.members(real_phi, c)
        n_real[i] = int(mask.sum())
        if n_real[i] >= MIN_REAL_PER_BIN:
            scores[i] = feature_frechet(feats[mask], feats[mask])
    return RollingResult(centers, scores, n_real, 0)


def dual_distance(
    generator: Generator,
    extractor: FeatureExtractor,
    bins: BinSpec,
    guidance_model: GuidanceModel,
    real_images,
    real_phi,
    sources,
    *,
    source_depth=None,
    per_bin: int = 64,
    seed: int = 0,
):
    """(real_fd, model_fd) rolling results: against real targets and against guidance outputs."""
    real = rolling_frechet(
        generator, extractor, bins, real_images, real_phi, sources, source_depth=source_depth, per_bin=per_bin, seed=seed
    )
    sources = np.asarray(sources)
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(sources), size=per_bin, replace=len(sources) < per_bin)
    src = sources[pick]
    depth = None if source_depth is None else np.asarray(source_depth)[pick]
    brng = np.random.default_rng([seed, 1])
    centers = bins.centers()
    scores = np.full(len(centers), np.nan)
    for i, c in enumerate(centers):
        fake = generator(src, np.full(per_bin, c), depth)
        reference = guidance_model.apply_batch(src, bins.sample_in_bin(c, per_bin, brng), depth)
        scores[i] = feature_frechet(extractor.features(fake), extractor.features(reference))
    model = RollingResult(centers, scores, np.full(len(centers), per_bin), per_bin)
    return real, model


def write_rolling_csv(path, result: RollingResult, label: str = "fd") -> Path:
    path = Path(path)
    with path.open("w", newline="") as fp:
        fp.write(f"# {REPORT_HEADER}\n")
        w = csv.writer(fp)
        w.writerow(["bin_center", "n_real", "present", label])
        for c, n, s in zip(result.centers, result.n_real, result.scores):
            w.writerow([f"{c:.6f}", int(n), int(not math.isnan(s)), "" if math.isnan(s) else f"{s:.6f}"])
        w.writerow(["mean", "", int(result.present.sum()), f"{result.mean:.6f}"])
    return path


def plot_rolling(path, results: dict, title: str = "rolling Fréchet distance") -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.2))
    for name, res in results.items():
        ax.plot(res.centers, res.scores, marker="o", ms=3, label=f"{name} (mean {res.mean:.3g})")
    ax.set_xlabel("phi")
    ax.set_ylabel("Fréchet distance")
    ax.set_title(title, fontsize=9)
    ax.legend(fontsize=7)
    fig.text(0.01, 0.01, REPORT_HEADER, fontsize=5)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


# -- diversity --------------------------------------------------------------------------

def diversity_score(generator: Generator, extractor: FeatureExtractor, images, pairs: int, rng, *, manifold: Manifold, depth=None) -> float:
    """Mean feature-space L2 distance between translations of one image at two random phi."""
    images = np.asarray(images)
    n = len(images)
    span = Manifold(manifold).span
    phi1 = rng.uniform(0, span, size=(pairs, n))
    phi2 = rng.uniform(0, span, size=(pairs, n))
    reps = np.concatenate([images] * pairs)
    drep = None if depth is None else np.concatenate([np.asarray(depth)] * pairs)
    f1 = extractor.features(generator(reps, phi1.reshape(-1), drep))
    f2 = extractor.features(generator(reps, phi2.reshape(-1), drep))
    return float(np.linalg.norm(f1 - f2, axis=1).mean())


# -- strips -------------------------------------------------------------------------------

FOOTER = 12


def strip_array(generator: Generator, x, phis, depth=None) -> np.ndarray:
    """(H, k * W, 3) uint8 concatenation of translations of one image."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    d = None if depth is None else np.asarray(depth)[None] if np.ndim(depth) == 2 else depth
    panels = []
    for p in phis:
        y = generator(x, np.array([float(p)]), d)[0]
        panels.append(np.round(np.clip(y, 0, 1).transpose(1, 2, 0) * 255).astype(np.uint8))
    return np.concatenate(panels, axis=1)


def emit_strip(generator: Generator, x, phis, path, depth=None) -> Path:
    """PNG strip with one panel per phi and a footer row labelling each column."""
    phis = list(phis)
    if not phis:
        raise ContractError("emit_strip needs at least one phi value")
    body = strip_array(generator, x, phis, depth)
    h, total_w, _ = body.shape
    w = total_w // len(phis)
    canvas = Image.new("RGB", (total_w, h + FOOTER), (0, 0, 0))
    canvas.paste(Image.fromarray(body), (0, 0))
    draw = ImageDraw.Draw(canvas)
    for i, p in enumerate(phis):
        draw.text((i * w + 1, h + 1), f"{float(p):.2f}", fill=(255, 255, 255))
    canvas.save(path, format="PNG")
    return Path(path)
