"""Encoder, decoder, discriminator and the two phi regressors.

phi enters the generator only through the FIN layers of the DRB.  Images are
float tensors in [0, 1]; decoders end in ``(tanh + 1) / 2``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import guidance
from .drb import Direction, DrbBlock
from .errors import ContractError, DatasetIOError
from .guidance import Manifold, PhiValue
from .numerics import cmt, ops
from .numerics.nn import Conv2d, InstanceNorm2d, Linear, Module
from .numerics.tensor import Tensor, make_result, no_grad


@dataclass(frozen=True)
class NetConfig:
    """Widths of every network; the defaults are the reference toy architecture."""

    widths: tuple = (32, 64, 128)
    disc_widths: tuple = (32, 64, 128)
    phinet_widths: tuple = (16, 32, 64, 64)
    head_hidden: int = 32
    share_drb: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        for key in ("widths", "disc_widths", "phinet_widths"):
            if key in d:
                d[key] = tuple(int(v) for v in d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def to_unit(t: Tensor) -> Tensor:
    """Map tanh output in (-1, 1) to (0, 1)."""
    return ops.scale(ops.add(ops.tanh(t), 1.0), 0.5)


class EncoderBlock(Module):
    def __init__(self, cin, cout, *, rng, norm: bool):
        self.conv = Conv2d(cin, cout, 3, stride=2, rng=rng)
        self.norm = InstanceNorm2d(cout) if norm else None

    def forward(self, x):
        h = self.conv(x)
        if self.norm is not None:
            h = self.norm(h)
        return ops.relu(h)


class Encoder(Module):
    """Stride-2 conv blocks; image (N, 3, H, W) -> features (N, C, H/8, W/8).

    The first block has no normalisation so global colour and brightness are
    not discarded before the decoder can see them.
    """

    def __init__(self, widths, *, rng):
        cins = (3,) + tuple(widths[:-1])
        self.blocks = [EncoderBlock(ci, co, rng=rng, norm=i > 0) for i, (ci, co) in enumerate(zip(cins, widths))]

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class Decoder(Module):
    """Mirror of the encoder: nearest upsample, conv, ReLU; last stage maps to RGB."""

    def __init__(self, widths, *, rng):
        rev = tuple(reversed(widths))
        self.convs = [Conv2d(ci, co, 3, rng=rng) for ci, co in zip(rev, rev[1:] + (3,))]

    def forward(self, h: Tensor) -> Tensor:
        last = len(self.convs) - 1
        for i, conv in enumerate(self.convs):
            h = conv(ops.upsample2x(h))
            if i < last:
                h = ops.relu(h)
        return to_unit(h)


class Discriminator(Module):
    """Patch discriminator without normalisation; returns a score map."""

    def __init__(self, widths, *, rng):
        cins = (3,) + tuple(widths[:-1])
        self.convs = [Conv2d(ci, co, 3, stride=2, rng=rng) for ci, co in zip(cins, widths)]
        self.head = Conv2d(widths[-1], 1, 3, rng=rng, gain=1.0)

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = ops.leaky_relu(conv(x))
        return self.head(x)


class Trunk(Module):
    """Conv feature extractor ending in a global average, (N, 3, H, W) -> (N, F)."""

    def __init__(self, widths, *, rng):
        cins = (3,) + tuple(widths[:-1])
        self.convs = [Conv2d(ci, co, 3, stride=2, rng=rng) for ci, co in zip(cins, widths)]
        self.features = widths[-1]

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = ops.leaky_relu(conv(x))
        return ops.mean(x, axis=(2, 3))


class PhiNetPair(Module):
    """Siamese regressor of the projected phi difference between two images.

    The head is antisymmetrised, ``net(a, b) = g(a, b) - g(b, a)``, so
    ``net(y, y) == 0`` and swapping arguments negates the output exactly.
    """

    def __init__(self, manifold: Manifold, widths, hidden, *, rng):
        self.manifold = Manifold(manifold)
        self.trunk = Trunk(widths, rng=rng)
        self.fc1 = Linear(2 * self.trunk.features, hidden, rng=rng, gain=np.sqrt(2.0))
        self.fc2 = Linear(hidden, self.manifold.projected_dim, rng=rng)

    def _g(self, fa: Tensor, fb: Tensor) -> Tensor:
        return self.fc2(ops.leaky_relu(self.fc1(ops.concat([fa, fb], axis=1))))

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        n = a.shape[0]
        if b.shape != a.shape:
            raise ContractError(f"phi-Net pair needs equal shapes, got {a.shape} and {b.shape}")
        # one trunk pass over both images keeps the two features bitwise comparable
        f = self.trunk(ops.concat([a, b], axis=0))
        fa, fb = split_rows(f, n)
        return ops.sub(self._g(fa, fb), self._g(fb, fa))


def split_rows(t: Tensor, n: int):
    """Split an (2n, F) tensor into two (n, F) halves, differentiably."""

    def part(lo, hi):
        def grad_fn(g):
            full = np.zeros_like(t.data)
            full[lo:hi] = g
            return (full,)

        return make_result(t.data[lo:hi].copy(), (t,), grad_fn, "rows")

    return part(0, n), part(n, 2 * n)


def phinet_pair_delta(net: PhiNetPair, y1: Tensor, y2: Tensor) -> Tensor:
    return net(y1, y2)


class PhiNetA(Module):
    """Single-image regressor of projected phi."""

    def __init__(self, manifold: Manifold, widths, hidden, *, rng):
        self.manifold = Manifold(manifold)
        self.trunk = Trunk(widths, rng=rng)
        self.fc1 = Linear(self.trunk.features, hidden, rng=rng, gain=np.sqrt(2.0))
        self.fc2 = Linear(hidden, self.manifold.projected_dim, rng=rng)

    def forward(self, y: Tensor) -> Tensor:
        return self.fc2(ops.leaky_relu(self.fc1(self.trunk(y))))


def decode_head(head, manifold: Manifold) -> np.ndarray:
    """Projected head outputs to raw coordinates; cyclic heads are normalised to the unit circle first."""
    head = np.asarray(head, dtype=np.float64)
    if Manifold(manifold) is Manifold.CYCLIC:
        norm = np.linalg.norm(head, axis=1, keepdims=True)
        head = head / np.maximum(norm, 1e-12)
    return guidance.decode_projection(head, manifold)


def phinet_single_estimate(net: PhiNetA, y) -> list:
    """phi-Net_A estimates as one :class:`PhiValue` per image."""
    with no_grad():
        head = net(y if isinstance(y, Tensor) else Tensor(y)).data
    return [PhiValue(v, net.manifold) for v in decode_head(head, net.manifold)]


class GeneratorBundle(Module):
    """All trainable networks of one run.

    In cycle mode a second encoder/decoder couple translates Y->X; it uses the
    same DRB object unless ``share_drb`` is off.
    """

    def __init__(self, manifold: Manifold, net: NetConfig = NetConfig(), *, cycle: bool = False, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.manifold = Manifold(manifold)
        self.net = net
        self.cycle = cycle
        c = net.widths[-1]
        self.encoder = Encoder(net.widths, rng=rng)
        self.drb = DrbBlock(c, self.manifold, rng=rng)
        self.decoder = Decoder(net.widths, rng=rng)
        self.disc = Discriminator(net.disc_widths, rng=rng)
        self.phinet = PhiNetPair(self.manifold, net.phinet_widths, net.head_hidden, rng=rng)
        self.phinet_a = PhiNetA(self.manifold, net.phinet_widths, net.head_hidden, rng=rng)
        if cycle:
            self.encoder_back = Encoder(net.widths, rng=rng)
            self.drb_back = self.drb if net.share_drb else DrbBlock(c, self.manifold, rng=rng)
            self.decoder_back = Decoder(net.widths, rng=rng)
        self.assign_names()

    @property
    def anchor(self) -> PhiValue:
        return PhiValue(0.0, self.manifold)

    def generator_modules(self, *, with_model_branch: bool = True) -> list:
        mods = [self.encoder, self.drb.phi, self.drb.real, self.decoder]
        if with_model_branch:
            mods.append(self.drb.model)
        if self.cycle:
            mods += [self.encoder_back, self.decoder_back]
            if self.drb_back is not self.drb:
                mods.append(self.drb_back)
        return mods

    def generator_parameters(self, *, with_model_branch: bool = True) -> list:
        params, seen = [], set()
        for mod in self.generator_modules(with_model_branch=with_model_branch):
            for p in mod.parameters():
                if id(p) not in seen:
                    seen.add(id(p))
                    params.append(p)
        return params

    def coupling(self, direction: Direction):
        """(encoder, drb, decoder) for a translation direction."""
        if Direction(direction) is Direction.FORWARD:
            return self.encoder, self.drb, self.decoder
        if not self.cycle:
            raise ContractError("Y->X translation requires a cycle-mode bundle")
        return self.encoder_back, self.drb_back, self.decoder_back


def drb_shared_apply(bundle: GeneratorBundle, direction: Direction, hX: Tensor, phi, *, need_model: bool = True):
    _, drb, _ = bundle.coupling(direction)
    return drb(hX, phi, need_model=need_model)


def _as_batch(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
    if t.ndim == 3:
        t = ops.reshape(t, (1,) + t.shape)
    return t


def translate(bundle: GeneratorBundle, x, phi, *, direction: Direction = Direction.FORWARD, need_model: bool = True):
    """(y_phi, y_phi_M) for image batch ``x`` at ``phi`` (one value or one per sample)."""
    enc, drb, dec = bundle.coupling(direction)
    x = _as_batch(x)
    hY, hYM = drb(enc(x), phi, need_model=need_model)
    y = dec(hY)
    return y, (dec(hYM) if hYM is not None else None)


class Absolute:
    def __init__(self, phi: PhiValue):
        self.phi = phi


class Relative:
    def __init__(self, delta: float):
        self.delta = float(delta)


def translate_agnostic(bundle: GeneratorBundle, phinet_a: PhiNetA, x, target) -> tuple:
    """Translate without knowing the input's phi; returns (image batch, target phi values)."""
    if not bundle.cycle:
        raise ContractError("phi-agnostic translation requires a bundle trained in cycle mode")
    x = _as_batch(x)
    estimates = phinet_single_estimate(phinet_a, x)
    if isinstance(target, Absolute):
        goal = [target.phi] * len(estimates)
    elif isinstance(target, Relative):
        goal = [e.shifted(target.delta) for e in estimates]
    else:
        raise ContractError(f"unknown translation target {target!r}")
    with no_grad():
        y, _ = translate(bundle, x, np.array([g.value for g in goal]), need_model=False)
    return y.data, goal


def parameter_report(bundle: GeneratorBundle) -> dict:
    """Parameter counts per top-level network plus the total."""
    report = {}
    for name, value in vars(bundle).items():
        if isinstance(value, Module) and not (name == "drb_back" and value is bundle.drb):
            report[name] = value.parameter_count()
    report["total"] = bundle.parameter_count()
    return report


# -- checkpoints ----------------------------------------------------------------

WEIGHTS_FILE = "weights.cmt"
MANIFEST_FILE = "manifest.json"


def save_checkpoint(path, bundle: GeneratorBundle, *, step: int, config_hash: str, extra_arrays=None, extra=None):
    """Write CMT1 weights plus a JSON manifest into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = dict(bundle.state_dict())
    if extra_arrays:
        arrays.update(extra_arrays)
    names = list(arrays)
    cmt.save(path / WEIGHTS_FILE, [arrays[n] for n in names])
    manifest = {
        "format": "CMT1",
        "step": int(step),
        "manifold": bundle.manifold.value,
        "cycle": bundle.cycle,
        "config_hash": config_hash,
        "net": bundle.net.to_dict(),
        "tensors": [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names],
    }
    if extra:
        manifest["extra"] = extra
    tmp = path / (MANIFEST_FILE + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    os.replace(tmp, path / MANIFEST_FILE)
    return path


def read_checkpoint(path):
    """(manifest, name -> array) from a checkpoint directory."""
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST_FILE).read_text())
    except FileNotFoundError as exc:
        raise DatasetIOError(f"{path / MANIFEST_FILE}: checkpoint manifest not found") from exc
    except json.JSONDecodeError as exc:
        raise DatasetIOError(f"{path / MANIFEST_FILE}: corrupt manifest ({exc})") from exc
    records = cmt.load(path / WEIGHTS_FILE)
    entries = manifest.get("tensors", [])
    if len(records) != len(entries):
        raise DatasetIOError(f"{path / WEIGHTS_FILE}: {len(records)} tensors but manifest lists {len(entries)}")
    arrays = {}
    for entry, arr in zip(entries, records):
        if list(arr.shape) != list(entry["shape"]):
            raise DatasetIOError(f"{path / WEIGHTS_FILE}: tensor '{entry['name']}' has shape {arr.shape}")
        arrays[entry["name"]] = arr
    return manifest, arrays


def load_checkpoint(path):
    """Rebuild the bundle stored at ``path``; returns (bundle, manifest, arrays)."""
    manifest, arrays = read_checkpoint(path)
    bundle = GeneratorBundle(
        Manifold(manifest["manifold"]), NetConfig.from_dict(manifest["net"]), cycle=manifest["cycle"]
    )
    bundle.load_state_dict(arrays)
    return bundle, manifest, arrays
