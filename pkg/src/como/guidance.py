"""Manifold coordinates and closed-form guidance models.

Images handled here are float arrays in [0, 1] with the colour axis third
from the end, i.e. ``(3, H, W)`` or batches ``(N, 3, H, W)``.  Every model is a
pure function of ``(image, phi)`` and returns the input unchanged at its anchor.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

TWO_PI = 2.0 * math.pi
CYCLIC_GRID = 2.0**-21


class Manifold(str, enum.Enum):
    LINEAR = "linear"
    CYCLIC = "cyclic"

    @property
    def span(self) -> float:
        return 1.0 if self is Manifold.LINEAR else TWO_PI

    @property
    def projected_dim(self) -> int:
        return 1 if self is Manifold.LINEAR else 2


def wrap_angle(value):
    """Map angles into [0, 2*pi)."""
    out = np.mod(np.asarray(value, dtype=np.float64), TWO_PI)
    # mod can round up to exactly 2*pi for tiny negative inputs
    out = np.where(out >= TWO_PI, 0.0, out)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PhiValue:
    """A coordinate on a linear segment [0, 1] or on the circle [0, 2*pi)."""

    value: float
    manifold: Manifold = Manifold.LINEAR

    def __post_init__(self):
        manifold = Manifold(self.manifold)
        object.__setattr__(self, "manifold", manifold)
        v = float(self.value)
        if not math.isfinite(v):
            raise ContractError(f"phi must be finite, got {self.value}")
        if manifold is Manifold.CYCLIC:
            # snap to a 2^-21 grid (exact in float32) so phi and phi + 2*pi share one canonical value
            v = round(wrap_angle(v) / CYCLIC_GRID) * CYCLIC_GRID
            if v >= TWO_PI:
                v = 0.0
        elif not 0.0 <= v <= 1.0:
            raise ContractError(f"linear phi must lie in [0, 1], got {v}")
        object.__setattr__(self, "value", v)

    @classmethod
    def linear(cls, value):
        return cls(value, Manifold.LINEAR)

    @classmethod
    def cyclic(cls, value):
        return cls(value, Manifold.CYCLIC)

    def canonical(self) -> np.float32:
        """The value every numeric consumer sees; float32 rounding of the wrapped coordinate."""
        return np.float32(self.value)

    def shifted(self, delta: float) -> "PhiValue":
        """Manifold-aware addition; linear results are clipped to [0, 1]."""
        if self.manifold is Manifold.CYCLIC:
            return PhiValue(self.value + delta, self.manifold)
        return PhiValue(min(1.0, max(0.0, self.value + delta)), self.manifold)

    def __float__(self):
        return self.value


def phi_delta(a: PhiValue, b: PhiValue) -> float:
    """a - b; on the circle the signed wrapped difference in (-pi, pi]."""
    if a.manifold is not b.manifold:
        raise ContractError(f"phi_delta: manifolds differ ({a.manifold.value} vs {b.manifold.value})")
    if a.manifold is Manifold.LINEAR:
        return a.value - b.value
    return float(wrapped_difference(a.value, b.value))


def wrapped_difference(a, b):
    """Vectorised signed circular difference a - b in (-pi, pi]."""
    d = np.mod(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64), TWO_PI)
    d = np.where(d > math.pi, d - TWO_PI, d)
    return d if d.ndim else float(d)


def phi_project(phi: PhiValue) -> tuple:
    """(sin, cos) for cyclic phi; linear phi passes through as (phi, 0)."""
    if phi.manifold is Manifold.CYCLIC:
        v = phi.value
        return math.sin(v), math.cos(v)
    return phi.value, 0.0


def project_values(values, manifold: Manifold) -> np.ndarray:
    """Network-side projection of a batch of raw coordinates, shape (N, dim)."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if Manifold(manifold) is Manifold.CYCLIC:
        return np.stack([np.sin(v), np.cos(v)], axis=1)
    return v[:, None]


def delta_projected(phi, phi_prime, manifold: Manifold) -> np.ndarray:
    """Difference of projections, antisymmetric under swapping its arguments."""
    return project_values(phi, manifold) - project_values(phi_prime, manifold)


def decode_projection(head, manifold: Manifold) -> np.ndarray:
    """Inverse of :func:`project_values` for regressor outputs."""
    head = np.asarray(head, dtype=np.float64)
    if Manifold(manifold) is Manifold.CYCLIC:
        return wrap_angle(np.arctan2(head[:, 0], head[:, 1]))
    return np.clip(head[:, 0], 0.0, 1.0)


def sample_phi(manifold: Manifold, rng: np.random.Generator, size=None):
    """Uniform draw over the manifold's range."""
    manifold = Manifold(manifold)
    if size is None:
        if manifold is Manifold.CYCLIC:
            return PhiValue(rng.uniform(0.0, TWO_PI), manifold)
        return PhiValue(rng.uniform(0.0, 1.0), manifold)
    return rng.uniform(0.0, manifold.span, size=size) % manifold.span


# -- guidance models ------------------------------------------------------------

LUMA = np.array([0.2126, 0.7152, 0.0722], dtype=np.float32)
NIGHT_SKY = np.array([0.15, 0.2, 0.35], dtype=np.float32)
DAY_SKY = np.array([1.0, 1.0, 1.0], dtype=np.float32)
HUE_AXIS = np.array([1.0, 0.0, -1.0], dtype=np.float32)
AIRLIGHT = np.array([0.8, 0.8, 0.82], dtype=np.float32)
CONTRAST_THRESHOLD_LOG = 3.912  # -ln(0.02)
FOG_MIN_VISIBILITY_M = 70.0
BETA_MAX = CONTRAST_THRESHOLD_LOG / FOG_MIN_VISIBILITY_M


def _as_image(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim < 3 or x.shape[-3] != 3:
        raise ContractError(f"guidance expects (..., 3, H, W) images, got {x.shape}")
    return x


def _colour(vec):
    return np.asarray(vec, dtype=np.float32).reshape((3,) + (1,) * 2)


def _expect(phi: PhiValue, manifold: Manifold, name: str) -> np.float32:
    if not isinstance(phi, PhiValue):
        phi = PhiValue(phi, manifold)
    if phi.manifold is not manifold:
        raise ContractError(f"{name} requires {manifold.value} phi, got {phi.manifold.value}")
    return phi.canonical()


def darkening_weight(phi32) -> np.float32:
    return np.float32((1 - np.cos(phi32)) / 2)


def exposure(phi32) -> np.float32:
    return np.float32(0.1 + 0.9 * (1 + np.cos(phi32)) / 2)


def sky_colour(phi32) -> np.ndarray:
    a = darkening_weight(phi32)
    return (1 - a) * DAY_SKY + a * NIGHT_SKY


def hue_correction(phi32, kappa: float = 0.1) -> np.ndarray:
    """Warm shift at dusk (sin > 0), cold shift at dawn (sin < 0)."""
    return np.float32(kappa) * np.sin(phi32, dtype=np.float32) * HUE_AXIS


def tone_map(x: np.ndarray, colour: np.ndarray, phi32) -> np.ndarray:
    """Luminance-weighted tone map: exposure * luma(x) * colour."""
    luma = np.tensordot(LUMA, x, axes=([0], [x.ndim - 3]))
    luma = np.expand_dims(luma, axis=x.ndim - 3)
    return exposure(phi32) * luma * _colour(colour)


def guide_timelapse(x, phi: PhiValue, kappa: float = 0.1) -> np.ndarray:
    """Day-to-any-time model; phi = 0 is full day, pi is deep night."""
    x = _as_image(x)
    p = _expect(phi, Manifold.CYCLIC, "guide_timelapse")
    alpha = darkening_weight(p)
    corr = _colour(hue_correction(p, kappa))
    mapped = tone_map(x, sky_colour(p) + hue_correction(p, kappa), p)
    out = (1 - alpha) * x + alpha * mapped + corr
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _reflect_pad(x: np.ndarray, r: int) -> np.ndarray:
    # half-sample symmetric reflection (d c b a | a b c d | d c b a); keeps the spatial mean
    pad = [(0, 0)] * (x.ndim - 2) + [(r, r), (r, r)]
    return np.pad(x, pad, mode="symmetric")


def guide_blur(x, phi: PhiValue, sigma_max: float = 4.0) -> np.ndarray:
    """Separable Gaussian blur with sigma = sigma_max * phi."""
    x = _as_image(x)
    p = float(_expect(phi, Manifold.LINEAR, "guide_blur"))
    sigma = sigma_max * p
    if sigma == 0.0:
        return x.copy()
    k = gaussian_kernel1d(sigma)
    r = (len(k) - 1) // 2
    xp = _reflect_pad(x.astype(np.float64), r)
    h, w = x.shape[-2:]
    rows = sum(k[i] * xp[..., i : i + h, :] for i in range(len(k)))
    out = sum(k[j] * rows[..., :, j : j + w] for j in range(len(k)))
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def transmittance(phi32, depth) -> np.ndarray:
    return np.exp(-np.float32(phi32 * BETA_MAX) * np.asarray(depth, dtype=np.float32))


def guide_fog(x, phi: PhiValue, depth) -> np.ndarray:
    """Koschmieder fog: x * t + airlight * (1 - t), t = exp(-beta(phi) * depth)."""
    x = _as_image(x)
    p = _expect(phi, Manifold.LINEAR, "guide_fog")
    depth = np.asarray(depth, dtype=np.float32)
    if depth.shape[-2:] != x.shape[-2:]:
        raise ContractError(f"depth map {depth.shape} does not match image {x.shape}")
    if not (np.isfinite(depth).all() and (depth > 0).all()):
        raise ContractError("depth map must be finite and strictly positive")
    t = np.expand_dims(transmittance(p, depth), axis=-3)
    out = x * t + _colour(AIRLIGHT) * (1 - t)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def guide_brightness(x, phi: PhiValue) -> np.ndarray:
    x = _as_image(x)
    p = _expect(phi, Manifold.LINEAR, "guide_brightness")
    return np.clip(x * (1 - np.float32(0.9) * p), 0.0, 1.0).astype(np.float32)


REDNESS_TARGET = np.array([1.0, 0.2, 0.2], dtype=np.float32)


def guide_redness(x, phi: PhiValue) -> np.ndarray:
    x = _as_image(x)
    p = _expect(phi, Manifold.LINEAR, "guide_redness")
    out = x + p * (_colour(REDNESS_TARGET) - x)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


class GuidanceKind(str, enum.Enum):
    TIMELAPSE = "timelapse"
    BLUR = "blur"
    FOG = "fog"
    BRIGHTNESS = "brightness"
    REDNESS = "redness"


_MODELS = {
    GuidanceKind.TIMELAPSE: (guide_timelapse, Manifold.CYCLIC),
    GuidanceKind.BLUR: (guide_blur, Manifold.LINEAR),
    GuidanceKind.FOG: (guide_fog, Manifold.LINEAR),
    GuidanceKind.BRIGHTNESS: (guide_brightness, Manifold.LINEAR),
    GuidanceKind.REDNESS: (guide_redness, Manifold.LINEAR),
}


@dataclass(frozen=True)
class GuidanceModel:
    """A named guidance model with its manifold, anchor and parameters."""

    kind: GuidanceKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", GuidanceKind(self.kind))

    @property
    def manifold(self) -> Manifold:
        return _MODELS[self.kind][1]

    @property
    def anchor(self) -> PhiValue:
        return PhiValue(0.0, self.manifold)

    @property
    def needs_depth(self) -> bool:
        return self.kind is GuidanceKind.FOG

    def __call__(self, x, phi, depth=None) -> np.ndarray:
        fn = _MODELS[self.kind][0]
        if not isinstance(phi, PhiValue):
            phi = PhiValue(phi, self.manifold)
        if self.needs_depth:
            if depth is None:
                raise ContractError("fog guidance requires a depth map")
            return fn(x, phi, depth, **self.params)
        return fn(x, phi, **self.params)

    def apply_batch(self, x: np.ndarray, phis, depth=None) -> np.ndarray:
        """Apply per-sample phi values to an (N, 3, H, W) batch."""
        x = _as_image(x)
        out = np.empty_like(x)
        for i, v in enumerate(np.asarray(phis).reshape(-1)):
            d = None if depth is None else depth[i]
            out[i] = self(x[i], PhiValue(float(v), self.manifold), d)
        return out


def make_guidance(kind, **params) -> GuidanceModel:
    return GuidanceModel(GuidanceKind(kind), dict(params))
