"""Losses, generator/discriminator objectives, ablation modes and the training loop.

The L2 norm of the losses is a per-element mean square, and L1 a mean
absolute error, so weights do not depend on resolution.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from .guidance import GuidanceModel, Manifold, TWO_PI, delta_projected, make_guidance, project_values
from .networks import Direction, GeneratorBundle, NetConfig, PhiNetA, PhiNetPair, decode_head, split_rows, translate
from .numerics import ops
from .numerics.nn import frozen
from .numerics.optim import Adam
from .numerics.tensor import Tensor, backward, no_grad


class Mode(str, enum.Enum):
    ATTACHED = "attached"
    DETACHED = "detached"
    CONFUSION = "confusion"


class Ablation(str, enum.Enum):
    NONE = "none"
    NO_LM = "no_lm"
    NO_LPHI = "no_lphi"
    EDIT_ONLY = "edit_only"


class FinEncoding(str, enum.Enum):
    """How the task coordinate reaches the FIN layers.

    ``native`` passes it unchanged.  ``linear`` maps a cyclic coordinate onto
    the day-to-night segment (1 - cos phi) / 2 and trains linear FIN on it.
    """

    NATIVE = "native"
    LINEAR = "linear"


def _const(a) -> Tensor:
    return a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=np.float32))


# -- individual losses --------------------------------------------------------------

def loss_adv_g(d_scores: Tensor) -> Tensor:
    """LSGAN generator loss: mean of (D(y) - 1)^2."""
    return ops.l2_distance(d_scores, Tensor(np.ones(d_scores.shape, dtype=d_scores.dtype)))


def loss_model(y_m: Tensor, target) -> Tensor:
    """L1 between the mimicry output and the (constant) guidance output."""
    return ops.l1_distance(y_m, _const(target).detach())


def loss_phi(phinet: PhiNetPair, y: Tensor, y_model, y_model_prime, dphi_proj) -> tuple:
    """(L_phi_G, L_gt) with deltas in projected space.

    ``dphi_proj`` has shape (N, dim) where dim matches the phi-Net head.
    """
    dphi = np.asarray(dphi_proj, dtype=np.float32).reshape(y.shape[0], -1)
    if dphi.shape[1] != phinet.manifold.projected_dim:
        raise ContractError(
            f"loss_phi: delta has {dphi.shape[1]} components, {phinet.manifold.value} phi-Net expects "
            f"{phinet.manifold.projected_dim}"
        )
    ym, ymp = _const(y_model).detach(), _const(y_model_prime).detach()
    target = Tensor(dphi)
    zeros = Tensor(np.zeros_like(dphi))
    l_phi_g = ops.add(ops.l2_distance(phinet(y, ym), zeros), ops.l2_distance(phinet(y, ymp), target))
    l_gt = ops.l2_distance(phinet(ym, ymp), target)
    return l_phi_g, l_gt


def loss_phi_g(phinet: PhiNetPair, y: Tensor, y_model, y_model_prime, dphi_proj) -> Tensor:
    """Only the generator-facing half of :func:`loss_phi`."""
    dphi = Tensor(np.asarray(dphi_proj, dtype=np.float32).reshape(y.shape[0], -1))
    ym, ymp = _const(y_model).detach(), _const(y_model_prime).detach()
    zeros = Tensor(np.zeros(dphi.shape, dtype=np.float32))
    return ops.add(ops.l2_distance(phinet(y, ym), zeros), ops.l2_distance(phinet(y, ymp), dphi))


def loss_gt(phinet: PhiNetPair, y_model, y_model_prime, dphi_proj) -> Tensor:
    dphi = Tensor(np.asarray(dphi_proj, dtype=np.float32).reshape(np.shape(y_model)[0], -1))
    return ops.l2_distance(phinet(_const(y_model).detach(), _const(y_model_prime).detach()), dphi)


def loss_reg(phinet_a: PhiNetA, y: Tensor, phi_values) -> Tensor:
    """Squared error between phi-Net_A(y) and the projected phi that produced y."""
    target = project_values(phi_values, phinet_a.manifold).astype(np.float32)
    return ops.l2_distance(phinet_a(y), Tensor(target))


def loss_identity(bundle: GeneratorBundle, x, phi0=None) -> Tensor:
    """L1 between G(x, phi0) and x."""
    x = _const(x)
    phi0 = bundle.anchor if phi0 is None else phi0
    y, _ = translate(bundle, x, phi0, need_model=False)
    return ops.l1_distance(y, x.detach())


def loss_disc(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """LSGAN discriminator loss: mean D(fake)^2 + mean (D(real) - 1)^2."""
    zeros = Tensor(np.zeros(d_fake.shape, dtype=d_fake.dtype))
    ones = Tensor(np.ones(d_real.shape, dtype=d_real.dtype))
    return ops.add(ops.l2_distance(d_fake, zeros), ops.l2_distance(d_real, ones))


def loss_cycle(bundle: GeneratorBundle, x, y_real, phi, phi_est, *, y_fake: Tensor | None = None) -> Tensor:
    """X->Y->X reconstruction at phi0 plus Y->X->Y reconstruction at phi_est.

    ``y_fake`` reuses an already computed G(x, phi).
    """
    if not bundle.cycle:
        raise ContractError("loss_cycle requires a cycle-mode bundle")
    x, y_real = _const(x), _const(y_real)
    if y_fake is None:
        y_fake, _ = translate(bundle, x, phi, need_model=False)
    anchor = bundle.anchor
    x_rec, _ = translate(bundle, y_fake, anchor, direction=Direction.BACKWARD, need_model=False)
    x_back, _ = translate(bundle, y_real, anchor, direction=Direction.BACKWARD, need_model=False)
    y_rec, _ = translate(bundle, x_back, phi_est, need_model=False)
    return ops.add(ops.l1_distance(x_rec, x.detach()), ops.l1_distance(y_rec, y_real.detach()))


def loss_edit(y: Tensor, y_model, lam: float) -> Tensor:
    return ops.scale(ops.l1_distance(y, _const(y_model).detach()), float(lam))


# -- configuration ------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    w_adv: float = 1.0
    w_M: float = 10.0
    w_phi: float = 1.0
    w_idt: float = 5.0
    w_reg: float = 1.0
    w_cyc: float = 10.0


@dataclass(frozen=True)
class TrainConfig:
    mode: Mode = Mode.ATTACHED
    manifold: Manifold = Manifold.LINEAR
    cycle: bool | None = None
    guidance: str = "brightness"
    guidance_params: dict = field(default_factory=dict)
    fin_encoding: FinEncoding = FinEncoding.NATIVE
    weights: LossWeights = LossWeights()
    ablation: Ablation = Ablation.NONE
    edit_lambda: float = 5.0
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    image_size: int = 32
    lr: float = 2e-4
    betas: tuple = (0.5, 0.999)
    net: NetConfig = NetConfig()

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "manifold", Manifold(self.manifold))
        object.__setattr__(self, "ablation", Ablation(self.ablation))
        object.__setattr__(self, "fin_encoding", FinEncoding(self.fin_encoding))
        object.__setattr__(self, "betas", tuple(self.betas))

    # derived switches
    @property
    def use_cycle(self) -> bool:
        if self.cycle is None:
            return self.mode is Mode.ATTACHED and self.manifold is Manifold.CYCLIC
        return bool(self.cycle)

    @property
    def use_model_loss(self) -> bool:
        return self.ablation in (Ablation.NONE, Ablation.NO_LPHI)

    @property
    def use_phi_loss(self) -> bool:
        return self.ablation in (Ablation.NONE, Ablation.NO_LM)

    @property
    def use_identity(self) -> bool:
        return self.mode is Mode.ATTACHED

    @property
    def net_manifold(self) -> Manifold:
        """Manifold seen by FIN and both phi regressors."""
        return Manifold.LINEAR if self.fin_encoding is FinEncoding.LINEAR else self.manifold

    def to_net_coordinate(self, phi_values) -> np.ndarray:
        v = np.asarray(phi_values, dtype=np.float64)
        if self.fin_encoding is FinEncoding.LINEAR and self.manifold is Manifold.CYCLIC:
            return (1.0 - np.cos(v)) / 2.0
        return v

    def guidance_model(self) -> GuidanceModel:
        return make_guidance(self.guidance, **self.guidance_params)

    def problems(self) -> list:
        out = []
        w = self.weights
        for f in fields(LossWeights):
            value = getattr(w, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                out.append(f"weights.{f.name} must be a finite non-negative number, got {value!r}")
        if self.ablation is Ablation.EDIT_ONLY:
            if w.w_M != 0:
                out.append(f"ablation edit_only requires weights.w_M = 0, got {w.w_M}")
            if w.w_phi != 0:
                out.append(f"ablation edit_only requires weights.w_phi = 0, got {w.w_phi}")
            if not self.edit_lambda > 0:
                out.append(f"ablation edit_only requires edit_lambda > 0, got {self.edit_lambda}")
        if self.mode is Mode.CONFUSION and self.cycle:
            out.append("mode confusion has no source/target split, so cycle must be off")
        if self.fin_encoding is FinEncoding.LINEAR and self.manifold is not Manifold.CYCLIC:
            out.append("fin_encoding linear only applies to a cyclic task manifold")
        gm = None
        try:
            gm = self.guidance_model()
        except (ValueError, TypeError) as exc:
            out.append(f"guidance: {exc}")
        if gm is not None and gm.manifold is not self.manifold:
            out.append(f"guidance '{self.guidance}' lives on a {gm.manifold.value} manifold, config says {self.manifold.value}")
        for name in ("epochs", "batch_size", "image_size"):
            value = getattr(self, name)
            if not (isinstance(value, int) and value >= 1):
                out.append(f"{name} must be a positive integer, got {value!r}")
        if isinstance(self.image_size, int) and self.image_size % 8:
            out.append(f"image_size must be a multiple of 8, got {self.image_size}")
        if not (isinstance(self.lr, (int, float)) and self.lr >= 0):
            out.append(f"lr must be non-negative, got {self.lr!r}")
        return out

    def validate(self) -> "TrainConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    @classmethod
    def edit_only(cls, lam: float = 5.0, **kw) -> "TrainConfig":
        base = kw.pop("weights", LossWeights())
        return cls(ablation=Ablation.EDIT_ONLY, edit_lambda=lam, weights=replace(base, w_M=0.0, w_phi=0.0), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("mode", "manifold", "ablation", "fin_encoding"):
            d[key] = getattr(self, key).value
        d["betas"] = list(self.betas)
        d["net"] = self.net.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "net" in d:
            d["net"] = NetConfig.from_dict(d["net"])
        try:
            return cls(**d)
        except ValueError as exc:
            raise ConfigError([str(exc)]) from exc


# -- generator objective --------------------------------------------------------------

LOSS_KEYS = ("adv", "M", "phi", "idt", "reg", "cyc", "edit")


@dataclass
class LossParts:
    """Unweighted generator loss components; unused parts stay 0."""

    adv: object = 0.0
    M: object = 0.0
    phi: object = 0.0
    idt: object = 0.0
    reg: object = 0.0
    cyc: object = 0.0
    edit: object = 0.0


def objective_terms(cfg: TrainConfig) -> dict:
    """Weight applied to each part under ``cfg``; absent parts are not listed."""
    w = cfg.weights
    terms = {"adv": w.w_adv}
    if cfg.ablation is Ablation.EDIT_ONLY:
        terms["edit"] = 1.0  # lambda is inside loss_edit
    else:
        if cfg.use_model_loss:
            terms["M"] = w.w_M
        if cfg.use_phi_loss:
            terms["phi"] = w.w_phi
        if cfg.use_cycle:
            terms["reg"] = w.w_reg
    if cfg.use_identity:
        terms["idt"] = w.w_idt
    if cfg.use_cycle:
        terms["cyc"] = w.w_cyc
    return terms


def generator_objective(cfg: TrainConfig, parts: LossParts):
    """Weighted sum of the active parts; Tensors stay differentiable, floats stay floats."""
    cfg.validate()
    total = 0.0
    for key, weight in objective_terms(cfg).items():
        part = getattr(parts, key)
        if isinstance(part, Tensor):
            term = ops.scale(part, weight)
            total = term if not isinstance(total, Tensor) and total == 0.0 else ops.add(total, term)
        else:
            total = total + weight * float(part)
    return total


# -- training -----------------------------------------------------------------------

METRIC_COLUMNS = ("step", "l_adv_g", "l_m", "l_phi", "l_gt", "l_reg", "l_idt", "l_cyc", "l_d")


@dataclass
class TrainState:
    cfg: TrainConfig
    bundle: GeneratorBundle
    opt_g: Adam
    opt_phinet: Adam | None
    opt_phinet_a: Adam
    opt_d: Adam
    step: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)

    def optimizers(self) -> dict:
        out = {"g": self.opt_g, "phinet_a": self.opt_phinet_a, "d": self.opt_d}
        if self.opt_phinet is not None:
            out["phinet"] = self.opt_phinet
        return out


def init_state(cfg: TrainConfig, *, seed: int | None = None) -> TrainState:
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    bundle = GeneratorBundle(cfg.net_manifold, cfg.net, cycle=cfg.use_cycle, seed=seed)
    kw = dict(lr=cfg.lr, betas=cfg.betas)
    gen_params = bundle.generator_parameters(with_model_branch=cfg.use_model_loss)
    return TrainState(
        cfg=cfg,
        bundle=bundle,
        opt_g=Adam(gen_params, **kw),
        opt_phinet=Adam(bundle.phinet.parameters(), **kw) if cfg.use_phi_loss else None,
        opt_phinet_a=Adam(bundle.phinet_a.parameters(), **kw),
        opt_d=Adam(bundle.disc.parameters(), **kw),
    )


class _Terms:
    """Evaluates named loss terms, turning numeric failures into a named diagnostic."""

    def __init__(self, step: int):
        self.step = step

    def __call__(self, name, fn, *args, **kwargs):
        try:
            value = fn(*args, **kwargs)
        except NumericError as exc:
            raise NumericError(f"loss term '{name}' failed at step {self.step}: {exc}") from exc
        if isinstance(value, Tensor) and not np.isfinite(value.data).all():
            raise NumericError(f"loss term '{name}' is non-finite at step {self.step}")
        return value


def _backward(loss: Tensor, name: str, step: int):
    try:
        backward(loss)
    except NumericError as exc:
        raise NumericError(f"backward of '{name}' failed at step {step}: {exc}") from exc


def _step_phi_values(cfg: TrainConfig, rng: np.random.Generator, n: int):
    span = cfg.manifold.span
    phi = rng.uniform(0.0, span, size=n)
    phi_prime = rng.uniform(0.0, span, size=n)
    if cfg.manifold is Manifold.CYCLIC:
        phi, phi_prime = phi % TWO_PI, phi_prime % TWO_PI
    return phi, phi_prime


def train_batch(state: TrainState, x: np.ndarray, y_real: np.ndarray, rng: np.random.Generator, depth=None) -> dict:
    """One full update: generator, phi-Net, phi-Net_A, discriminator.  Returns scalar losses."""
    cfg, b = state.cfg, state.bundle
    terms = _Terms(state.step)
    n = x.shape[0]
    gm = cfg.guidance_model()
    phi, phi_prime = _step_phi_values(cfg, rng, n)
    net_phi, net_phi_prime = cfg.to_net_coordinate(phi), cfg.to_net_coordinate(phi_prime)
    # guidance targets are constants built outside the tape
    y_model = gm.apply_batch(x, phi, depth)
    need_prime = cfg.use_phi_loss
    y_model_prime = gm.apply_batch(x, phi_prime, depth) if need_prime else None
    dphi = delta_projected(net_phi, net_phi_prime, cfg.net_manifold) if need_prime else None
    xt, yt = Tensor(x), Tensor(y_real)
    metrics = {}

    # generator step (phi-Net also collects gradient from L_phi_G)
    state.opt_g.zero_grad()
    if state.opt_phinet is not None:
        state.opt_phinet.zero_grad()
    frozen_mods = [b.disc, b.phinet_a] + ([] if cfg.use_phi_loss else [b.phinet])
    with frozen(*frozen_mods):
        h_x = terms("encoder", b.encoder, xt)
        h_y, h_ym = terms("drb", b.drb, h_x, net_phi, need_model=cfg.use_model_loss)
        y = terms("decoder", b.decoder, h_y)
        parts = LossParts()
        parts.adv = terms("adv", lambda: loss_adv_g(b.disc(y)))
        if cfg.use_model_loss:
            parts.M = terms("M", lambda: loss_model(b.decoder(h_ym), y_model))
        if cfg.use_phi_loss:
            parts.phi = terms("phi", loss_phi_g, b.phinet, y, y_model, y_model_prime, dphi)
        if cfg.ablation is Ablation.EDIT_ONLY:
            parts.edit = terms("edit", loss_edit, y, y_model, cfg.edit_lambda)
        if cfg.use_identity:
            parts.idt = terms("idt", lambda: ops.l1_distance(b.decoder(b.drb(h_x, b.anchor, need_model=False)[0]), xt))
        if cfg.use_cycle:
            if "reg" in objective_terms(cfg):
                parts.reg = terms("reg", loss_reg, b.phinet_a, y, net_phi)
            with no_grad():
                est = b.phinet_a(yt).data
            phi_est = decode_head(est, cfg.net_manifold)
            parts.cyc = terms("cyc", loss_cycle, b, xt, yt, net_phi, phi_est, y_fake=y)
        total = terms("generator", generator_objective, cfg, parts)
        _backward(total, "generator", state.step)
    state.opt_g.step()
    if state.opt_phinet is not None:
        state.opt_phinet.step()
    for key, col in (("adv", "l_adv_g"), ("M", "l_m"), ("phi", "l_phi"), ("idt", "l_idt"), ("reg", "l_reg"), ("cyc", "l_cyc")):
        part = getattr(parts, key)
        metrics[col] = float(part.data) if isinstance(part, Tensor) else float(part)
    if cfg.ablation is Ablation.EDIT_ONLY:
        metrics["l_edit"] = float(parts.edit.data)
    y_det = y.detach()

    # phi-Net on modeled pairs only
    if state.opt_phinet is not None:
        state.opt_phinet.zero_grad()
        l_gt = terms("gt", loss_gt, b.phinet, y_model, y_model_prime, dphi)
        _backward(l_gt, "gt", state.step)
        state.opt_phinet.step()
        metrics["l_gt"] = float(l_gt.data)
    else:
        metrics["l_gt"] = 0.0

    # phi-Net_A: modeled images with their phi, plus generated images with the phi that made them
    state.opt_phinet_a.zero_grad()
    pair = Tensor(np.concatenate([y_model, y_det.data], axis=0))
    l_a = terms("phinet_a", loss_reg, b.phinet_a, pair, np.concatenate([net_phi, net_phi]))
    _backward(l_a, "phinet_a", state.step)
    state.opt_phinet_a.step()
    metrics["l_phinet_a"] = float(l_a.data)

    # discriminator on detached fakes and real targets in one pass
    state.opt_d.zero_grad()
    def disc_loss():
        scores = b.disc(Tensor(np.concatenate([y_det.data, y_real], axis=0)))
        d_fake, d_real = split_rows(ops.reshape(scores, (2 * n, -1)), n)
        return loss_disc(d_real, d_fake)

    l_d = terms("d", disc_loss)
    _backward(l_d, "d", state.step)
    state.opt_d.step()
    metrics["l_d"] = float(l_d.data)
    state.step += 1
    return metrics


def train_epoch(state: TrainState, dataset, cfg: TrainConfig | None, rng: np.random.Generator) -> dict:
    """One pass over the source set; returns per-loss running means plus the global step."""
    cfg = state.cfg if cfg is None else cfg
    if cfg is not state.cfg:
        state.cfg = cfg
    view = dataset.training_view()
    n_src = view.source_count
    order = rng.permutation(n_src)
    sums, batches = {}, 0
    bs = cfg.batch_size
    for start in range(0, n_src - bs + 1 if n_src >= bs else 1, bs):
        idx = order[start : start + bs]
        x, depth = view.source_batch(idx)
        y_real = view.target_batch(rng.integers(0, view.target_count, size=len(idx)))
        m = train_batch(state, x, y_real, rng, depth)
        for k, v in m.items():
            sums[k] = sums.get(k, 0.0) + v
        batches += 1
    state.epoch += 1
    record = {"step": state.step, "epoch": state.epoch}
    record.update({k: v / max(batches, 1) for k, v in sums.items()})
    state.history.append(record)
    return record


def write_metrics(path, history) -> Path:
    """Metrics CSV; the declared columns first, extra diagnostics after."""
    path = Path(path)
    extra = sorted({k for rec in history for k in rec} - set(METRIC_COLUMNS))
    with path.open("w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(list(METRIC_COLUMNS) + extra)
        for rec in history:
            writer.writerow([rec.get(k, 0.0) for k in METRIC_COLUMNS] + [rec.get(k, "") for k in extra])
    return path


def train(cfg: TrainConfig, dataset, *, epochs: int | None = None, state: TrainState | None = None, log=None):
    """Train from scratch (or continue ``state``) for ``epochs`` epochs."""
    state = init_state(cfg) if state is None else state
    for _ in range(cfg.epochs if epochs is None else epochs):
        # one stream per epoch, so a resumed run replays the uninterrupted one
        rng = np.random.default_rng([cfg.seed, state.epoch])
        record = train_epoch(state, dataset, cfg, rng)
        if log is not None:
            log(record)
    return state
