"""Command-line entry point: ``como gen|train|translate|guide|eval``.

Errors are reported as one JSON line on stderr and mapped to exit codes:
2 for configuration problems, 3 for I/O problems, 4 for numeric failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .config import RunConfig, dataset_mismatch, load_config, parse_config
from .data import DatasetSpec, Domain, Task, depth_gradient, generate, load_dataset, read_png, save_dataset, write_png
from .errors import ConfigError, ContractError, DatasetIOError, NumericError
from .guidance import GuidanceKind, Manifold, PhiValue, make_guidance
from .networks import Relative, load_checkpoint, save_checkpoint, translate_agnostic
from .objectives import init_state, train_epoch, write_metrics

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    """Shows defaults for every flag, including ones whose default is None."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "%(default)" not in text and action.option_strings and action.nargs != 0:
            text += " (default: %(default)s)"
        return text


# -- gen ------------------------------------------------------------------------------

def cmd_gen(args) -> int:
    try:
        task = Task(args.task)
    except ValueError as exc:
        raise ConfigError([f"--task: {exc}"]) from exc
    val = args.val_count if args.val_count is not None else max(1, args.count // 4)
    try:
        spec = DatasetSpec(task, args.count, args.count, val, val, image_size=args.size, seed=args.seed)
    except ContractError as exc:
        raise ConfigError([str(exc)]) from exc
    ds = generate(spec)
    root = save_dataset(ds, args.out)
    _emit({"dataset": str(root), "task": task.value, "digest": ds.digest()})
    return EXIT_OK


# -- train ------------------------------------------------------------------------------

def _dataset_for(run: RunConfig):
    if run.data.path is not None:
        ds = load_dataset(run.data.path)
    else:
        ds = generate(run.data.spec())
    problems = dataset_mismatch(run.train, ds.task, ds.spec.image_size)
    if problems:
        raise ConfigError(problems)
    return ds


def _checkpoint(run_dir: Path, state, run: RunConfig) -> Path:
    arrays = {}
    for key, opt in state.optimizers().items():
        arrays.update(opt.state_arrays(f"opt.{key}"))
    path = run_dir / "checkpoints" / f"epoch_{state.epoch:04d}"
    save_checkpoint(
        path,
        state.bundle,
        step=state.step,
        config_hash=run.config_hash(),
        extra_arrays=arrays,
        extra={"epoch": state.epoch, "run_config": run.to_dict(), "history": state.history},
    )
    return path


def resolve_checkpoint(path) -> Path:
    """A checkpoint directory, or a run directory whose newest checkpoint is used."""
    path = Path(path)
    if (path / "manifest.json").exists():
        return path
    found = sorted((path / "checkpoints").glob("epoch_*")) if (path / "checkpoints").is_dir() else []
    if not found:
        raise DatasetIOError(f"{path}: no checkpoint found")
    return found[-1]


def _restore(ckpt: Path):
    bundle, manifest, arrays = load_checkpoint(ckpt)
    extra = manifest.get("extra", {})
    if "run_config" not in extra:
        raise DatasetIOError(f"{ckpt}: checkpoint carries no run configuration")
    run = parse_config(extra["run_config"])
    return bundle, manifest, arrays, run


def cmd_train(args) -> int:
    run = load_config(args.config)
    run_dir = run.run_dir(args.out)
    ds = _dataset_for(run)
    state = init_state(run.train)
    if args.resume:
        ckpt = resolve_checkpoint(args.resume)
        _, manifest, arrays, _ = _restore(ckpt)
        if manifest.get("config_hash") != run.config_hash():
            raise ConfigError([f"--resume: checkpoint config hash {manifest.get('config_hash')} differs from {run.config_hash()}"])
        state.bundle.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("opt.")})
        for key, opt in state.optimizers().items():
            opt.load_state_arrays(f"opt.{key}", arrays, manifest["step"])
        state.step = manifest["step"]
        state.epoch = manifest["extra"]["epoch"]
        state.history = list(manifest["extra"]["history"])
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(run.to_dict(), indent=1, sort_keys=True))
    last = None
    while state.epoch < run.train.epochs:
        rng = np.random.default_rng([run.train.seed, state.epoch])
        record = train_epoch(state, ds, None, rng)
        write_metrics(run_dir / "metrics.csv", state.history)
        if state.epoch % run.checkpoint_every == 0 or state.epoch == run.train.epochs:
            last = _checkpoint(run_dir, state, run)
        if not args.quiet:
            print(json.dumps(record), file=sys.stderr)
    if last is None:
        write_metrics(run_dir / "metrics.csv", state.history)
        last = _checkpoint(run_dir, state, run)
    _emit({"run_dir": str(run_dir), "checkpoint": str(last), "config_hash": run.config_hash(), "epochs": state.epoch})
    return EXIT_OK


# -- translate --------------------------------------------------------------------------

def _inputs(path) -> list:
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if not files:
            raise DatasetIOError(f"{path}: no PNG files")
        return files
    if not path.exists():
        raise DatasetIOError(f"{path}: input not found")
    return [path]


def _phi_value(value: float, manifold: Manifold, flag: str) -> PhiValue:
    try:
        return PhiValue(value, manifold)
    except ContractError as exc:
        raise ConfigError([f"{flag}: {exc}"]) from exc


def sweep_values(k: int, manifold: Manifold) -> np.ndarray:
    """k uniformly spaced phi values covering the manifold (endpoint excluded when cyclic)."""
    if Manifold(manifold) is Manifold.CYCLIC:
        return np.arange(k) * (2 * np.pi / k)
    return np.linspace(0.0, 1.0, k) if k > 1 else np.zeros(1)


def cmd_translate(args) -> int:
    ckpt = resolve_checkpoint(args.ckpt)
    bundle, manifest, _, run = _restore(ckpt)
    manifold = run.train.manifold
    if args.manifold is not None and Manifold(args.manifold) is not manifold:
        raise ConfigError([f"--manifold {args.manifold} does not match checkpoint manifold {manifold.value}"])
    if args.sweep is not None and args.sweep < 1:
        raise ConfigError([f"--sweep must be at least 1, got {args.sweep}"])
    files = _inputs(args.input)
    out = Path(args.out)
    many = Path(args.input).is_dir()
    if many:
        out.mkdir(parents=True, exist_ok=True)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    gen = ev.bundle_generator(bundle, run.train.to_net_coordinate)
    written = []
    for f in files:
        x = read_png(f)[None]
        target = out / f.name if many else out
        if args.sweep is not None:
            ev.emit_strip(gen, x, sweep_values(args.sweep, manifold), target)
        elif args.relative is not None:
            if run.train.fin_encoding.value != "native":
                raise ConfigError(["--relative needs a checkpoint trained with native FIN encoding"])
            try:
                y, _ = translate_agnostic(bundle, bundle.phinet_a, x, Relative(args.relative))
            except ContractError as exc:
                raise ConfigError([f"--relative: {exc}"]) from exc
            write_png(y[0], target)
        else:
            phi = _phi_value(args.phi, manifold, "--phi")
            write_png(gen(x, np.array([float(phi.value)]))[0], target)
        written.append(str(target))
    _emit({"written": written, "checkpoint": str(ckpt)})
    return EXIT_OK


# -- guide --------------------------------------------------------------------------------

def cmd_guide(args) -> int:
    try:
        model = make_guidance(args.model)
    except (ValueError, TypeError) as exc:
        raise ConfigError([f"--model: {exc}"]) from exc
    x = read_png(Path(args.input))
    phi = _phi_value(args.phi, model.manifold, "--phi")
    depth = None
    if model.needs_depth:
        if args.depth is not None:
            try:
                depth = np.load(args.depth)
            except (OSError, ValueError) as exc:
                raise DatasetIOError(f"{args.depth}: {exc}") from exc
        else:
            depth = depth_gradient(x.shape[1])
    try:
        y = model(x, phi, depth)
    except ContractError as exc:
        raise ConfigError([str(exc)]) from exc
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_png(y, Path(args.out))
    _emit({"written": args.out})
    return EXIT_OK


# -- eval -----------------------------------------------------------------------------------

METRICS = ("manifold", "rolling", "diversity", "dual")


def cmd_eval(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    bad = [m for m in metrics if m not in METRICS]
    if bad or not metrics:
        raise ConfigError([f"--metrics: unknown metric '{m}'" for m in bad] or ["--metrics: empty list"])
    ckpt = resolve_checkpoint(args.ckpt)
    bundle, manifest, _, run = _restore(ckpt)
    ds = load_dataset(args.dataset)
    if ds.manifold is not run.train.manifold:
        raise ConfigError([f"dataset manifold {ds.manifold.value} does not match checkpoint {run.train.manifold.value}"])
    opts = run.eval
    out = Path(args.out) / run.run_name / "eval"
    out.mkdir(parents=True, exist_ok=True)
    cfg = run.train
    gen = ev.bundle_generator(bundle, cfg.to_net_coordinate)
    extractor = ev.train_extractor(ds, seed=opts.extractor_seed, epochs=opts.extractor_epochs)
    src_domain = Domain.TARGET if ds.task is Task.DIGITS_CONFUSION else Domain.SOURCE
    src = ds.subset(src_domain, "val")
    tgt_val = ds.subset(Domain.TARGET, "val")
    tgt_train = ds.subset(Domain.TARGET, "train")
    real_images = np.concatenate([tgt_train.images, tgt_val.images])
    real_phi = np.concatenate([tgt_train.phi, tgt_val.phi])
    bins = ev.BinSpec(ds.manifold, opts.bins)
    summary = {
        "config_hash": run.config_hash(),
        "checkpoint": str(ckpt),
        "feature_space": ev.REPORT_HEADER,
        "extractor_seed": opts.extractor_seed,
        "metrics": {},
    }
    if "manifold" in metrics:
        mean, std = ev.manifold_error(bundle.phinet_a, tgt_val.images, cfg.to_net_coordinate(tgt_val.phi))
        summary["metrics"]["manifold_error"] = {"mean": mean, "std": std}
        with (out / "manifold.csv").open("w") as fp:
            fp.write(f"# {ev.REPORT_HEADER}\nmean,std,n\n{mean:.6f},{std:.6f},{len(tgt_val)}\n")
    if "rolling" in metrics:
        res = ev.rolling_frechet(gen, extractor, bins, real_images, real_phi, src.images, source_depth=src.depth, per_bin=opts.per_bin, seed=opts.seed)
        ev.write_rolling_csv(out / "rolling.csv", res)
        ev.plot_rolling(out / "rolling.png", {"translation": res})
        summary["metrics"]["rolling_frechet"] = {"mean": res.mean, **res.coverage()}
    if "diversity" in metrics:
        n = min(opts.diversity_images, len(src))
        rng = np.random.default_rng([opts.seed, 7])
        depth = None if src.depth is None else src.depth[:n]
        score = ev.diversity_score(gen, extractor, src.images[:n], opts.diversity_pairs, rng, manifold=ds.manifold, depth=depth)
        summary["metrics"]["diversity"] = score
        with (out / "diversity.csv").open("w") as fp:
            fp.write(f"# {ev.REPORT_HEADER}\nscore,images,pairs\n{score:.6f},{n},{opts.diversity_pairs}\n")
    if "dual" in metrics:
        real, model = ev.dual_distance(
            gen, extractor, bins, cfg.guidance_model(), real_images, real_phi, src.images, source_depth=src.depth, per_bin=opts.per_bin, seed=opts.seed
        )
        with (out / "dual.csv").open("w") as fp:
            fp.write(f"# {ev.REPORT_HEADER}\nbin_center,real_fd,model_fd\n")
            for c, r, m in zip(real.centers, real.scores, model.scores):
                fp.write(f"{c:.6f},{'' if np.isnan(r) else f'{r:.6f}'},{m:.6f}\n")
        ev.plot_rolling(out / "dual.png", {"vs real": real, "vs model": model}, title="Fréchet distance against real and model sets")
        summary["metrics"]["dual"] = {"real_mean": real.mean, "model_mean": model.mean}
    ev.emit_strip(gen, src.images[0], sweep_values(opts.sweep, ds.manifold), out / "strip.png", depth=None if src.depth is None else src.depth[0])
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    _emit({"eval_dir": str(out), **summary["metrics"]})
    return EXIT_OK


# -- plumbing --------------------------------------------------------------------------------

def _emit(payload: dict) -> None:
    print(json.dumps(payload, default=str))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="como", description="Continuous model-guided image translation on toy data.", formatter_class=_Formatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a toy dataset", formatter_class=_Formatter)
    p.add_argument("--task", required=True, help=f"one of: {', '.join(t.value for t in Task)}")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="generation seed")
    p.add_argument("--count", type=int, default=2000, help="training images per domain")
    p.add_argument("--val-count", type=int, default=None, help="validation images per domain; None means count // 4")
    p.add_argument("--size", type=int, default=None, help="image side in pixels; None means the task default")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a generator from a JSON run config", formatter_class=_Formatter)
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", default=None, help="output root; None means the config's 'out'")
    p.add_argument("--resume", default=None, help="checkpoint (or run) directory to continue from")
    p.add_argument("--quiet", action="store_true", help="suppress per-epoch progress on stderr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate PNG images with a trained checkpoint", formatter_class=_Formatter)
    p.add_argument("--ckpt", required=True, help="checkpoint or run directory")
    p.add_argument("--input", required=True, help="PNG file or directory of PNGs")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--phi", type=float, default=None, help="absolute target phi")
    target.add_argument("--relative", type=float, default=None, help="shift from the phi estimated by phi-Net_A")
    target.add_argument("--sweep", type=int, default=None, help="emit a strip of k uniformly spaced phi values")
    p.add_argument("--manifold", default=None, choices=[m.value for m in Manifold], help="expected manifold; checked against the checkpoint")
    p.add_argument("--out", required=True, help="output PNG (directory when the input is a directory)")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("guide", help="apply a guidance model to a PNG", formatter_class=_Formatter)
    p.add_argument("--model", required=True, help=f"one of: {', '.join(k.value for k in GuidanceKind)}")
    p.add_argument("--input", required=True, help="input PNG")
    p.add_argument("--phi", type=float, required=True, help="phi value on the model's manifold")
    p.add_argument("--depth", default=None, help="depth map (.npy, metres) for fog; None means a flat ground gradient")
    p.add_argument("--out", required=True, help="output PNG")
    p.set_defaults(func=cmd_guide)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset", formatter_class=_Formatter)
    p.add_argument("--ckpt", required=True, help="checkpoint or run directory")
    p.add_argument("--dataset", required=True, help="dataset directory written by 'gen'")
    p.add_argument("--metrics", default=",".join(METRICS), help="comma-separated subset of " + ",".join(METRICS))
    p.add_argument("--out", default="runs", help="output root; reports go to <out>/<config hash>/eval")
    p.set_defaults(func=cmd_eval)
    return parser


def _fail(code: int, kind: str, message: str, problems=None) -> int:
    payload = {"error": kind, "code": code, "message": message}
    if problems:
        payload["problems"] = problems
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors, which is also the config-error code
        return int(exc.code or 0)
    limit = os.environ.get("COMO_THREADS")
    if limit is not None and not (limit.isdigit() and int(limit) >= 1):
        return _fail(EXIT_CONFIG, "config", f"COMO_THREADS must be a positive integer, got {limit!r}")
    try:
        if limit:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=int(limit)):
                return args.func(args)
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc), exc.problems)
    except ContractError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    except (DatasetIOError, OSError) as exc:
        return _fail(EXIT_IO, "io", str(exc))


if __name__ == "__main__":
    sys.exit(main())
