"""Batch command line: data generation, training, sampling, sweeps and scoring.

Every command writes into ``--out`` and leaves a ``config.txt`` of the fully
resolved settings there; ``--config config.txt`` replays the run. Values
resolve as command-line flag, then config file, then built-in default.

Exit codes: 0 ok, 1 usage, 2 divergence, 3 missing artifact, 4 empty input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from contextlib import nullcontext

import numpy as np

from .checkpoint import load_container
from .data import RESOLUTIONS, TASKS, PairedDataset, load_dataset, make_gaussian_pairs, \
    make_toy_translation, read_image, save_dataset, write_image
from .denoiser import AnalyticGaussianDenoiser, DenoiserModel, load_checkpoint, save_checkpoint
from .errors import DivergenceError, ParseError
from .metrics import ScoreReport, TaskResult, evaluate_images, read_score_csv
from .pipeline import from_model_space, model_channels, sweep_images, to_model_space, train_image_bridge, \
    translate
from .sampler import SamplerConfig, best_row, write_sweep_csv
from .schedule import VpSchedule
from .trainer import TrainConfig, held_out_risk, train_loop

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_MISSING, EXIT_EMPTY = 0, 1, 2, 3, 4
THREADS_ENV = "BRIDGELAB_THREADS"
CONFIG_NAME = "config.txt"


class UsageError(Exception):
    pass


class MissingArtifact(Exception):
    pass


class EmptyInput(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"expected comma-separated integers, got {text!r}") from None


# (flag, type, default, help) per command; None default means "required".
_SCHEDULE = [
    ("beta-d", float, 2.0, "slope of the VP noise rate"),
    ("beta-min", float, 0.1, "intercept of the VP noise rate"),
]
_SAMPLER = [
    ("eta", float, 0.0, "stochasticity of the implicit sampler in [0, 1]"),
    ("karras-rho", float, 7.0, "spacing exponent of the time grid"),
    ("batch", int, 64, "sampling batch size"),
]
OPTIONS = {
    "make-data": [
        ("task", str, None, f"task tag: {', '.join(sorted(TASKS))}"),
        ("n", int, 64, "number of pairs"),
        ("res", int, 32, f"image side, one of {RESOLUTIONS}"),
    ],
    "train-bridge": [
        ("task", str, None, "'gaussian' or an image task tag"),
        ("data", str, "", "dataset directory (image tasks)"),
        ("iters", int, 2000, "training iterations"),
        ("batch", int, 0, "batch size (0: 256 for gaussian, 32 for images)"),
        ("lr", float, 2e-3, "learning rate"),
        ("optimizer", str, "adaptive-moments", "adaptive-moments or sgd-momentum"),
        ("width", int, 16, "base width of the image denoiser"),
        ("r", float, 0.8, "correlation of the gaussian task"),
        ("n-train", int, 100000, "training pairs of the gaussian task"),
        ("log-every", int, 10, "loss CSV row interval"),
        ("karras-rho", float, 7.0, "exponent of the training-time density"),
    ] + _SCHEDULE,
    "train-cut": [
        ("task", str, None, "image task tag"),
        ("data", str, None, "dataset directory"),
        ("iters", int, 500, "training iterations"),
        ("batch", int, 4, "batch size"),
        ("lr", float, 2e-4, "learning rate"),
        ("width", int, 16, "network base width"),
        ("lambda-gan", float, 0.5, "adversarial weight"),
        ("lambda-nce", float, 1.0, "contrastive weight"),
        ("tau", float, 0.1, "contrastive temperature"),
        ("log-every", int, 10, "loss CSV row interval"),
    ],
    "sample": [
        ("ckpt", str, None, "checkpoint file"),
        ("data", str, None, "dataset directory whose sources are translated"),
        ("nfe", int, 5, "sampling steps (one network call each)"),
        ("debug-endpoint", int, 0, "1: also dump D(x, T, x) per source"),
    ] + _SAMPLER,
    "sweep": [
        ("ckpt", str, None, "checkpoint file"),
        ("data", str, None, "evaluation dataset directory"),
        ("steps", _int_list, [1, 2, 5, 10, 20, 100], "comma-separated step counts"),
    ] + _SAMPLER,
    "eval": [
        ("task", str, "task", "task name in the report"),
        ("pred", str, "", "directory of predicted images (sorted by name)"),
        ("data", str, "", "dataset directory holding the targets"),
        ("from-csv", str, "", "score table with task,fid_norm,lpips,l1 columns"),
    ],
}
COMMANDS = tuple(OPTIONS)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bridgelab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, help=f"{name} command")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", default="", help="key=value file of defaults")
        p.add_argument("--seed", type=int, default=None, help="seed of all randomness (default 0)")
        for flag, typ, default, text in opts:
            shown = "required" if default is None else f"default {default}"
            p.add_argument(f"--{flag}", type=typ, default=None, help=f"{text} ({shown})")
    return parser


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("_", "-")] = value
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags, config file and defaults for ``args.command``."""
    file_cfg = read_config(args.config) if args.config else {}
    opts = OPTIONS[args.command] + [("seed", int, 0, "")]
    known = {flag for flag, *_ in opts} | {"command"}
    unknown = sorted(set(file_cfg) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    if file_cfg.get("command", args.command) != args.command:
        raise UsageError(f"config is for {file_cfg['command']!r}, not {args.command!r}")
    cfg = {}
    for flag, typ, default, _ in opts:
        value = getattr(args, flag.replace("-", "_"))
        if value is None and flag in file_cfg:
            try:
                value = typ(file_cfg[flag])
            except ValueError as e:
                raise UsageError(f"config key {flag}: {e}") from None
        if value is None:
            if default is None:
                raise UsageError(f"--{flag} is required")
            value = default
        cfg[flag] = value
    return cfg


def write_config(cfg: dict, command: str, out: str) -> None:
    lines = [f"command = {command}\n"]
    for key in sorted(cfg):
        v = cfg[key]
        v = ",".join(str(i) for i in v) if isinstance(v, list) else v
        lines.append(f"{key} = {v}\n")
    with open(os.path.join(out, CONFIG_NAME), "w") as f:
        f.writelines(lines)


def _schedule(cfg) -> VpSchedule:
    return VpSchedule(beta_d=cfg.get("beta-d", 2.0), beta_min=cfg.get("beta-min", 0.1))


def _need_file(path, what) -> None:
    if not path or not os.path.exists(path):
        raise MissingArtifact(f"{what} not found: {path!r}")


def _dataset(path) -> PairedDataset:
    _need_file(os.path.join(path, "manifest.txt") if path else "", "dataset manifest")
    ds = load_dataset(path)
    if len(ds) == 0:
        raise EmptyInput(f"dataset {path!r} has no pairs")
    return ds


def _write_images(imgs, folder) -> list[str]:
    os.makedirs(folder, exist_ok=True)
    ext = "pgm" if imgs.shape[1] == 1 else "ppm"
    names = []
    for i, img in enumerate(imgs):
        name = f"{i:05d}.{ext}"
        write_image(os.path.join(folder, name), img)
        names.append(name)
    return names


def _read_images(folder) -> np.ndarray:
    if not os.path.isdir(folder):
        raise MissingArtifact(f"prediction directory not found: {folder!r}")
    names = sorted(n for n in os.listdir(folder) if n.endswith((".pgm", ".ppm")))
    if not names:
        raise EmptyInput(f"no PGM/PPM images in {folder!r}")
    return np.stack([read_image(os.path.join(folder, n)) for n in names])


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# commands -----------------------------------------------------------------------------

def cmd_make_data(cfg, out) -> None:
    if cfg["task"] not in TASKS:
        raise UsageError(f"--task: unknown task {cfg['task']!r}; expected one of {sorted(TASKS)}")
    if cfg["res"] not in RESOLUTIONS:
        raise UsageError(f"--res must be one of {RESOLUTIONS}, got {cfg['res']}")
    if cfg["n"] < 0:
        raise UsageError("--n must be non-negative")
    ds = make_toy_translation(cfg["task"], cfg["n"], cfg["res"], cfg["seed"])
    save_dataset(ds, out)
    _log(f"wrote {len(ds)} {cfg['task']} pairs to {out}")


def cmd_train_bridge(cfg, out) -> None:
    sched = _schedule(cfg)
    task = cfg["task"]
    gaussian = task == "gaussian"
    if not gaussian and task not in TASKS:
        raise UsageError(f"--task: unknown task {task!r}")
    batch = cfg["batch"] or (256 if gaussian else 32)
    tc = TrainConfig(batch_size=batch, n_iterations=cfg["iters"], learning_rate=cfg["lr"],
                     optimizer=cfg["optimizer"], seed=cfg["seed"], log_every=cfg["log-every"],
                     karras_rho=cfg["karras-rho"])
    if gaussian:
        ds = make_gaussian_pairs(cfg["r"], cfg["n-train"], cfg["seed"])
        model = DenoiserModel.mlp(1, sched, seed=cfg["seed"])
        model, curve = train_loop(model, ds, tc, sched)
    else:
        ds = _dataset(cfg["data"])
        model, curve = train_image_bridge(ds, tc, sched, base_width=cfg["width"])
    save_checkpoint(model, os.path.join(out, "checkpoint.ckpt"), extra={"task": task})
    curve.write_csv(os.path.join(out, "loss.csv"))
    if gaussian:
        net, best = held_out_risk(model, AnalyticGaussianDenoiser(cfg["r"], sched), 200_000,
                                  cfg["seed"] + 1, sched, cfg["karras-rho"])
        with open(os.path.join(out, "heldout.json"), "w") as f:
            json.dump({"weighted_mse": round(net, 6), "oracle_risk": round(best, 6),
                       "ratio": round(net / best, 6)}, f, indent=2, sort_keys=True)
            f.write("\n")
        _log(f"held-out weighted MSE {net:.5f}, oracle risk {best:.5f}, ratio {net / best:.3f}")


def cmd_train_cut(cfg, out) -> None:
    from .cut import CutModel, CutWeights, save_cut, train_cut, write_cut_curve

    if cfg["task"] not in TASKS:
        raise UsageError(f"--task: unknown task {cfg['task']!r}")
    ds = _dataset(cfg["data"])
    c = model_channels(ds)
    model = CutModel.build(c, cfg["width"], seed=cfg["seed"],
                           weights=CutWeights(cfg["lambda-gan"], cfg["lambda-nce"]), tau=cfg["tau"],
                           learning_rate=cfg["lr"])
    src, tgt = to_model_space(ds.sources, c), to_model_space(ds.targets, c)
    rows = train_cut(model, src, tgt, cfg["iters"], cfg["batch"], cfg["seed"], cfg["log-every"])
    save_cut(model, os.path.join(out, "checkpoint.ckpt"))
    write_cut_curve(rows, os.path.join(out, "loss.csv"))
    if rows:
        _log(f"final loss_g {rows[-1][1]:.4f}, loss_d {rows[-1][2]:.4f}")


def _load_any(path):
    _need_file(path, "checkpoint")
    header, _ = load_container(path)
    if header.get("kind") == "cut":
        from .cut import load_cut

        return "cut", load_cut(path)
    model, extra = load_checkpoint(path)
    if model.topology["kind"] != "conv":
        raise UsageError("only image checkpoints can be sampled from the command line")
    return "bridge", model


def cmd_sample(cfg, out) -> None:
    kind, model = _load_any(cfg["ckpt"])
    ds = _dataset(cfg["data"])
    meta = {"n_steps": cfg["nfe"], "eta": cfg["eta"], "seed": cfg["seed"], "kind": kind,
            "n_images": len(ds)}
    start = time.perf_counter()
    if kind == "cut":
        src = to_model_space(ds.sources, model.gen.c_in)
        pred = from_model_space(model.translate(src), ds.tgt_channels)
        meta["n_steps"] = meta["nfe"] = 1
    else:
        sc = SamplerConfig(cfg["nfe"], cfg["eta"], cfg["seed"], cfg["karras-rho"])
        pred = translate(model, ds, sc, model.schedule, cfg["batch"])
        meta["nfe"] = cfg["nfe"]
    meta["wall_ms"] = round(1e3 * (time.perf_counter() - start), 3)
    _write_images(pred, os.path.join(out, "samples"))
    if kind == "bridge" and cfg["debug-endpoint"]:
        src = to_model_space(ds.sources, model.model_channels)
        t_end = model.schedule.t_max
        d = np.concatenate([model(src[i:i + cfg["batch"]], t_end, src[i:i + cfg["batch"]])
                            for i in range(0, len(src), cfg["batch"])])
        _write_images(from_model_space(d, ds.tgt_channels), os.path.join(out, "debug_endpoint"))
    with open(os.path.join(out, "metadata.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_sweep(cfg, out) -> None:
    kind, model = _load_any(cfg["ckpt"])
    if kind != "bridge":
        raise UsageError("sweep needs a bridge checkpoint")
    if not cfg["steps"]:
        raise UsageError("--steps must list at least one step count")
    ds = _dataset(cfg["data"])
    if len(ds) < 2:
        raise EmptyInput("the evaluation split needs at least 2 images")
    rows = sweep_images(model, ds, cfg["steps"], cfg["eta"], model.schedule, cfg["seed"],
                        cfg["karras-rho"], cfg["batch"])
    write_sweep_csv(rows, os.path.join(out, "sweep.csv"))
    best = best_row(rows)
    summary = f"best: n_steps={best.n_steps} score={best.score:.6f}"
    with open(os.path.join(out, "summary.txt"), "w") as f:
        f.write(summary + "\n")
    print(summary)


def cmd_eval(cfg, out) -> None:
    if cfg["from-csv"]:
        _need_file(cfg["from-csv"], "score table")
        report = read_score_csv(cfg["from-csv"])
    else:
        if not cfg["pred"] or not cfg["data"]:
            raise UsageError("eval needs --pred and --data, or --from-csv")
        ds = _dataset(cfg["data"])
        pred = _read_images(cfg["pred"])
        if pred.shape != ds.targets.shape:
            raise UsageError(f"predictions {pred.shape} do not match targets {ds.targets.shape}")
        m = evaluate_images(pred, ds.targets)
        report = ScoreReport([TaskResult(cfg["task"], m["fid_norm"], m["lpips"], m["l1"], "lpips_surrogate")])
    if not report.per_task and not report.n_unattempted:
        raise EmptyInput("no task rows to score")
    report.write_csv(os.path.join(out, "report.csv"))
    report.write_json(os.path.join(out, "report.json"))
    print(f"combined: {report.combined:.6f}")


HANDLERS = {"make-data": cmd_make_data, "train-bridge": cmd_train_bridge, "train-cut": cmd_train_cut,
            "sample": cmd_sample, "sweep": cmd_sweep, "eval": cmd_eval}


def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        os.makedirs(args.out, exist_ok=True)
        with _thread_limit():
            HANDLERS[args.command](cfg, args.out)
        write_config(cfg, args.command, args.out)
    except UsageError as e:
        _log(f"bridgelab {args.command}: error: {e}")
        return EXIT_USAGE
    except DivergenceError as e:
        _log(f"bridgelab {args.command}: diverged at index {e.index}: {e}")
        return EXIT_DIVERGED
    except (MissingArtifact, FileNotFoundError, ParseError) as e:
        _log(f"bridgelab {args.command}: missing or unreadable artifact: {e}")
        return EXIT_MISSING
    except EmptyInput as e:
        _log(f"bridgelab {args.command}: empty input: {e}")
        return EXIT_EMPTY
    except ValueError as e:
        _log(f"bridgelab {args.command}: error: {e}")
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
