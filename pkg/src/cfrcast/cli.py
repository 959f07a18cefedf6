"""``cfrcast`` command line: simulate, build-dataset, train, evaluate, covariance.

Settings resolve as flags > ``--config`` file > bundled profile (``paper`` by
default, which holds the published defaults).  Every command writes a
``<output>.manifest.json`` next to its main artifact with the effective
settings, seeds, SHA-256 hashes of inputs and outputs, and timings.

Exit codes: 0 success, 1 usage or configuration error, 2 data or file-format
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import load_dataset, load_series, save_dataset, save_series, split_train_test
from .errors import CfrcastError, ConfigError, DataError
from .eval import auc_csv, default_band, fresh_channel_check, per_step_mse, roc_csv, step_roc_curves
from .models import TrainConfig, build_classifier, build_predictor, fit, head_of, predict
from .nn import load_weights, save_weights
from .sim import ScenarioConfig, run_simulation
from .stats import band_power_series, count_deep_fades, fade_depth_db, normalized_covariance

log = logging.getLogger("cfrcast")

OUT_DIR_ENV = "CFRCAST_OUT_DIR"
SECTIONS = ("scenario", "runs", "dataset", "model", "train", "evaluate")
PROFILES = ("paper", "desk")


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# -- settings -------------------------------------------------------------------

def load_profile(name: str) -> dict:
    if name not in PROFILES:
        raise UsageError(f"unknown profile {name!r}; choose from {PROFILES}")
    text = resources.files("cfrcast").joinpath("profiles", f"{name}.json").read_text()
    return json.loads(text)


def _merge(base: dict, extra: dict, origin: str) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if key not in SECTIONS:
            raise ConfigError(f"{origin}: unknown section {key!r}; expected {SECTIONS}")
        if not isinstance(val, dict):
            raise ConfigError(f"{origin}: section {key!r} must be an object")
        out.setdefault(key, {}).update(val)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_settings(args) -> dict:
    settings = load_profile(args.profile)
    if args.config:
        try:
            extra = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(extra, dict):
            raise ConfigError("config file must hold a JSON object")
        settings = _merge(settings, extra, args.config)
    for item in args.set or []:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in SECTIONS or not name:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        settings.setdefault(section, {})[name] = _parse_value(value)
    ScenarioConfig.from_dict(settings.get("scenario", {}))  # validate early
    return settings


def _pick(flag, settings: dict, section: str, key: str, default=None):
    if flag is not None:
        return flag
    return settings.get(section, {}).get(key, default)


def scenario_for(settings: dict, seed: int) -> ScenarioConfig:
    return ScenarioConfig.from_dict({**settings.get("scenario", {}), "seed": int(seed)})


# -- artifacts ------------------------------------------------------------------------

def out_path(given: str | None, default_name: str) -> Path:
    base = Path(os.environ.get(OUT_DIR_ENV, "."))
    path = Path(given) if given else Path(default_name)
    if not path.is_absolute():
        path = base / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def manifest_path(artifact: Path) -> Path:
    return artifact.with_name(artifact.name + ".manifest.json")


def write_manifest(artifact: Path, command: str, settings: dict, outputs: list[Path],
                   inputs: list[Path], started: float, **extra) -> Path:
    doc = {
        "tool": "cfrcast",
        "version": __version__,
        "command": command,
        "argv": sys.argv[1:],
        "settings": settings,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "wall_seconds": round(time.perf_counter() - started, 3),
        **extra,
    }
    path = manifest_path(artifact)
    write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _read_manifest(artifact: Path) -> dict:
    path = manifest_path(artifact)
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError:
        return {}


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"no such file: {path}")
    return p


# -- commands -----------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    t_start = time.perf_counter()
    settings = resolve_settings(args)
    seeds = args.seed if args.seed else settings.get("runs", {}).get("seeds", [0])
    n_steps = _pick(args.steps, settings, "runs", "n_steps")
    if n_steps is None or int(n_steps) < 1:
        raise UsageError(f"--steps must be >= 1, got {n_steps}")
    n_steps = int(n_steps)
    pattern = args.out or "run_{seed}.cfr"
    if len(seeds) > 1 and "{seed}" not in pattern:
        raise UsageError("--out needs a {seed} placeholder when simulating several seeds")
    for seed in seeds:
        t0 = time.perf_counter()
        config = scenario_for(settings, seed)
        series = run_simulation(config, n_steps)
        path = out_path(pattern.format(seed=seed), "")
        save_series(series, path)
        depth = fade_depth_db(series)
        lo, hi = series.band_hz
        print(f"{path}: {len(series)} snapshots x {series.n_bins} bins, "
              f"band [{lo / 1e6:.4f}, {hi / 1e6:.4f}] MHz, "
              f"{count_deep_fades(series)} snapshots with a >= 20 dB fade, "
              f"deepest {np.nanmin(depth):.1f} dB")
        write_manifest(path, "simulate", {**settings, "scenario": config.to_dict()},
                       [path], [], t0, seed=int(seed), n_steps=n_steps,
                       fingerprint=config.fingerprint())
    log.info("simulated %d run(s) in %.1f s", len(seeds), time.perf_counter() - t_start)
    return 0


def cmd_build_dataset(args) -> int:
    started = time.perf_counter()
    settings = resolve_settings(args)
    ds = settings.get("dataset", {})
    t_len = int(_pick(args.t_len, settings, "dataset", "t_len"))
    span_d = int(_pick(args.span_d, settings, "dataset", "span_d"))
    n_train = int(_pick(args.n_train, settings, "dataset", "n_train_per_run"))
    n_test = int(_pick(args.n_test, settings, "dataset", "n_test_per_run"))
    percentile = float(_pick(args.percentile, settings, "dataset", "percentile", 10.0))
    paths = [_existing(p) for p in args.runs]
    runs = [load_series(p) for p in paths]
    split = split_train_test(runs, n_train, n_test, t_len, span_d, percentile=percentile)
    out = out_path(args.out, "dataset.cfrd")
    save_dataset(split, out)
    run_seeds = [m["seed"] for m in map(_read_manifest, paths) if "seed" in m]
    eff = {**ds, "t_len": t_len, "span_d": span_d, "n_train_per_run": n_train,
           "n_test_per_run": n_test, "percentile": percentile}
    write_manifest(out, "build-dataset", {**settings, "dataset": eff}, [out], paths, started,
                   run_seeds=run_seeds,
                   run_fingerprints=[r.scenario_fingerprint for r in runs],
                   scale=split.scale, threshold=split.threshold)
    print(f"{out}: train {split.x_train.shape}, test {split.x_test.shape}, "
          f"scale {split.scale:.9g}, threshold {split.threshold:.9g}")
    return 0


def cmd_train(args) -> int:
    started = time.perf_counter()
    settings = resolve_settings(args)
    data_path = _existing(args.dataset)
    split = load_dataset(data_path)
    out_k = _pick(args.output_kernel_t, settings, "model", "output_kernel_t")
    out_k = int(out_k) if out_k is not None else min(split.t_len, 64)
    build = build_predictor if args.head == "predictor" else build_classifier
    spec = build(split.span_d, split.t_len, output_kernel_t=out_k)
    cfg = TrainConfig(
        batch_size=int(_pick(args.batch_size, settings, "train", "batch_size", 64)),
        epochs=int(_pick(args.epochs, settings, "train", "epochs", 30)),
        lr=float(_pick(args.lr, settings, "train", "lr", 0.003)),
        seed=int(_pick(args.seed, settings, "train", "seed", 0)))
    net = spec.init(cfg.seed)

    def progress(epoch, tr, te):
        print(f"epoch {epoch}/{cfg.epochs} train {tr:.6g} test {te:.6g}", flush=True)

    net, tlog = fit(net, split, cfg, progress=progress)
    out = out_path(args.out, f"{args.head}.cnnw")
    save_weights(net, out)
    log_path = out_path(args.log, "") if args.log else out.with_name(out.stem + ".log.csv")
    write_text(log_path, tlog.to_csv())
    eff = {**settings, "model": {"output_kernel_t": out_k, "head": args.head, "n_params": spec.n_params},
           "train": {"batch_size": cfg.batch_size, "epochs": cfg.epochs, "lr": cfg.lr, "seed": cfg.seed}}
    write_manifest(out, "train", eff, [out, log_path], [data_path], started)
    return 0


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    settings = resolve_settings(args)
    w_path, d_path = _existing(args.weights), _existing(args.dataset)
    net = load_weights(w_path)
    split = load_dataset(d_path)
    head = head_of(net)
    extra: dict = {}
    if args.mode == "fresh":
        if head != "predictor":
            raise UsageError("fresh mode needs predictor weights")
        seed = int(_pick(args.fresh_seed, settings, "evaluate", "fresh_seed"))
        n_ex = int(_pick(args.fresh_examples, settings, "evaluate", "fresh_examples", 4096))
        config = scenario_for(settings, seed)
        meta = _read_manifest(d_path)
        if seed in meta.get("run_seeds", []) or config.fingerprint() in meta.get("run_fingerprints", []):
            raise UsageError(f"fresh seed {seed} was used for the training runs")
        series = run_simulation(config, n_ex + split.t_len + split.span_d - 1)
        report = fresh_channel_check(net, series, split)
        text = report.to_csv()
        extra = {"fresh_seed": seed, "fresh_examples": n_ex, "flatness": report.flatness()}
        summary = f"fresh-channel MSE per step, max/min {report.flatness():.4g}"
    else:
        x = split.x_test if args.part == "test" else split.x_train
        y = split.labels(head, args.part)
        pred = predict(net, x)
        if args.mode == "mse":
            if head != "predictor":
                raise UsageError("mse mode needs predictor weights")
            report = per_step_mse(pred, y)
            text = report.to_csv()
            summary = f"{args.part} MSE per step, overall {report.overall():.6g}"
        else:
            if head != "classifier":
                raise UsageError("roc mode needs classifier weights")
            band = None if args.pool else (args.band if args.band is not None else default_band(split.n_bins))
            if band is not None and not 0 <= band < split.n_bins:
                raise UsageError(f"--band must lie in [0, {split.n_bins})")
            curves = step_roc_curves(pred, y, band)
            text = roc_csv(curves)
            extra = {"band": band, "auc": [c.auc for c in curves]}
            summary = "AUC per step: " + " ".join(f"{c.auc:.4f}" for c in curves)
    out = out_path(args.out, f"{args.mode}.csv")
    write_text(out, text)
    outputs = [out]
    if args.mode == "roc":
        auc_path = out.with_name(out.stem + ".auc.csv")
        write_text(auc_path, auc_csv(curves))
        outputs.append(auc_path)
    write_manifest(out, f"evaluate {args.mode}", settings, outputs, [w_path, d_path], started, **extra)
    print(summary)
    sys.stdout.write(text)
    return 0


def cmd_covariance(args) -> int:
    started = time.perf_counter()
    settings = resolve_settings(args)
    paths = [_existing(args.run_a)] + ([_existing(args.run_b)] if args.run_b else [])
    a = load_series(paths[0])
    if args.max_lag < 0 or args.max_lag >= len(a):
        raise UsageError(f"--max-lag must lie in [0, {len(a) - 1}] for a {len(a)}-snapshot series")
    pa = band_power_series(a)
    if args.run_b:
        b = load_series(paths[1])
        if len(b) != len(a):
            raise DataError("series lengths differ")
        prof = normalized_covariance(pa, band_power_series(b), args.max_lag,
                                     estimator=args.estimator, kind="cross")
        summary = f"max |R| = {prof.max_abs():.4f}"
    else:
        prof = normalized_covariance(pa, pa, args.max_lag, estimator=args.estimator, kind="auto")
        below = prof.first_lag_below(0.5)
        summary = f"R(0) = {prof.values[0]:.4f}, first lag below 0.5: {below}"
    out = out_path(args.out, f"{prof.kind}cov.csv")
    write_text(out, prof.to_csv())
    write_manifest(out, "covariance", settings, [out], paths, started,
                   max_lag=args.max_lag, estimator=args.estimator)
    print(summary)
    return 0


# -- parser ----------------------------------------------------------------------------------

def _settings_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", default="paper", help="bundled settings profile (paper|desk)")
    p.add_argument("--config", help="JSON settings file layered over the profile")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one setting, e.g. scenario.snr_db=20")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cfrcast", description="CFR simulation and prediction pipeline")
    parser.add_argument("--version", action="version", version=f"cfrcast {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate CFR series")
    _settings_flags(p)
    p.add_argument("--steps", type=int, help="snapshots per run")
    p.add_argument("--seed", type=int, action="append", help="run seed (repeatable)")
    p.add_argument("--out", help="output file; use {seed} for several seeds")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build-dataset", help="window runs into a train/test dataset")
    _settings_flags(p)
    p.add_argument("runs", nargs="+", help="series files")
    p.add_argument("--t-len", type=int)
    p.add_argument("--span-d", type=int)
    p.add_argument("--n-train", type=int, help="training examples per run")
    p.add_argument("--n-test", type=int, help="test examples per run")
    p.add_argument("--percentile", type=float, help="deep-fade threshold percentile")
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train a predictor or classifier")
    _settings_flags(p)
    p.add_argument("dataset")
    p.add_argument("--head", choices=("predictor", "classifier"), default="predictor")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-kernel-t", type=int)
    p.add_argument("--out", help="weight file")
    p.add_argument("--log", help="training log CSV (default: next to the weights)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="per-step MSE, ROC curves or fresh-channel check")
    _settings_flags(p)
    p.add_argument("weights")
    p.add_argument("dataset")
    p.add_argument("--mode", choices=("mse", "roc", "fresh"), default="mse")
    p.add_argument("--part", choices=("test", "train"), default="test")
    p.add_argument("--band", type=int, help="bin index for ROC (default: band centre)")
    p.add_argument("--pool", action="store_true", help="pool all bins for ROC")
    p.add_argument("--fresh-seed", type=int)
    p.add_argument("--fresh-examples", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("covariance", help="band-power auto/cross-covariance")
    _settings_flags(p)
    p.add_argument("run_a")
    p.add_argument("run_b", nargs="?")
    p.add_argument("--max-lag", type=int, default=100)
    p.add_argument("--estimator", choices=("unbiased", "biased"), default="unbiased")
    p.add_argument("--out")
    p.set_defaults(func=cmd_covariance)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CfrcastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
