"""Command-line entry point: ``spmkit <command> [options]``.

Exit codes: 0 ok, 2 configuration or input error, 3 plant singularity
during generation, 4 training divergence, 5 tracking failure, 6 scan
failure, 7 benchmark failure or rate below ``bench_min_hz``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import mechanism as mk
from .config import ConfigError, RunConfig, load_config
from .control import TrackingError, loop_benchmark, track, virtual_endpoint_series, write_endpoint_csv
from .mlp import AnalyticIk, Diverged, FormatError, VersionError, evaluate, load_model, save_model, train
from .plant import Dataset, PlantSingular, generate_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PLANT = 3
EXIT_DIVERGED = 4
EXIT_TRACK = 5
EXIT_SCAN = 6
EXIT_BENCH = 7


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class Run:
    """Per-invocation context: config, output directory, console."""

    def __init__(self, args):
        self.args = args
        self.cfg: RunConfig = load_config(args.config, args.seed)
        self.out = Path(args.out)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {self.out}: {exc}") from exc
        self.outputs: list[str] = []

    def say(self, msg: str) -> None:
        if not self.args.quiet:
            print(msg)

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(str(p))
        return p

    def manifest(self, command: str, **extra) -> Path:
        doc = {
            "command": command,
            "tool": "spmkit",
            "version": __version__,
            "seed": self.cfg.seed,
            "config_sha256": self.cfg.digest(),
            "config": self.cfg.as_dict(),
            "outputs": self.outputs,
            **extra,
        }
        p = self.out / f"manifest_{command}.json"
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return p


def _input_path(given, default: Path, what: str) -> Path:
    p = Path(given) if given else default
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _load_dataset(path: Path) -> Dataset:
    try:
        return Dataset.read_csv(path)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc


def _load_model(run: Run, given):
    if getattr(run.args, "analytic", False):
        return AnalyticIk()
    path = _input_path(given, run.out / "model.json", "model file")
    try:
        return load_model(path)
    except (FormatError, VersionError) as exc:
        raise ConfigError(str(exc)) from exc


def _write_eval(run: Run, report, stem: str, figures: bool) -> None:
    p = run.path(f"{stem}.csv")
    res = np.column_stack([report.t, report.truth, report.prediction])
    header = "t_s,theta1_rad,theta2_rad,pred_theta1_rad,pred_theta2_rad"
    np.savetxt(p, res, delimiter=",", header=header, comments="", fmt="%.9g")
    with p.open("a") as fh:
        fh.write(f"# mae_theta1_deg,{report.mae_theta1:.9g}\n# mae_theta2_deg,{report.mae_theta2:.9g}\n")
    if figures:
        from .plotting import plot_prediction

        plot_prediction(report, run.path(f"{stem}.png"))


# --------------------------------------------------------------------------
# commands


def cmd_generate(run: Run) -> int:
    cfg = run.cfg
    plant = cfg.plant()
    profiles = cfg.velocity_profiles()
    try:
        ds = generate_dataset(plant, profiles, cfg.sample_rate_hz, workers=cfg.workers)
    except PlantSingular as exc:
        raise CliError(f"plant singular in profile {exc.profile_id}: {exc}", EXIT_PLANT) from exc
    p = ds.write_csv(run.path("dataset.csv"))
    run.manifest("generate", samples=len(ds), train=ds.n_train, test=ds.n_test)
    run.say(f"wrote {len(ds)} samples ({ds.n_train} train / {ds.n_test} test) to {p}")
    return EXIT_OK


def cmd_train(run: Run) -> int:
    ds = _load_dataset(_input_path(run.args.data, run.out / "dataset.csv", "dataset"))
    if ds.n_train == 0 or ds.n_test == 0:
        raise ConfigError("dataset needs both a train and a test split")
    try:
        model = train(ds, run.cfg.hyperparams(), verbose=run.args.verbose)
    except Diverged as exc:
        raise CliError(f"training diverged: {exc}", EXIT_DIVERGED) from exc
    save_model(model, run.path("model.json"))
    rep = evaluate(model, ds)
    base = evaluate(AnalyticIk(), ds)
    _write_eval(run, rep, "eval_test", not run.args.no_figures)
    run.manifest(
        "train",
        epochs=model.info.iterations,
        final_loss=model.info.final_loss,
        wall_time_s=model.info.wall_time,
        mae_deg=list(rep.mae),
        analytic_mae_deg=list(base.mae),
    )
    run.say(f"trained {model.info.iterations} epochs in {model.info.wall_time:.1f} s")
    run.say(f"test MAE theta1 {rep.mae_theta1:.3f} deg, theta2 {rep.mae_theta2:.3f} deg")
    run.say(f"analytic IK MAE theta1 {base.mae_theta1:.3f} deg, theta2 {base.mae_theta2:.3f} deg")
    return EXIT_OK


def cmd_evaluate(run: Run) -> int:
    ds = _load_dataset(_input_path(run.args.data, run.out / "dataset.csv", "dataset"))
    if ds.n_test == 0:
        raise ConfigError("dataset has no test split")
    model = _load_model(run, run.args.model)
    rep = evaluate(model, ds)
    _write_eval(run, rep, "eval_analytic" if run.args.analytic else "eval", not run.args.no_figures)
    run.manifest("evaluate", mae_deg=list(rep.mae))
    run.say(f"test MAE theta1 {rep.mae_theta1:.3f} deg, theta2 {rep.mae_theta2:.3f} deg")
    return EXIT_OK


def cmd_track(run: Run) -> int:
    model = _load_model(run, run.args.model)
    cfg = run.cfg
    traj = cfg.hold_home() if run.args.trajectory == "home" else cfg.sweep()
    try:
        report = track(model, cfg.plant(), traj)
    except (TrackingError, PlantSingular, mk.KinematicsError) as exc:
        raise CliError(f"tracking failed: {exc}", EXIT_TRACK) from exc
    stem = "tracking_analytic" if run.args.analytic else "tracking"
    report.write_csv(run.path(f"{stem}.csv"))
    write_endpoint_csv(report, run.path(f"{stem}_endpoint.csv"))
    if not run.args.no_figures:
        from .plotting import plot_endpoint, plot_tracking

        plot_tracking(report, run.path(f"{stem}.png"))
        plot_endpoint(virtual_endpoint_series(report), run.path(f"{stem}_endpoint.png"))
    s = report.summary()
    run.manifest("track", trajectory=run.args.trajectory, **s)
    run.say(
        f"Euler MAE phi {s['mae_phi_deg']:.3f}, psi {s['mae_psi_deg']:.3f}, theta {s['mae_theta_deg']:.3f} deg"
        f" at {s['loop_hz']:.0f} Hz ({s['unreachable_steps']} unreachable steps)"
    )
    for p in run.outputs:
        run.say(p)
    return EXIT_OK


def cmd_scan(run: Run) -> int:
    cfg = run.cfg
    params = cfg.scan_params()
    if run.args.alpha1_deg is not None:
        params = mk.DesignParams(np.radians(run.args.alpha1_deg), params.alpha2, params.alpha3, params.alpha4, params.alpha5)
    try:
        report = mk.singularity_scan(params, cfg.scan_grid())
    except (mk.KinematicsError, ValueError) as exc:
        raise CliError(f"scan failed: {exc}", EXIT_SCAN) from exc
    report.write_csv(run.path("scan.csv"))
    if not run.args.no_figures:
        from .plotting import plot_scan

        plot_scan(report, run.path("scan.png"))
    s = report.summary()
    run.manifest("scan", alpha_rad=list(params.as_array()), **s)
    run.say(json.dumps(s, indent=2))
    for p in run.outputs:
        run.say(p)
    return EXIT_OK


def cmd_bench(run: Run) -> int:
    model = _load_model(run, run.args.model)
    steps = run.args.steps or run.cfg.bench_steps
    try:
        hz = loop_benchmark(model, run.cfg.plant(), steps)
    except (ValueError, TrackingError, PlantSingular, mk.KinematicsError) as exc:
        raise CliError(f"benchmark failed: {exc}", EXIT_BENCH) from exc
    p = run.path("bench.csv")
    p.write_text(f"steps,loop_hz,min_hz\n{steps},{hz:.6g},{run.cfg.bench_min_hz:.6g}\n")
    run.manifest("bench", steps=steps, loop_hz=hz)
    run.say(f"open-loop rate {hz:.0f} Hz over {steps} steps")
    if hz < run.cfg.bench_min_hz:
        raise CliError(f"rate {hz:.0f} Hz below required {run.cfg.bench_min_hz:.0f} Hz", EXIT_BENCH)
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "track": cmd_track,
    "scan": cmd_scan,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults if omitted)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")

    parser = argparse.ArgumentParser(prog="spmkit", description="Spherical five-bar wrist toolkit.")
    parser.add_argument("--version", action="version", version=f"spmkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common], help="simulate motion data and write dataset.csv")

    p = sub.add_parser("train", parents=[common], help="fit the IK network on a dataset")
    p.add_argument("--data", help="dataset CSV (default: OUT/dataset.csv)")
    p.add_argument("--verbose", action="store_true", help="print the loss every epoch")
    p.add_argument("--no-figures", action="store_true")

    for name, helptext in (("evaluate", "score a model on the test split"), ("track", "open-loop tracking run"),
                           ("bench", "measure the open-loop step rate")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--model", help="model file (default: OUT/model.json)")
        p.add_argument("--analytic", action="store_true", help="use closed-form IK instead of a model")
        if name == "evaluate":
            p.add_argument("--data", help="dataset CSV (default: OUT/dataset.csv)")
        if name == "track":
            p.add_argument("--trajectory", choices=("sweep", "home"), default="sweep")
        if name == "bench":
            p.add_argument("--steps", type=int, help="number of loop steps (>= 1000)")
        if name != "bench":
            p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("scan", parents=[common], help="singularity scan over the actuator grid")
    p.add_argument("--alpha1-deg", type=float, help="override the ground-link twist")
    p.add_argument("--no-figures", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = Run(args)
        return COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"spmkit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"spmkit: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
