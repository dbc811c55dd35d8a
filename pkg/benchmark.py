"""
Benchmarking suite for the neuro-symbolic operator pipeline.
Trains the Fourier neural operator on Sine drives, discovers sparse
hysteresis models from its predictions and measures operator, discovered
models and raw-data baselines on Sine, RBF and Matérn test kernels.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from datasets.dataset_generator import (FNO_INIT_STREAM, FNO_SHUFFLE_STREAM, build_datasets,
                                        generate_datasets, load_datasets, stream_id)
from src.config import load_config
from src.discovery import build_library, lasso, load_sparse_model, stlsq, write_model_report
from src.errors import ConfigError, NsoError, StageError
from src.fno import FnoModel, predict, train
from src.metrics import MetricsRecord, metrics
from src.numerics import RngStream
from src.report import RunManifest, emit_csv, emit_plots, load_manifest
from src.symmodel import DiscoveredOde, integrate
from src.truthsim import reference_system

FNO = "FNO"
NSO = "NSO"
SINDY = "SINDy"
LASSO = "Lasso"

# numerical and I/O failures a stage reports under its own name
STAGE_FAILURES = (NsoError, np.linalg.LinAlgError, ValueError, ArithmeticError, OSError)


def _file_label(label):
    return "".join(ch if ch.isalnum() or ch in ".-" else "_" for ch in label).strip("_")


class Benchmark:
    """
    Runs one experiment stage by stage and collects everything it reports
    in a RunManifest.
    """

    def __init__(self, config, verbose=True):
        """
        Input: config - ExperimentConfig (validated here)
               verbose - print progress
        """
        self.config = config.resolved().validate()
        self.verbose = verbose
        self.out_dir = self.config.output_dir
        self.root = RngStream(self.config.seed)
        self.system = reference_system(self.config.setup.system)
        self.manifest = RunManifest(self.config.experiment, self.config.to_dict())
        self.timings = {}
        self.data = None

    def log(self, message):
        if self.verbose:
            print(message)

    def stage(self, name, fn, *args):
        """Run one stage, timing it and tagging any failure with its name."""
        self.log(f"Running stage '{name}'...")
        start = time.perf_counter()
        try:
            result = fn(*args)
        except STAGE_FAILURES as error:
            raise StageError(name, error) from error
        self.timings[name] = time.perf_counter() - start
        self.log(f"  {name}: {self.timings[name]:.2f}s")
        return result

    def artifact(self, name):
        os.makedirs(self.out_dir, exist_ok=True)
        return os.path.join(self.out_dir, name)

    def generate_data(self, data_dir=None):
        """
        Input: data_dir - directory written by generate_datasets (None = sample afresh)
        Output: ExperimentData
        """
        if data_dir is not None:
            self.data = load_datasets(data_dir)
        else:
            self.data = build_datasets(self.config, verbose=self.verbose)
        return self.data

    def operator_hyperparams(self):
        """Configured hyperparameters, with modes capped by the training grid."""
        hp = self.config.fno
        return replace(hp, modes=min(hp.modes, self.data.train.grid.n // 2 + 1))

    def train_operator(self):
        """
        Stage I: fit the operator on the (possibly corrupted) Sine training set.

        Output: (FnoModel, TrainReport)
        """
        hp = self.operator_hyperparams()
        if hp.modes != self.config.fno.modes:
            self.log(f"  Training grid of {self.data.train.grid.n} points keeps {hp.modes} modes")
        model = FnoModel.initialize(hp, self.root.spawn(stream_id(self.config, FNO_INIT_STREAM)))
        report = train(model, self.data.train, hp, self.root.spawn(stream_id(self.config, FNO_SHUFFLE_STREAM)))
        model.save(self.artifact("model.bin"))
        with open(self.artifact("train_report.json"), "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=2)
        self.manifest.artifacts["model"] = "model.bin"
        self.manifest.training = {"final_loss": report.final_loss, "epochs": hp.epochs,
                                  "modes": hp.modes, "train_points": self.data.train.grid.n}
        self.log(f"  Final training loss: {report.final_loss:.4e}")
        return model, report

    def stage2_trajectories(self):
        return self.data.tests["Sine"].select(slice(0, self.config.stage2_count))

    def discover(self, model):
        """
        Stage II: sparse regression on operator predictions (NSO) and, when
        configured, on the raw corrupted data (SINDy, Lasso).

        Output: dict label -> SparseModel
        """
        config = self.config
        library = config.library_config(self.system.state_count)
        sine = self.stage2_trajectories()
        d_hat, y_hat = predict(model, sine.voltage)
        latent = None
        if self.system.state_count == 2:
            latent = y_hat if config.latent_source == "predicted" else sine.latent
        problem = build_library(sine.voltage, d_hat, latent, library)

        thresholds = config.effective_thresholds
        models = {}
        for threshold in thresholds:
            label = NSO if len(thresholds) == 1 else f"NSO[lambda={threshold:g}]"
            models[label] = replace(stlsq(problem, threshold, config.stlsq_max_iter), label=label)

        if config.effective_baselines:
            raw = self.data.raw
            raw_problem = build_library(raw.voltage, raw.displacement, raw.latent, library)
            models[SINDY] = replace(stlsq(raw_problem, thresholds[0], config.stlsq_max_iter), label=SINDY)
            fitted = lasso(raw_problem, config.lasso_alpha * raw_problem.rows, config.lasso_max_iter)
            if not fitted.converged:
                self.log("  Lasso stopped at its iteration cap before converging")
            models[LASSO] = replace(fitted, label=LASSO)

        for label, sparse in models.items():
            self.record_model(label, sparse)
        return models

    def record_model(self, label, sparse):
        name = f"model_{_file_label(label)}"
        write_model_report(sparse, self.artifact(f"{name}.txt"), self.artifact(f"{name}.json"), label)
        self.manifest.artifacts[f"{label} model"] = f"{name}.json"
        self.manifest.equations[label] = "\n".join(sparse.equations(".4g"))
        self.manifest.term_counts[label] = int(sum(len(sparse.active(s)) for s in sparse.states))
        for line in sparse.equations(".4g"):
            self.log(f"  {label}: {line}")

    def evaluate(self, model, sparse_models):
        """
        Measure the operator and every discovered model on each test kernel.

        Input: model - trained FnoModel (None skips the operator row)
               sparse_models - dict label -> SparseModel
        """
        config = self.config
        for kernel, traj in self.data.tests.items():
            self.log(f"  Kernel: {kernel}")
            if model is not None:
                d_hat, _ = predict(model, traj.voltage)
                record = metrics(d_hat, traj.displacement)
                self.add_result(kernel, FNO, record, traj, d_hat.values, range(traj.rows))

            for label, sparse in sparse_models.items():
                ode = DiscoveredOde.from_sparse_model(sparse, label)
                result = integrate(ode, traj.voltage, config.substeps, config.threads)
                if result.displacement.rows == 0:
                    record = MetricsRecord.undefined(result.failed_rows)
                else:
                    reference = traj.displacement.select(result.row_index)
                    record = metrics(result.displacement, reference, result.failed_rows)
                self.add_result(kernel, label, record, traj, result.displacement.values, result.row_index)

    def add_result(self, kernel, method, record, traj, predicted, row_index):
        self.manifest.add_metrics(kernel, method, record)
        failed = f" ({record.failed_rows} rows diverged)" if record.failed_rows else ""
        self.log(f"    {method}: R={record.relative_l2:.3e} RMSE={record.rmse:.3e} MAE={record.mae:.3e}{failed}")
        t = traj.grid.points
        for k, row in enumerate(list(row_index)[:self.config.plot_samples]):
            self.manifest.add_trajectory(kernel, method, row, t, traj.voltage.values[row],
                                         traj.displacement.values[row], predicted[k])

    def finish(self):
        """Write CSV, SVG, manifest and timings. Output: RunManifest"""
        csv_paths = emit_csv(self.manifest, self.out_dir)
        plot_paths = emit_plots(self.manifest, self.out_dir)
        for path in csv_paths + plot_paths:
            self.manifest.artifacts[os.path.basename(path)] = os.path.basename(path)
        self.manifest.save(self.artifact("manifest.json"))
        with open(self.artifact("timings.json"), "w", encoding="utf-8") as f:
            json.dump(self.timings, f, indent=2, sort_keys=True)
        self.log(f"\nResults saved to '{self.out_dir}/'")
        return self.manifest

    def run(self, data_dir=None):
        """
        Full experiment: data, Stage I, Stage II, evaluation, reports.

        Output: RunManifest
        """
        self.log(f"--- Experiment {self.config.experiment} (seed {self.config.seed}) ---")
        self.stage("generate", self.generate_data, data_dir)
        model, _ = self.stage("train", self.train_operator)
        sparse_models = self.stage("discover", self.discover, model)
        self.stage("evaluate", self.evaluate, model, sparse_models)
        return self.stage("report", self.finish)


def run_experiment(config, verbose=False, data_dir=None):
    """
    Input: config - ExperimentConfig
    Output: RunManifest (artifacts written to config.output_dir)
    """
    return Benchmark(config, verbose=verbose).run(data_dir)


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--experiment", default=None, help="exp1..exp6, exp5a, exp5b")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="JSON file overriding the defaults")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: $NSO_THREADS or 1)")
    common.add_argument("--data", default=None, help="dataset directory written by 'generate'")

    parser = CliParser(prog="benchmark.py", description=__doc__.strip().splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("generate", parents=[common], help="sample and save datasets only")
    commands.add_parser("train", parents=[common], help="Stage I: train the operator")
    discover = commands.add_parser("discover", parents=[common], help="Stage II: discover sparse models")
    discover.add_argument("--model", default=None, help="trained operator (model.bin)")
    evaluate = commands.add_parser("evaluate", parents=[common], help="measure saved models on the test kernels")
    evaluate.add_argument("--model", default=None, help="trained operator (model.bin)")
    evaluate.add_argument("--sparse-model", action="append", default=[], help="sparse model JSON (repeatable)")
    commands.add_parser("run", parents=[common], help="full experiment")
    report = commands.add_parser("report", parents=[common], help="re-emit CSV and plots from a manifest")
    report.add_argument("--manifest", default=None, help="manifest.json of a finished run")
    return parser


def _threads(value):
    if value is not None:
        return value
    env = os.environ.get("NSO_THREADS")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"NSO_THREADS must be an integer, got '{env}'")


def _command_generate(args, config):
    generate_datasets(config, args.data or os.path.join(config.output_dir, "datasets"))


def _command_train(args, config):
    bench = Benchmark(config)
    bench.stage("generate", bench.generate_data, args.data)
    bench.stage("train", bench.train_operator)


def _command_discover(args, config):
    bench = Benchmark(config)
    bench.stage("generate", bench.generate_data, args.data)
    model = FnoModel.load(args.model)
    bench.stage("discover", bench.discover, model)


def _command_evaluate(args, config):
    bench = Benchmark(config)
    bench.stage("generate", bench.generate_data, args.data)
    model = FnoModel.load(args.model) if args.model else None
    sparse_models = {}
    for path in args.sparse_model:
        sparse = load_sparse_model(path)
        sparse_models[sparse.label or os.path.splitext(os.path.basename(path))[0]] = sparse
    bench.stage("evaluate", bench.evaluate, model, sparse_models)
    bench.stage("report", bench.finish)


def _command_run(args, config):
    Benchmark(config).run(args.data)


def _command_report(args, config):
    manifest = load_manifest(args.manifest)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.manifest))
    for path in emit_csv(manifest, out_dir) + emit_plots(manifest, out_dir):
        print(f"Saved: {path}")


COMMANDS = {
    "generate": _command_generate,
    "train": _command_train,
    "discover": _command_discover,
    "evaluate": _command_evaluate,
    "run": _command_run,
    "report": _command_report,
}


def main(argv=None):
    """
    Command-line entry point.

    Output: exit code (0 success, 1 usage error, 2 runtime failure)
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "discover" and not args.model:
            parser.error("discover needs --model pointing at a trained operator")
        if args.command == "evaluate" and not (args.model or args.sparse_model):
            parser.error("evaluate needs --model and/or --sparse-model")
        if args.command == "report" and not args.manifest:
            parser.error("report needs --manifest")
    except SystemExit as exit_request:
        return exit_request.code

    try:
        config = load_config(args.config, experiment=args.experiment, seed=args.seed,
                             output_dir=args.out, threads=_threads(args.threads)).validate()
    except (ConfigError, OSError) as error:
        print(f"benchmark.py: error: {error}", file=sys.stderr)
        return 1

    try:
        COMMANDS[args.command](args, config)
    except (NsoError, OSError) as error:
        print(f"benchmark.py: {error}", file=sys.stderr)
        return 2
    return 0


if __name__ == '__main__':
    sys.exit(main())
