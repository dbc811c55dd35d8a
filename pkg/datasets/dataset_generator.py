"""
Dataset generator for the experiments.
Builds the training and test ensembles of a configuration and saves them
as CSV files with JSON sidecars for reproducibility.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from src.config import EXPERIMENT_IDS, load_config
from src.errors import ModelFormatError
from src.fields import FieldSpec, SignalEnsemble, TimeGrid, sample_field
from src.numerics import RngStream
from src.truthsim import Corruption, TrajectorySet, add_noise, downsample, reference_system, simulate

# Stream purposes; each experiment id gets its own block of streams.
TRAIN_STREAM = 0
TEST_STREAMS = (1, 2, 3)
TRAIN_NOISE_STREAM = 4
RAW_NOISE_STREAM = 5
FNO_INIT_STREAM = 6
FNO_SHUFFLE_STREAM = 7
STREAM_BLOCK = 100


def stream_id(config, purpose):
    return STREAM_BLOCK * (EXPERIMENT_IDS.index(config.experiment) + 1) + purpose


@dataclass(frozen=True, eq=False)
class ExperimentData:
    """
    Attributes:
        train: corrupted Sine training trajectories
        tests: kernel label -> clean test trajectories (Sine first)
        raw: corrupted Sine test subset used by the raw-data baselines
    """
    train: TrajectorySet
    tests: dict
    raw: TrajectorySet


def kernel_specs(config):
    setup = config.setup
    return [FieldSpec.sine(setup.omega), FieldSpec.gp("rbf"), FieldSpec.gp(setup.matern)]


def build_datasets(config, verbose=False):
    """
    Sample and simulate every ensemble a run needs.

    Input: config - validated ExperimentConfig
    Output: ExperimentData
    """
    setup = config.setup
    system = reference_system(setup.system)
    grid = TimeGrid(config.n)
    root = RngStream(config.seed)

    if verbose:
        print(f"  Simulating {config.n_train:,} Sine training trajectories ({setup.system})...")
    train_v = sample_field(FieldSpec.sine(setup.omega), config.n_train, grid,
                           root.spawn(stream_id(config, TRAIN_STREAM)))
    train = simulate(system, train_v, config.substeps, config.threads)

    tests = {}
    for spec, purpose in zip(kernel_specs(config), TEST_STREAMS):
        if verbose:
            print(f"  Simulating {config.n_test:,} {spec.label} test trajectories...")
        voltage = sample_field(spec, config.n_test, grid, root.spawn(stream_id(config, purpose)))
        tests[spec.label] = simulate(system, voltage, config.substeps, config.threads)

    raw = tests["Sine"].select(slice(0, config.stage2_count))
    noise = config.effective_noise
    factor = config.effective_factor
    if noise > 0:
        train = add_noise(train, noise, root.spawn(stream_id(config, TRAIN_NOISE_STREAM)))
        raw = add_noise(raw, noise, root.spawn(stream_id(config, RAW_NOISE_STREAM)))
    if factor > 1:
        train = downsample(train, factor)
        raw = downsample(raw, factor)
    return ExperimentData(train, tests, raw)


def save_ensemble(ensemble, path):
    """
    Write values as CSV (17 significant digits) plus a .json sidecar.

    Input: ensemble - SignalEnsemble
           path - CSV path
    Output: None (writes two files)
    """
    np.savetxt(path, ensemble.values, fmt="%.17g", delimiter=",")
    sidecar = {
        "grid": ensemble.grid.to_dict(),
        "channel": ensemble.channel,
        "spec": None if ensemble.spec is None else ensemble.spec.to_dict(),
        "seed": ensemble.seed,
        "meta": ensemble.meta,
    }
    with open(path + ".json", "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)


def load_ensemble(path):
    """
    Read an ensemble written by save_ensemble.

    Input: path - CSV path (the sidecar must sit next to it)
    Output: SignalEnsemble
    """
    try:
        with open(path + ".json", encoding="utf-8") as f:
            sidecar = json.load(f)
    except (OSError, json.JSONDecodeError) as error:
        raise ModelFormatError(f"missing or unreadable sidecar for {path}: {error}") from error
    values = np.loadtxt(path, delimiter=",", ndmin=2)
    spec = None if sidecar["spec"] is None else FieldSpec.from_dict(sidecar["spec"])
    return SignalEnsemble(TimeGrid(**sidecar["grid"]), values, sidecar["channel"], spec,
                          sidecar["seed"], sidecar.get("meta", {}))


def save_trajectories(traj, output_dir, name):
    """Save every channel of a TrajectorySet as <name>_<channel>.csv plus <name>.json."""
    os.makedirs(output_dir, exist_ok=True)
    channels = {"voltage": traj.voltage, "displacement": traj.displacement, "latent": traj.latent}
    for channel, ensemble in channels.items():
        if ensemble is not None:
            save_ensemble(ensemble, os.path.join(output_dir, f"{name}_{channel}.csv"))
    record = {"corruption": traj.corruption.to_dict(), "latent": traj.latent is not None}
    with open(os.path.join(output_dir, f"{name}.json"), "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2, sort_keys=True)


def load_trajectories(output_dir, name):
    with open(os.path.join(output_dir, f"{name}.json"), encoding="utf-8") as f:
        record = json.load(f)
    voltage = load_ensemble(os.path.join(output_dir, f"{name}_voltage.csv"))
    displacement = load_ensemble(os.path.join(output_dir, f"{name}_displacement.csv"))
    latent = load_ensemble(os.path.join(output_dir, f"{name}_latent.csv")) if record["latent"] else None
    return TrajectorySet(voltage, displacement, latent, Corruption(**record["corruption"]))


def generate_datasets(config, output_dir='datasets', verbose=True):
    """
    Generate and save all datasets of one configuration.

    Input: config - validated ExperimentConfig
           output_dir - directory to save datasets
    Output: ExperimentData (also written to disk)
    """
    data = build_datasets(config, verbose=verbose)
    save_trajectories(data.train, output_dir, "train")
    for label, traj in data.tests.items():
        save_trajectories(traj, output_dir, f"test_{label}")
    save_trajectories(data.raw, output_dir, "raw")

    metadata = {
        'experiment': config.experiment,
        'seed': config.seed,
        'kernels': list(data.tests),
        'description': 'Sine training trajectories, clean test trajectories per kernel, '
                       'corrupted Sine test subset for raw-data baselines',
    }
    with open(os.path.join(output_dir, 'metadata.json'), 'w', encoding='utf-8') as f:
        json.dump(metadata, f, indent=2)

    if verbose:
        print(f"\nDatasets saved to '{output_dir}/' directory")
    return data


def load_datasets(output_dir):
    """
    Load datasets written by generate_datasets.

    Input: output_dir - dataset directory
    Output: ExperimentData
    """
    try:
        with open(os.path.join(output_dir, 'metadata.json'), encoding='utf-8') as f:
            metadata = json.load(f)
    except (OSError, json.JSONDecodeError) as error:
        raise ModelFormatError(f"{output_dir} holds no dataset metadata: {error}") from error
    tests = {label: load_trajectories(output_dir, f"test_{label}") for label in metadata['kernels']}
    return ExperimentData(load_trajectories(output_dir, "train"), tests, load_trajectories(output_dir, "raw"))


if __name__ == '__main__':
    print("=" * 60)
    print("Dataset Generator for the hysteresis experiments")
    print("=" * 60)
    print()

    generate_datasets(load_config().validate(), output_dir=os.path.join('datasets', 'exp1'))

    print("\nDone!")
