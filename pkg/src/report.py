"""
Run manifest and its CSV / SVG renderings.
"""

import csv
import json
import os
import re
from dataclasses import asdict, dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from src.errors import ModelFormatError  # noqa: E402
from src.metrics import METRIC_NAMES  # noqa: E402

CODE_VERSION = "1.0.0"
METRICS_COLUMNS = ["experiment", "kernel", "method", "metric", "value", "failed_rows"]
TRAJECTORY_COLUMNS = ["sample_id", "time_index", "t", "v", "d_true", "d_pred"]

PLOT_RC = {
    "svg.hashsalt": "nso-hysteresis",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
}


def _exact(value):
    return format(float(value), ".17g")


def _slug(name):
    return re.sub(r"[^A-Za-z0-9.-]+", "_", name).strip("_")


@dataclass
class RunManifest:
    """
    Everything a run reports.

    Attributes:
        experiment: experiment id
        config: config snapshot (ExperimentConfig.to_dict)
        metrics: rows {kernel, method, relative_l2, rmse, mae, samples, failed_rows}
        equations: method -> discovered equations as text
        term_counts: method -> number of active terms
        trajectories: plotted samples {kernel, method, sample_id, t, v, d_true, d_pred}
        artifacts: name -> path relative to the output directory
        training: final loss and epoch count of the operator
    """
    experiment: str
    config: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)
    equations: dict = field(default_factory=dict)
    term_counts: dict = field(default_factory=dict)
    trajectories: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    version: str = CODE_VERSION

    def add_metrics(self, kernel, method, record):
        self.metrics.append({"kernel": kernel, "method": method, **record.to_dict()})

    def add_trajectory(self, kernel, method, sample_id, t, v, d_true, d_pred):
        self.trajectories.append({
            "kernel": kernel, "method": method, "sample_id": int(sample_id),
            "t": [float(x) for x in t], "v": [float(x) for x in v],
            "d_true": [float(x) for x in d_true], "d_pred": [float(x) for x in d_pred],
        })

    def lookup(self, kernel, method):
        for row in self.metrics:
            if row["kernel"] == kernel and row["method"] == method:
                return row
        raise KeyError((kernel, method))

    def methods(self):
        return list(dict.fromkeys(row["method"] for row in self.metrics))

    def kernels(self):
        return list(dict.fromkeys(row["kernel"] for row in self.metrics))

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def load_manifest(path):
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        return RunManifest(**data)
    except (json.JSONDecodeError, TypeError) as error:
        raise ModelFormatError(f"{path} is not a run manifest: {error}") from error


def emit_csv(manifest, out_dir):
    """
    Write metrics.csv and one trajectory CSV per (method, kernel) pair.

    Input: manifest - RunManifest
           out_dir - existing or creatable directory
    Output: list of written paths
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    metrics_path = os.path.join(out_dir, "metrics.csv")
    with open(metrics_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for row in manifest.metrics:
            for metric in METRIC_NAMES:
                writer.writerow([manifest.experiment, row["kernel"], row["method"], metric,
                                 _exact(row[metric]), row["failed_rows"]])
    paths.append(metrics_path)

    groups = {}
    for item in manifest.trajectories:
        groups.setdefault((item["method"], item["kernel"]), []).append(item)
    for (method, kernel), items in groups.items():
        path = os.path.join(out_dir, f"trajectories_{_slug(method)}_{kernel}.csv")
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(TRAJECTORY_COLUMNS)
            for item in items:
                for j, (t, v, d_true, d_pred) in enumerate(zip(item["t"], item["v"], item["d_true"], item["d_pred"])):
                    writer.writerow([item["sample_id"], j, _exact(t), _exact(v), _exact(d_true), _exact(d_pred)])
        paths.append(path)
    return paths


def read_metrics_csv(path):
    """
    Parse metrics.csv back.

    Output: dict (kernel, method) -> {metric: value, 'failed_rows': int}
    """
    table = {}
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            cell = table.setdefault((row["kernel"], row["method"]), {"failed_rows": int(row["failed_rows"])})
            cell[row["metric"]] = float(row["value"])
    return table


def emit_plots(manifest, out_dir):
    """
    One SVG per method: voltage against time on top and the displacement /
    voltage loop underneath, one column per test kernel. Ground truth is red
    dashed, the prediction black solid.

    Output: list of written paths
    """
    os.makedirs(out_dir, exist_ok=True)
    by_method = {}
    for item in manifest.trajectories:
        by_method.setdefault(item["method"], {}).setdefault(item["kernel"], []).append(item)

    paths = []
    with plt.rc_context(PLOT_RC):
        for method, kernels in by_method.items():
            fig, axes = plt.subplots(2, len(kernels), figsize=(3.2 * len(kernels), 5.0), squeeze=False)
            for col, (kernel, items) in enumerate(kernels.items()):
                top, bottom = axes[0, col], axes[1, col]
                for item in items:
                    top.plot(item["t"], item["v"], color="tab:blue")
                    bottom.plot(item["v"], item["d_true"], "r--")
                    bottom.plot(item["v"], item["d_pred"], "k-")
                top.set_title(kernel)
                top.set_xlabel("t")
                top.set_ylabel("v")
                bottom.set_xlabel("v")
                bottom.set_ylabel("d")
            fig.suptitle(f"{manifest.experiment}: {method}")
            fig.tight_layout()
            path = os.path.join(out_dir, f"{manifest.experiment}_{_slug(method)}.svg")
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(path)
    return paths
