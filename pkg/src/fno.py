"""
One-dimensional Fourier neural operator with hand-derived adjoints.

Layout: activations are (batch, time, channel). A forward pass is

    u0 = [v_norm, t] @ P + bP
    u_{k+1} = act(irfft(R_k * rfft(u_k)[:n_m]) + u_k @ W_k + bW_k)
    out = act(u_K @ Q + bQ) @ Qh + bQh

and the loss is the mean squared error over batch, time and output channel.
"""

import json
import struct
import time
from dataclasses import asdict, dataclass

import numpy as np

from src.errors import DimensionError, ModelFormatError, TrainingError
from src.fields import SignalEnsemble
from src.numerics import irfft, rfft
from src.optim import Adam

MAGIC = b"NSO-FNO\x00"
FORMAT_VERSION = 1
STD_FLOOR = 1e-12
PREDICT_CHUNK = 250

ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0.0).astype(np.float64)),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
}


@dataclass(frozen=True)
class FnoHyperparams:
    """
    Architecture and training settings.

    Attributes:
        layers: spectral layer count
        width: hidden channel count
        modes: retained Fourier modes
        proj_width: hidden width of the Q / Qh projection pair
        out_channels: 1 (displacement) or 2 (displacement, latent)
        activation: 'relu' ('identity' is a test hook)
    """
    layers: int = 4
    width: int = 64
    modes: int = 32
    proj_width: int = 128
    out_channels: int = 1
    activation: str = "relu"
    learning_rate: float = 0.001
    batch_size: int = 100
    epochs: int = 500

    def __post_init__(self):
        if self.layers < 1 or self.width < 1 or self.modes < 1 or self.proj_width < 1:
            raise ValueError("layers, width, modes and proj_width must be positive")
        if self.out_channels not in (1, 2):
            raise ValueError("out_channels must be 1 or 2")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}'")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("invalid training settings")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class NormalizationStats:
    mean: float
    std: float

    def apply(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std


@dataclass
class TrainReport:
    loss_trace: list
    final_loss: float
    wall_time: float
    seed: int
    hyperparams: FnoHyperparams

    def to_dict(self):
        return {"loss_trace": list(self.loss_trace), "final_loss": self.final_loss,
                "wall_time": self.wall_time, "seed": self.seed, "hyperparams": self.hyperparams.to_dict()}


def _parameter_shapes(hp):
    shapes = {"P": (2, hp.width), "bP": (hp.width,)}
    for k in range(hp.layers):
        shapes[f"W{k}"] = (hp.width, hp.width)
        shapes[f"bW{k}"] = (hp.width,)
        shapes[f"R{k}_re"] = (hp.width, hp.width, hp.modes)
        shapes[f"R{k}_im"] = (hp.width, hp.width, hp.modes)
    shapes["Q"] = (hp.width, hp.proj_width)
    shapes["bQ"] = (hp.proj_width,)
    shapes["Qh"] = (hp.proj_width, hp.out_channels)
    shapes["bQh"] = (hp.out_channels,)
    return shapes


@dataclass
class FnoModel:
    """
    Parameters and input normalization of a Fourier neural operator.

    Attributes:
        hp: FnoHyperparams
        params: dict name -> float64 array (see _parameter_shapes)
        normalization: NormalizationStats, set once when training starts
    """
    hp: FnoHyperparams
    params: dict
    normalization: NormalizationStats = None
    seed: int = None

    @classmethod
    def initialize(cls, hp, rng):
        """
        Random initialization: dense weights uniform in +-1/sqrt(fan_in),
        spectral weights uniform in [0, 1/width^2).
        """
        gen = rng.generator()
        params = {}
        for name, shape in _parameter_shapes(hp).items():
            if name.startswith("R"):
                params[name] = gen.uniform(0.0, 1.0, size=shape) / (hp.width * hp.width)
                continue
            fan_in = {"P": 2, "bP": 2, "Q": hp.width, "bQ": hp.width,
                      "Qh": hp.proj_width, "bQh": hp.proj_width}.get(name, hp.width)
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = gen.uniform(-bound, bound, size=shape)
        return cls(hp, params, None, rng.seed)

    @property
    def parameter_names(self):
        return list(_parameter_shapes(self.hp))

    def flat_parameters(self):
        return np.concatenate([self.params[k].ravel() for k in self.parameter_names])

    def set_flat_parameters(self, flat):
        offset = 0
        for name in self.parameter_names:
            shape = self.params[name].shape
            size = int(np.prod(shape))
            self.params[name] = np.array(flat[offset:offset + size], dtype=np.float64).reshape(shape)
            offset += size

    def flatten_gradients(self, grads):
        return np.concatenate([grads[k].ravel() for k in self.parameter_names])

    def save(self, path):
        """
        Write the versioned binary container: magic, version, JSON header,
        then every parameter block as little-endian float64.
        """
        header = {
            "hyperparams": self.hp.to_dict(),
            "normalization": None if self.normalization is None else
            {"mean": self.normalization.mean, "std": self.normalization.std},
            "seed": self.seed,
            "blocks": [{"name": k, "shape": list(self.params[k].shape)} for k in self.parameter_names],
        }
        encoded = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<II", FORMAT_VERSION, len(encoded)))
            f.write(encoded)
            for name in self.parameter_names:
                f.write(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            blob = f.read()
        if blob[:len(MAGIC)] != MAGIC:
            raise ModelFormatError(f"{path} is not an NSO-FNO model file")
        offset = len(MAGIC)
        version, header_len = struct.unpack_from("<II", blob, offset)
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format version {version}")
        offset += 8
        header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
        offset += header_len
        hp = FnoHyperparams(**header["hyperparams"])
        params = {}
        for block in header["blocks"]:
            count = int(np.prod(block["shape"]))
            data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            params[block["name"]] = data.astype(np.float64).reshape(block["shape"])
            offset += 8 * count
        if offset != len(blob):
            raise ModelFormatError(f"{path} has {len(blob) - offset} trailing bytes")
        norm = header["normalization"]
        stats = None if norm is None else NormalizationStats(norm["mean"], norm["std"])
        return cls(hp, params, stats, header.get("seed"))


def normalize_inputs(train_voltage):
    """
    z-score statistics of the training voltages.

    Input: train_voltage - non-empty SignalEnsemble
    Output: (NormalizationStats, normalized SignalEnsemble)
    """
    values = train_voltage.values
    if values.size == 0:
        raise DimensionError("cannot normalize an empty ensemble")
    stats = NormalizationStats(float(values.mean()), max(float(values.std()), STD_FLOOR))
    return stats, train_voltage.with_values(stats.apply(values))


def _mode_weights(n):
    # Hermitian multiplicity of each rfft coefficient
    c = np.full(n // 2 + 1, 2.0)
    c[0] = 1.0
    if n % 2 == 0:
        c[-1] = 1.0
    return c


def spectral_conv(u, R_re, R_im):
    """
    Multiply the first n_m modes of every channel by a complex channel-mixing
    matrix and truncate the rest.

    Input: u - (B, n, C_in) real
           R_re, R_im - (C_in, C_out, n_m)
    Output: (B, n, C_out) real, plus the spectrum of u for the adjoint
    """
    n = u.shape[1]
    modes = R_re.shape[2]
    U = rfft(u, axis=1)
    if modes > U.shape[1]:
        raise DimensionError(f"{modes} retained modes exceed the {U.shape[1]} modes of a length-{n} signal")
    R = (R_re + 1j * R_im).transpose(2, 0, 1)
    mixed = np.matmul(U[:, :modes, :].transpose(1, 0, 2), R).transpose(1, 0, 2)
    S = np.zeros((u.shape[0], U.shape[1], R.shape[2]), dtype=np.complex128)
    S[:, :modes, :] = mixed
    return irfft(S, n, axis=1), U


def _spectral_conv_adjoint(ds, U, R_re, R_im):
    n = ds.shape[1]
    modes = R_re.shape[2]
    c = _mode_weights(n)[None, :, None]
    G = rfft(ds, axis=1) * (c / n)
    Gm = G[:, :modes, :].transpose(1, 0, 2)
    Um = U[:, :modes, :].transpose(1, 0, 2)
    dR = np.matmul(np.conj(Um).transpose(0, 2, 1), Gm).transpose(1, 2, 0)
    R = (R_re + 1j * R_im).transpose(2, 0, 1)
    dU = np.zeros_like(U)
    dU[:, :modes, :] = np.matmul(Gm, np.conj(R).transpose(0, 2, 1)).transpose(1, 0, 2)
    du = n * irfft(dU / c, n, axis=1)
    return du, dR.real, dR.imag


def _input_tensor(model, v, t):
    if model.normalization is None:
        raise ValueError("model has no normalization statistics; train it first")
    vn = model.normalization.apply(v)
    return np.stack([vn, np.broadcast_to(t, vn.shape)], axis=-1)


def _forward(model, x, keep_cache=False):
    hp, p = model.hp, model.params
    act, _ = ACTIVATIONS[hp.activation]
    u = x @ p["P"] + p["bP"]
    cache = {"x": x, "layers": []}
    for k in range(hp.layers):
        s, U = spectral_conv(u, p[f"R{k}_re"], p[f"R{k}_im"])
        z = s + u @ p[f"W{k}"] + p[f"bW{k}"]
        if keep_cache:
            cache["layers"].append((u, U, z))
        u = act(z)
    h = u @ p["Q"] + p["bQ"]
    g = act(h)
    out = g @ p["Qh"] + p["bQh"]
    if keep_cache:
        cache.update(uK=u, h=h, g=g)
    return out, cache


def _backward(model, cache, dout):
    hp, p = model.hp, model.params
    _, act_grad = ACTIVATIONS[hp.activation]
    grads = {}

    def dense(inp, dy):
        flat_in = inp.reshape(-1, inp.shape[-1])
        flat_dy = dy.reshape(-1, dy.shape[-1])
        return flat_in.T @ flat_dy, flat_dy.sum(axis=0)

    grads["Qh"], grads["bQh"] = dense(cache["g"], dout)
    dh = (dout @ p["Qh"].T) * act_grad(cache["h"])
    grads["Q"], grads["bQ"] = dense(cache["uK"], dh)
    du = dh @ p["Q"].T
    for k in reversed(range(hp.layers)):
        a, U, z = cache["layers"][k]
        dz = du * act_grad(z)
        grads[f"W{k}"], grads[f"bW{k}"] = dense(a, dz)
        ds_a, grads[f"R{k}_re"], grads[f"R{k}_im"] = _spectral_conv_adjoint(dz, U, p[f"R{k}_re"], p[f"R{k}_im"])
        du = dz @ p[f"W{k}"].T + ds_a
    grads["P"], grads["bP"] = dense(cache["x"], du)
    return grads


def _as_targets(targets, out_channels):
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 2:
        targets = targets[:, :, None]
    if targets.shape[-1] != out_channels:
        raise DimensionError(f"targets have {targets.shape[-1]} channels, model emits {out_channels}")
    return targets


def loss_and_gradient(model, v, targets, t):
    """
    Mean squared error and its gradient for one batch.

    Input: v - (B, n) raw voltages
           targets - (B, n) or (B, n, out_channels)
           t - (n,) time points
    Output: (loss, dict name -> gradient array)
    """
    targets = _as_targets(targets, model.hp.out_channels)
    out, cache = _forward(model, _input_tensor(model, v, t), keep_cache=True)
    residual = out - targets
    value = float(np.mean(residual ** 2))
    grads = _backward(model, cache, 2.0 * residual / residual.size)
    return value, grads


def loss(model, v, targets, t):
    """Mean over rows, time points and output channels of the squared error."""
    if np.shape(v)[0] == 0:
        raise DimensionError("loss needs a non-empty batch")
    targets = _as_targets(targets, model.hp.out_channels)
    out, _ = _forward(model, _input_tensor(model, v, t))
    return float(np.mean((out - targets) ** 2))


def forward(model, v, grid):
    """
    Evaluate the operator on one voltage row.

    Output: (n, out_channels) array
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (grid.n,):
        raise DimensionError(f"voltage row of length {v.shape} does not match grid of {grid.n} points")
    out, _ = _forward(model, _input_tensor(model, v[None, :], grid.points))
    return out[0]


def training_targets(traj, out_channels):
    if out_channels == 1:
        return traj.displacement.values
    if traj.latent is None:
        raise DimensionError("a two-channel operator needs latent trajectories")
    return np.stack([traj.displacement.values, traj.latent.values], axis=-1)


def train(model, traj, hp, rng):
    """
    Minibatch Adam on the mean squared error.

    Input: model - FnoModel (normalization is fitted here if missing)
           traj - TrajectorySet with at least hp.batch_size rows
           hp - training settings (learning_rate, batch_size, epochs)
           rng - RngStream for epoch shuffling
    Output: TrainReport
    """
    if traj.rows < hp.batch_size:
        raise ValueError(f"{traj.rows} training rows are fewer than the batch size {hp.batch_size}")
    if model.normalization is None:
        model.normalization, _ = normalize_inputs(traj.voltage)
    v = traj.voltage.values
    t = traj.grid.points
    targets = _as_targets(training_targets(traj, model.hp.out_channels), model.hp.out_channels)
    optimizer = Adam(lr=hp.learning_rate)
    gen = rng.generator()
    started = time.perf_counter()

    trace = []
    for epoch in range(hp.epochs):
        order = gen.permutation(traj.rows)
        total = 0.0
        for batch, start in enumerate(range(0, traj.rows, hp.batch_size)):
            idx = order[start:start + hp.batch_size]
            value, grads = loss_and_gradient(model, v[idx], targets[idx], t)
            if not np.isfinite(value):
                raise TrainingError(epoch, batch, value)
            total += value * len(idx)
            optimizer.step(model.params, grads)
        trace.append(total / traj.rows)

    final = loss(model, v, targets, t)
    return TrainReport(trace, final, time.perf_counter() - started, rng.seed, hp)


def predict(model, voltage):
    """
    Apply the operator to every row of an ensemble.

    Output: (displacement SignalEnsemble, latent SignalEnsemble or None)
    """
    if model.hp.modes > voltage.n // 2 + 1:
        raise DimensionError(f"grid of {voltage.n} points cannot carry {model.hp.modes} modes")
    t = voltage.grid.points
    outputs = []
    for start in range(0, voltage.rows, PREDICT_CHUNK):
        chunk = voltage.values[start:start + PREDICT_CHUNK]
        out, _ = _forward(model, _input_tensor(model, chunk, t))
        outputs.append(out)
    out = np.concatenate(outputs, axis=0) if outputs else np.zeros((0, voltage.n, model.hp.out_channels))
    displacement = SignalEnsemble(voltage.grid, out[:, :, 0], "displacement", voltage.spec, voltage.seed)
    latent = None
    if model.hp.out_channels == 2:
        latent = SignalEnsemble(voltage.grid, out[:, :, 1], "latent", voltage.spec, voltage.seed)
    return displacement, latent
