"""
Input voltage fields: Sine family and Gaussian-process draws on an
equispaced time grid.
"""

from dataclasses import dataclass, field

import numpy as np

from src.errors import DimensionError
from src.numerics import DEFAULT_JITTER, cholesky

SINE = "sine"
GP = "gp"
KERNELS = ("rbf", "matern32", "matern52")


@dataclass(frozen=True)
class TimeGrid:
    """
    Equispaced grid on [t_start, t_end] with n points (both ends included).
    """
    n: int
    t_start: float = 0.0
    t_end: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise DimensionError(f"a time grid needs at least 2 points, got {self.n}")
        if not self.t_end > self.t_start:
            raise ValueError("t_end must be greater than t_start")

    @property
    def points(self):
        return np.linspace(self.t_start, self.t_end, self.n)

    @property
    def dt(self):
        return (self.t_end - self.t_start) / (self.n - 1)

    def to_dict(self):
        return {"n": self.n, "t_start": self.t_start, "t_end": self.t_end}


@dataclass(frozen=True)
class FieldSpec:
    """
    Recipe for a family of voltage fields.

    Attributes:
        family: SINE or GP
        omega: angular frequency of the sine family (rad per unit time)
        amp_lo, amp_hi: uniform amplitude range of the sine family
        kernel: one of KERNELS for the GP family
        variance: GP kernel variance
        length_scale: GP kernel length scale
    """
    family: str
    omega: float = 4.0 * np.pi
    amp_lo: float = 0.0
    amp_hi: float = 1.0
    kernel: str = "rbf"
    variance: float = 1.0
    length_scale: float = 0.2

    def __post_init__(self):
        if self.family not in (SINE, GP):
            raise ValueError(f"unknown field family '{self.family}'")
        if self.family == SINE:
            if self.amp_lo > self.amp_hi:
                raise ValueError("amp_lo must not exceed amp_hi")
            if self.omega <= 0:
                raise ValueError("omega must be positive")
        else:
            if self.kernel not in KERNELS:
                raise ValueError(f"unknown kernel '{self.kernel}', expected one of {KERNELS}")
            if self.variance <= 0 or self.length_scale <= 0:
                raise ValueError("GP variance and length scale must be positive")

    @classmethod
    def sine(cls, omega=4.0 * np.pi, amp_lo=0.0, amp_hi=1.0):
        return cls(SINE, omega=omega, amp_lo=amp_lo, amp_hi=amp_hi)

    @classmethod
    def gp(cls, kernel, variance=1.0, length_scale=0.2):
        return cls(GP, kernel=kernel, variance=variance, length_scale=length_scale)

    @property
    def label(self):
        """Kernel name as used in result tables (Sine, RBF, Matern32, Matern52)."""
        if self.family == SINE:
            return "Sine"
        return {"rbf": "RBF", "matern32": "Matern32", "matern52": "Matern52"}[self.kernel]

    def to_dict(self):
        if self.family == SINE:
            return {"family": SINE, "omega": self.omega, "amp_lo": self.amp_lo, "amp_hi": self.amp_hi}
        return {"family": GP, "kernel": self.kernel, "variance": self.variance,
                "length_scale": self.length_scale}

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass(frozen=True, eq=False)
class SignalEnsemble:
    """
    N trajectories sampled on a common grid.

    Attributes:
        grid: TimeGrid shared by every row
        values: (N, n) array, read-only
        channel: 'voltage', 'displacement' or 'latent'
        spec: FieldSpec the rows were drawn from (None for derived signals)
        seed: seed of the generating stream (None for derived signals)
    """
    grid: TimeGrid
    values: np.ndarray
    channel: str = "voltage"
    spec: FieldSpec = None
    seed: int = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2 or values.shape[1] != self.grid.n:
            raise DimensionError(f"ensemble values of shape {values.shape} do not match grid of {self.grid.n} points")
        if not np.all(np.isfinite(values)):
            raise ValueError("ensemble values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.grid.n

    def with_values(self, values, channel=None):
        return SignalEnsemble(self.grid, values, channel or self.channel, self.spec, self.seed, dict(self.meta))

    def select(self, rows):
        """Ensemble restricted to the given row indices or slice."""
        return SignalEnsemble(self.grid, self.values[rows], self.channel, self.spec, self.seed, dict(self.meta))


def sample_sine(spec, N, grid, rng):
    """
    Draw N sine fields A_i * sin(omega * t) with A_i ~ U[amp_lo, amp_hi].
    """
    if spec.family != SINE:
        raise ValueError("sample_sine needs a sine FieldSpec")
    amplitudes = rng.generator().uniform(spec.amp_lo, spec.amp_hi, size=N)
    values = amplitudes[:, None] * np.sin(spec.omega * grid.points)[None, :]
    return SignalEnsemble(grid, values, "voltage", spec, rng.seed)


def kernel_matrix(spec, grid):
    """
    Stationary covariance matrix of the GP family on the grid.

    Input: spec - GP FieldSpec (rbf, matern32 or matern52)
           grid - TimeGrid
    Output: (n, n) symmetric matrix with variance on the diagonal
    """
    if spec.family != GP:
        raise ValueError("kernel_matrix needs a GP FieldSpec")
    t = grid.points
    r = np.abs(t[:, None] - t[None, :])
    s = r / spec.length_scale
    if spec.kernel == "rbf":
        k = np.exp(-0.5 * s ** 2)
    elif spec.kernel == "matern32":
        a = np.sqrt(3.0) * s
        k = (1.0 + a) * np.exp(-a)
    else:
        a = np.sqrt(5.0) * s
        k = (1.0 + a + a ** 2 / 3.0) * np.exp(-a)
    return spec.variance * k


def sample_gp(spec, N, grid, rng, jitter=DEFAULT_JITTER):
    """
    Draw N independent zero-mean GP realizations v = L z.

    Row i uses its own substream of `rng`, so the ensemble does not depend on
    how rows are scheduled. The jitter is relative to the kernel variance.
    """
    L = cholesky(kernel_matrix(spec, grid), jitter=jitter * spec.variance)
    z = np.empty((N, grid.n))
    for i in range(N):
        z[i] = rng.child(i).generator().standard_normal(grid.n)
    return SignalEnsemble(grid, z @ L.T, "voltage", spec, rng.seed)


def sample_field(spec, N, grid, rng):
    if spec.family == SINE:
        return sample_sine(spec, N, grid, rng)
    return sample_gp(spec, N, grid, rng)
