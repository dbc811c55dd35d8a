"""
Ground-truth hysteresis systems, their simulation under piecewise-linear
voltage drives, and the measurement corruptions (noise, downsampling).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from src.errors import DimensionError, SimulationError, UnknownSystemError
from src.fields import SignalEnsemble, TimeGrid
from src.numerics import map_row_chunks, rk4_step

# Canonical factor order: rate factors first, then input, then states.
PRIMITIVES = ("vdot", "|vdot|", "v", "|v|", "d", "|d|", "y", "|y|")
RATE_FACTORS = ("vdot", "|vdot|")
INPUT_FACTORS = ("vdot", "|vdot|", "v", "|v|")
SYMBOLS = {"vdot": "v̇", "|vdot|": "|v̇|", "v": "v", "|v|": "|v|",
           "d": "d", "|d|": "|d|", "y": "y", "|y|": "|y|"}
RATE_SYMBOLS = {"d": "ḋ", "y": "ẏ"}


def canonical_factors(factors):
    """Sort factor tags into canonical order (repeats encode powers)."""
    for tag in factors:
        if tag not in PRIMITIVES:
            raise ValueError(f"unknown feature tag '{tag}'")
    return tuple(sorted(factors, key=PRIMITIVES.index))


@dataclass(frozen=True)
class TermDescriptor:
    """
    One monomial of a state equation: coefficient * product(factors).
    """
    coefficient: float
    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", canonical_factors(self.factors))
        object.__setattr__(self, "coefficient", float(self.coefficient))


@dataclass(frozen=True)
class HysteresisSystem:
    """
    Symbolic ODE system with one or two states.

    Attributes:
        name: identifier (exp1..exp4)
        states: state names, ('d',) or ('d', 'y')
        equations: one tuple of TermDescriptor per state
    """
    name: str
    states: tuple
    equations: tuple

    def __post_init__(self):
        if len(self.states) != len(self.equations):
            raise ValueError("one equation per state is required")
        if len(self.states) == 1:
            for term in self.equations[0]:
                if "y" in term.factors or "|y|" in term.factors:
                    raise ValueError("a single-state system cannot reference the latent y")

    @property
    def state_count(self):
        return len(self.states)


def _system(name, d_terms, y_terms=None):
    equations = [tuple(TermDescriptor(c, f) for c, f in d_terms)]
    states = ("d",)
    if y_terms is not None:
        equations.append(tuple(TermDescriptor(c, f) for c, f in y_terms))
        states = ("d", "y")
    return HysteresisSystem(name, states, tuple(equations))


_REFERENCE = {
    "exp1": ([(0.4, ("|vdot|", "v")), (-0.85, ("|vdot|", "d")), (0.2, ("vdot",))], None),
    "exp2": ([(5.0, ("vdot",)), (-0.25, ("|vdot|", "d")), (-0.5, ("vdot", "|d|"))], None),
    "exp3": ([(2.0, ("|vdot|", "v", "y")), (-4.70, ("|vdot|", "d", "y")), (3.0, ("vdot", "y"))],
             [(1.0, ("|vdot|", "v")), (-2.35, ("|vdot|", "y")), (1.5, ("vdot",))]),
    "exp4": ([(4.0, ("vdot", "y")), (-2.5, ("|vdot|", "d", "y")), (-0.2, ("vdot", "|d|", "y"))],
             [(2.0, ("vdot",)), (-1.25, ("|vdot|", "y")), (-0.1, ("vdot", "|y|"))]),
}

# Models reported as discovered by the operator + STLSQ pipeline.
_REPORTED = {
    "exp1": ([(0.39, ("|vdot|", "v")), (-0.83, ("|vdot|", "d")), (0.2, ("vdot",))], None),
    "exp2": ([(4.91, ("vdot",)), (-0.25, ("|vdot|", "d")), (-0.48, ("vdot", "|d|"))], None),
    "exp3": ([(1.98, ("|vdot|", "v", "y")), (-4.67, ("|vdot|", "d", "y")), (2.98, ("vdot", "y"))],
             [(0.99, ("|vdot|", "v")), (-2.32, ("|vdot|", "y")), (1.49, ("vdot",))]),
    "exp4": ([(3.74, ("vdot", "y")), (-2.4, ("|vdot|", "d", "y")), (-0.1, ("vdot", "|d|", "y"))],
             [(1.87, ("vdot",)), (-1.20, ("|vdot|", "y")), (-0.05, ("vdot", "|y|"))]),
}


def reference_system(name):
    """
    Ground-truth system of an experiment.

    Input: name - 'exp1', 'exp2', 'exp3' or 'exp4'
    Output: HysteresisSystem
    """
    if name not in _REFERENCE:
        raise UnknownSystemError(f"unknown reference system '{name}', expected one of {sorted(_REFERENCE)}")
    return _system(name, *_REFERENCE[name])


def reported_model(name):
    if name not in _REPORTED:
        raise UnknownSystemError(f"no reported model for '{name}'")
    return _system(f"{name}-reported", *_REPORTED[name])


def primitive_features(v, vdot, states, state_names):
    """Map every available factor tag to its values."""
    features = {"v": v, "vdot": vdot, "|v|": np.abs(v), "|vdot|": np.abs(vdot)}
    for k, name in enumerate(state_names):
        features[name] = states[..., k]
        features[f"|{name}|"] = np.abs(states[..., k])
    return features


def evaluate_terms(equations, features):
    """
    Right-hand side of every state equation.

    Input: equations - sequence of term tuples, one per state
           features - dict tag -> array (all the same shape)
    Output: list of arrays, one derivative per state
    """
    shape = np.shape(features["v"])
    rates = []
    for terms in equations:
        total = np.zeros(shape)
        for term in terms:
            product = term.coefficient
            for tag in term.factors:
                product = product * features[tag]
            total = total + product
        rates.append(total)
    return rates


def integrate_terms(equations, state_names, voltage, substeps=10, strict=True, threads=1):
    """
    Integrate a term system from a zero initial state under a voltage drive.

    The drive is linear between grid nodes, so v̇ is constant on each grid
    interval; every interval is crossed with `substeps` RK4 steps.

    Input: equations, state_names - symbolic system
           voltage - SignalEnsemble of drives
           substeps - RK4 steps per grid interval
           strict - raise SimulationError on the first non-finite row; otherwise
                    the row is filled with NaN and integration continues
           threads - row-parallel worker count
    Output: (N, n, state_count) array of states at the grid nodes
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    grid = voltage.grid
    t = grid.points
    dt = grid.dt
    h = dt / substeps
    count = len(state_names)

    def run(rows):
        v = voltage.values[rows]
        out = np.zeros((v.shape[0], grid.n, count))
        state = np.zeros((v.shape[0], count))
        failed = np.zeros(v.shape[0], dtype=bool)
        with np.errstate(all="ignore"):
            for j in range(grid.n - 1):
                slope = (v[:, j + 1] - v[:, j]) / dt
                v0 = v[:, j]
                t0 = t[j]

                def rhs(x, tt):
                    features = primitive_features(v0 + slope * (tt - t0), slope, x, state_names)
                    return np.stack(evaluate_terms(equations, features), axis=-1)

                for k in range(substeps):
                    state = rk4_step(rhs, state, t0 + k * h, h, allow_nonfinite=True)
                bad = ~np.all(np.isfinite(state), axis=1) & ~failed
                if bad.any():
                    if strict:
                        row = int(np.flatnonzero(bad)[0]) + (rows.start or 0)
                        raise SimulationError(row=row, time_index=j + 1, time=float(t[j + 1]))
                    failed |= bad
                    state[bad] = 0.0
                out[:, j + 1, :] = state
        out[failed] = np.nan
        return out

    return map_row_chunks(run, voltage.rows, threads)


@dataclass(frozen=True)
class Corruption:
    noise_level: float = 0.0
    downsample_factor: int = 1

    def to_dict(self):
        return {"noise_level": self.noise_level, "downsample_factor": self.downsample_factor}


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    """
    Paired voltage / displacement (/ latent) trajectories.
    """
    voltage: SignalEnsemble
    displacement: SignalEnsemble
    latent: SignalEnsemble = None
    corruption: Corruption = field(default_factory=Corruption)

    def __post_init__(self):
        for other in (self.displacement, self.latent):
            if other is None:
                continue
            if other.grid != self.voltage.grid or other.rows != self.voltage.rows:
                raise DimensionError("trajectory channels must share grid and row count")

    @property
    def rows(self):
        return self.voltage.rows

    @property
    def grid(self):
        return self.voltage.grid

    def select(self, rows):
        latent = None if self.latent is None else self.latent.select(rows)
        return TrajectorySet(self.voltage.select(rows), self.displacement.select(rows), latent, self.corruption)


def simulate(system, voltage, substeps=10, threads=1):
    """
    Simulate a reference system for every voltage row, starting from zero.

    Input: system - HysteresisSystem
           voltage - SignalEnsemble
           substeps - RK4 steps per grid interval
    Output: TrajectorySet with displacement (and latent for two-state systems)
    """
    states = integrate_terms(system.equations, system.states, voltage, substeps, strict=True, threads=threads)
    displacement = voltage.with_values(states[:, :, 0], channel="displacement")
    latent = None
    if system.state_count == 2:
        latent = voltage.with_values(states[:, :, 1], channel="latent")
    return TrajectorySet(voltage, displacement, latent)


def add_noise(traj, level, rng):
    """
    Additive Gaussian noise on displacement with per-row std = level * RMS(row).
    """
    if level < 0:
        raise ValueError("noise level must be non-negative")
    d = traj.displacement.values
    rms = np.sqrt(np.mean(d ** 2, axis=1))
    noise = np.empty_like(d)
    for i in range(d.shape[0]):
        noise[i] = rng.child(i).generator().standard_normal(d.shape[1])
    noisy = d + (level * rms)[:, None] * noise
    corruption = replace(traj.corruption, noise_level=level)
    return TrajectorySet(traj.voltage, traj.displacement.with_values(noisy), traj.latent, corruption)


def downsample(traj, factor):
    """
    Keep every factor-th grid point starting at index 0.

    Input: traj - TrajectorySet on n points
           factor - stride >= 1
    Output: TrajectorySet on ceil(n / factor) points
    """
    grid = traj.grid
    if factor < 1:
        raise ValueError("downsample factor must be >= 1")
    if factor > grid.n:
        raise DimensionError(f"downsample factor {factor} exceeds grid size {grid.n}")
    if factor == 1:
        return traj
    index = np.arange(0, grid.n, factor)
    new_grid = TimeGrid(len(index), grid.t_start, float(grid.points[index[-1]]))

    def take(ensemble):
        if ensemble is None:
            return None
        return SignalEnsemble(new_grid, ensemble.values[:, index], ensemble.channel,
                              ensemble.spec, ensemble.seed, dict(ensemble.meta))

    corruption = replace(traj.corruption, downsample_factor=traj.corruption.downsample_factor * factor)
    return TrajectorySet(take(traj.voltage), take(traj.displacement), take(traj.latent), corruption)


_SUPERSCRIPTS = {2: "²", 3: "³", 4: "⁴"}


def format_monomial(factors):
    """Render canonical factors, folding repeats into powers (v·v -> v²)."""
    parts = []
    for tag in dict.fromkeys(factors):
        power = factors.count(tag)
        parts.append(SYMBOLS[tag] + (_SUPERSCRIPTS.get(power, f"^{power}") if power > 1 else ""))
    return "·".join(parts)


def format_equation(state, terms, precision=".2f"):
    """
    Render one state equation ordered by descending |coefficient|.

    Example: "ḋ = −0.85·|v̇|·d + 0.40·|v̇|·v + 0.20·v̇"
    """
    ordered = sorted(terms, key=lambda term: -abs(term.coefficient))
    lhs = RATE_SYMBOLS.get(state, f"d{state}/dt")
    if not ordered:
        return f"{lhs} = 0"
    text = f"{lhs} ="
    for i, term in enumerate(ordered):
        magnitude = format(abs(term.coefficient), precision)
        negative = term.coefficient < 0
        if i == 0:
            text += f" {'−' if negative else ''}{magnitude}·{format_monomial(term.factors)}"
        else:
            text += f" {'−' if negative else '+'} {magnitude}·{format_monomial(term.factors)}"
    return text
