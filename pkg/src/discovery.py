"""
Sparse regression over a library of candidate monomials: derivative
estimation, library construction, STLSQ and Lasso.
"""

import json
import warnings
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import Lasso

from src.errors import DimensionError, EmptyModelError, LibraryConfigError, ModelFormatError
from src.numerics import lstsq
from src.truthsim import PRIMITIVES, TermDescriptor, canonical_factors, format_equation, primitive_features

STLSQ = "stlsq"
LASSO = "lasso"

INTERVAL = "interval"
NODE = "node"
SCHEMES = (INTERVAL, NODE)

# relative residual below which a column counts as a combination of earlier ones
COLLINEARITY_TOL = 1e-6


@dataclass(frozen=True)
class LibraryConfig:
    """
    Candidate library settings.

    Attributes:
        features: base factor tags to combine (None = every available tag)
        max_degree: highest monomial degree
        include_bias: a constant column is not supported and must stay False
        scheme: 'interval' evaluates one row per sampling interval, using
                forward-difference rates and midpoint states; 'node' evaluates
                one row per sample with central-difference rates
    """
    features: tuple = None
    max_degree: int = 2
    include_bias: bool = False
    scheme: str = INTERVAL

    def __post_init__(self):
        if self.max_degree < 1:
            raise LibraryConfigError(f"max_degree must be >= 1, got {self.max_degree}")
        if self.include_bias:
            raise LibraryConfigError("a constant library column is not supported")
        if self.scheme not in SCHEMES:
            raise LibraryConfigError(f"unknown library scheme '{self.scheme}', expected one of {SCHEMES}")
        if self.features is not None:
            if len(self.features) == 0:
                raise LibraryConfigError("the feature set must not be empty")
            try:
                object.__setattr__(self, "features", canonical_factors(tuple(dict.fromkeys(self.features))))
            except ValueError as error:
                raise LibraryConfigError(str(error)) from error

    @classmethod
    def default_for(cls, state_count):
        """Degree 2 for one-state systems, degree 3 once the latent enters."""
        return cls(max_degree=2 if state_count == 1 else 3)

    def to_dict(self):
        return {"features": None if self.features is None else list(self.features),
                "max_degree": self.max_degree, "include_bias": self.include_bias, "scheme": self.scheme}


@dataclass(frozen=True, eq=False)
class RegressionProblem:
    """
    Stacked library matrix and derivative targets.

    Attributes:
        theta: (rows, p) library, rows ordered sample-major then time;
               rows is N*(n-1) for the interval scheme and N*n for the node scheme
        targets: dict state -> (rows,) derivative estimates
        descriptors: tuple of p canonical factor tuples, one per column
        states: state names with a target
    """
    theta: np.ndarray
    targets: dict
    descriptors: tuple
    states: tuple

    def __post_init__(self):
        if self.theta.ndim != 2 or self.theta.shape[1] != len(self.descriptors):
            raise DimensionError("library columns and descriptors disagree")
        for state in self.states:
            if self.targets[state].shape != (self.theta.shape[0],):
                raise DimensionError(f"target for '{state}' does not match the library rows")

    @property
    def rows(self):
        return self.theta.shape[0]

    def restrict(self, columns):
        """Problem using only the given column indices."""
        columns = list(columns)
        return RegressionProblem(self.theta[:, columns], self.targets,
                                 tuple(self.descriptors[j] for j in columns), self.states)


@dataclass
class SparseModel:
    """
    Fitted sparse coefficients, one vector per state.

    Attributes:
        states: state names
        descriptors: library column descriptors
        coefficients: dict state -> (p,) array, exact zeros for pruned columns
        method: 'stlsq' or 'lasso'
        threshold: STLSQ threshold or Lasso penalty
        diagnostics: dict state -> {'residual_norm': ..., 'iterations': ...}
        converged: False when the solver hit its iteration cap
        label: method name used in reports (NSO, SINDy, ...)
    """
    states: tuple
    descriptors: tuple
    coefficients: dict
    method: str
    threshold: float
    diagnostics: dict = field(default_factory=dict)
    converged: bool = True
    label: str = None

    def active(self, state):
        return np.flatnonzero(self.coefficients[state])

    def terms(self, state):
        return [TermDescriptor(self.coefficients[state][j], self.descriptors[j]) for j in self.active(state)]

    def equations(self, precision=".4g"):
        return [format_equation(state, self.terms(state), precision) for state in self.states]

    def to_dict(self):
        return {
            "method": self.method,
            "threshold": self.threshold,
            "states": list(self.states),
            "descriptors": [list(d) for d in self.descriptors],
            "coefficients": {s: [float(c) for c in self.coefficients[s]] for s in self.states},
            "diagnostics": self.diagnostics,
            "converged": self.converged,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            states = tuple(data["states"])
            return cls(states, tuple(tuple(d) for d in data["descriptors"]),
                       {s: np.asarray(data["coefficients"][s], dtype=np.float64) for s in states},
                       data["method"], data["threshold"], data.get("diagnostics", {}), data.get("converged", True),
                       data.get("label"))
        except (KeyError, TypeError) as error:
            raise ModelFormatError(f"malformed sparse model: {error}") from error


def estimate_derivative(signal):
    """
    Time derivative of every row: central differences inside, second-order
    one-sided differences at both ends.

    Input: signal - SignalEnsemble with n >= 3
    Output: SignalEnsemble of the same shape
    """
    if signal.n < 3:
        raise DimensionError(f"derivative estimation needs at least 3 points, got {signal.n}")
    return signal.with_values(np.gradient(signal.values, signal.grid.dt, axis=1, edge_order=2))


def library_descriptors(available, config):
    base = available if config.features is None else config.features
    missing = [tag for tag in base if tag not in available]
    if missing:
        raise LibraryConfigError(f"features {missing} are not available for this data")
    base = [tag for tag in PRIMITIVES if tag in base]
    return tuple(combo for degree in range(1, config.max_degree + 1)
                 for combo in combinations_with_replacement(base, degree))


def build_library(voltage, displacement, latent=None, config=None, vdot=None):
    """
    Evaluate every candidate monomial on the data and estimate the targets.

    The interval scheme (default) matches a drive that is linear between
    samples: on each interval the voltage rate is constant, so the rate
    columns, the state rates and the midpoint states all come from the two
    end samples. The node scheme uses estimate_derivative at every sample.

    Input: voltage, displacement, latent - SignalEnsembles on one grid
           config - LibraryConfig (default: degree 2 / 3 by state count)
           vdot - optional exact voltage rate at the samples; estimated from
                  voltage when None (averaged to midpoints by the interval scheme)
    Output: RegressionProblem
    """
    if displacement.grid != voltage.grid or displacement.rows != voltage.rows:
        raise DimensionError("voltage and displacement must share grid and row count")
    if latent is not None and (latent.grid != voltage.grid or latent.rows != voltage.rows):
        raise DimensionError("latent must share grid and row count with voltage")
    states = ("d",) if latent is None else ("d", "y")
    if config is None:
        config = LibraryConfig.default_for(len(states))
    if voltage.n < 3:
        raise DimensionError(f"library construction needs at least 3 points, got {voltage.n}")

    stacked = displacement.values[:, :, None] if latent is None else \
        np.stack([displacement.values, latent.values], axis=-1)
    if config.scheme == INTERVAL:
        dt = voltage.grid.dt
        v = _midpoints(voltage.values)
        rate = np.diff(voltage.values, axis=1) / dt if vdot is None else _midpoints(vdot.values)
        state_values = _midpoints(stacked)
        state_rates = np.diff(stacked, axis=1) / dt
    else:
        v = voltage.values
        rate = (estimate_derivative(voltage) if vdot is None else vdot).values
        state_values = stacked
        state_rates = np.gradient(stacked, voltage.grid.dt, axis=1, edge_order=2)

    features = primitive_features(v, rate, state_values, states)
    available = [tag for tag in PRIMITIVES if tag in features]
    descriptors = library_descriptors(available, config)

    theta = np.empty((v.size, len(descriptors)))
    for j, factors in enumerate(descriptors):
        column = np.ones(v.shape)
        for tag in factors:
            column = column * features[tag]
        theta[:, j] = column.ravel()

    targets = {state: state_rates[:, :, i].ravel() for i, state in enumerate(states)}
    return RegressionProblem(theta, targets, descriptors, states)


def _midpoints(values):
    return 0.5 * (values[:, 1:] + values[:, :-1])


def independent_columns(theta, tol=COLLINEARITY_TOL):
    """
    Indices of a linearly independent subset of the library columns.

    Columns are visited in library order; each one is normalized and kept
    only if its residual after projection onto the columns already kept
    exceeds tol. Identical columns (v*v and |v|*|v|, or y and |y| for a
    non-negative y) keep their first occurrence. All-zero columns are dropped.
    """
    norms = np.linalg.norm(theta, axis=0)
    basis = np.empty((theta.shape[0], theta.shape[1]))
    kept = []
    for j in range(theta.shape[1]):
        if norms[j] == 0.0:
            continue
        q = theta[:, j] / norms[j]
        # two Gram-Schmidt passes keep the basis orthonormal to working precision
        for _ in range(2):
            q = q - basis[:, :len(kept)] @ (basis[:, :len(kept)].T @ q)
        residual = np.linalg.norm(q)
        if residual > tol:
            basis[:, len(kept)] = q / residual
            kept.append(j)
    return np.array(kept, dtype=int)


def _stlsq_single(theta, target, threshold, max_iter, state):
    xi = lstsq(theta, target)
    active = np.ones(theta.shape[1], dtype=bool)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        keep = active & (np.abs(xi) >= threshold)
        if not keep.any():
            raise EmptyModelError(state, threshold)
        if np.array_equal(keep, active):
            break
        active = keep
        xi = np.zeros_like(xi)
        xi[active] = lstsq(theta[:, active], target)
    else:
        small = np.abs(xi) < threshold
        if np.all(small | ~active):
            raise EmptyModelError(state, threshold)
        xi[small] = 0.0
    xi[~active] = 0.0
    return xi, iterations


def stlsq(problem, threshold=0.01, max_iter=10, collinearity_tol=COLLINEARITY_TOL):
    """
    Sequentially thresholded least squares.

    Starting from the full least-squares fit, columns with |xi| < threshold
    are dropped and the rest refit until the active set stops changing or
    max_iter refits have been done. Columns that are linear combinations of
    earlier columns on this data are left out of every fit and get a zero
    coefficient. threshold = 0 returns the least-squares fit over the
    independent columns.

    Input: problem - RegressionProblem
           threshold - pruning threshold (>= 0)
           max_iter - refit cap
           collinearity_tol - see independent_columns
    Output: SparseModel
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    columns = independent_columns(problem.theta, collinearity_tol)
    if len(columns) == 0:
        raise DimensionError("every library column is zero on this data")
    theta = problem.theta[:, columns]
    coefficients, diagnostics = {}, {}
    for state in problem.states:
        target = problem.targets[state]
        xi = np.zeros(len(problem.descriptors))
        xi[columns], iterations = _stlsq_single(theta, target, threshold, max_iter, state)
        coefficients[state] = xi
        diagnostics[state] = {"residual_norm": float(np.linalg.norm(problem.theta @ xi - target)),
                              "iterations": iterations,
                              "dependent_columns": len(problem.descriptors) - len(columns)}
    return SparseModel(problem.states, problem.descriptors, coefficients, STLSQ, threshold, diagnostics)


def lasso(problem, alpha, max_iter=10000, tol=1e-8, collinearity_tol=COLLINEARITY_TOL):
    """
    L1-penalized regression, 1/2 ||theta xi - y||^2 + alpha ||xi||_1, solved by
    coordinate descent on RMS-scaled columns.

    Dependent columns are handled as in stlsq. Non-convergence within
    max_iter sweeps is reported through the model's `converged` flag, never
    raised.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    columns = independent_columns(problem.theta, collinearity_tol)
    if len(columns) == 0:
        raise DimensionError("every library column is zero on this data")
    theta = problem.theta[:, columns]
    scale = np.sqrt(np.mean(theta ** 2, axis=0))
    scaled = theta / scale
    coefficients, diagnostics = {}, {}
    converged = True
    for state in problem.states:
        target = problem.targets[state]
        # sklearn minimizes ||.||^2 / (2 * rows) + alpha' ||.||_1
        regressor = Lasso(alpha=alpha / problem.rows, fit_intercept=False, max_iter=max_iter, tol=tol)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            regressor.fit(scaled, target)
        if any(issubclass(w.category, ConvergenceWarning) for w in caught):
            converged = False
        xi = np.zeros(len(problem.descriptors))
        xi[columns] = regressor.coef_ / scale
        coefficients[state] = xi
        diagnostics[state] = {"residual_norm": float(np.linalg.norm(problem.theta @ xi - target)),
                              "iterations": int(regressor.n_iter_),
                              "dependent_columns": len(problem.descriptors) - len(columns)}
    return SparseModel(problem.states, problem.descriptors, coefficients, LASSO, alpha, diagnostics, converged)


def write_model_report(model, text_path, json_path, label=None):
    """
    Human-readable equations (4 significant digits) plus a JSON manifest that
    load_sparse_model reads back.
    """
    lines = [f"# {label or model.label or model.method}"] + model.equations(".4g")
    with open(text_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(model.to_dict(), f, indent=2, sort_keys=True)


def load_sparse_model(json_path):
    try:
        with open(json_path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as error:
        raise ModelFormatError(f"{json_path} is not valid JSON: {error}") from error
    return SparseModel.from_dict(data)
