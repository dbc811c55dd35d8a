"""
Discovered ODE models: construction from sparse coefficients, forward
integration and pretty printing.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from src.truthsim import INPUT_FACTORS, format_equation, integrate_terms


class UnstableModelWarning(RuntimeWarning):
    """Some rows of a discovered model diverged during integration."""


@dataclass(frozen=True)
class DiscoveredOde:
    """
    Integrable symbolic model.

    Attributes:
        states: ('d',) or ('d', 'y')
        equations: one tuple of TermDescriptor per state
        name: label used in reports
    """
    states: tuple
    equations: tuple
    name: str = "model"

    def __post_init__(self):
        allowed = set(INPUT_FACTORS)
        for state in self.states:
            allowed.update((state, f"|{state}|"))
        for terms in self.equations:
            for term in terms:
                unknown = set(term.factors) - allowed
                if unknown:
                    raise ValueError(f"term references {sorted(unknown)}, which this model does not integrate")

    @classmethod
    def from_sparse_model(cls, model, name=None):
        equations = tuple(tuple(model.terms(state)) for state in model.states)
        return cls(tuple(model.states), equations, name or model.method)

    @classmethod
    def from_system(cls, system):
        return cls(tuple(system.states), tuple(system.equations), system.name)

    @property
    def term_count(self):
        return sum(len(terms) for terms in self.equations)


@dataclass(frozen=True, eq=False)
class IntegrationResult:
    """
    Rows that integrated cleanly, plus which rows failed.

    Attributes:
        displacement: SignalEnsemble over the successful rows
        latent: SignalEnsemble over the successful rows (two-state models)
        failed: boolean mask over the input rows
        row_index: input row of every successful row
    """
    displacement: object
    latent: object
    failed: np.ndarray
    row_index: np.ndarray

    @property
    def failed_rows(self):
        return int(self.failed.sum())


def integrate(ode, voltage, substeps=10, threads=1):
    """
    Integrate a discovered model from zero initial state.

    Rows whose state becomes non-finite are dropped from the result and
    reported through an UnstableModelWarning.

    Input: ode - DiscoveredOde
           voltage - SignalEnsemble of drives
    Output: IntegrationResult
    """
    states = integrate_terms(ode.equations, ode.states, voltage, substeps, strict=False, threads=threads)
    failed = ~np.all(np.isfinite(states), axis=(1, 2))
    ok = np.flatnonzero(~failed)
    if failed.any():
        warnings.warn(f"{int(failed.sum())} of {voltage.rows} rows of '{ode.name}' diverged",
                      UnstableModelWarning, stacklevel=2)
    kept = voltage.select(ok)
    displacement = kept.with_values(states[ok, :, 0], channel="displacement")
    latent = None
    if len(ode.states) == 2:
        latent = kept.with_values(states[ok, :, 1], channel="latent")
    return IntegrationResult(displacement, latent, failed, ok)


def pretty_print(ode, precision=".2f"):
    """
    One line per state, terms by descending |coefficient|.

    >>> pretty_print(exp1_model)
    'ḋ = −0.85·|v̇|·d + 0.40·|v̇|·v + 0.20·v̇'
    """
    return "\n".join(format_equation(state, terms, precision) for state, terms in zip(ode.states, ode.equations))
