"""
Numerical substrate: real FFT pair, Cholesky, least squares, RK4, gradient
checking and reproducible random streams.

Conventions:
    rfft is unnormalized, irfft scales by 1/n (numpy's "backward" norm), so
    irfft(rfft(x), n) == x and sum(x**2) == (|c0|^2 + 2*sum|c_m|^2 [+ |c_nyq|^2]) / n.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from src.errors import DecompositionError, DimensionError, GradientCheckError, IntegrationError

LSTSQ_RCOND = 1e-12
DEFAULT_JITTER = 1e-8


def rfft(x, axis=-1):
    """
    Forward real-to-complex transform.

    Input: x - real array, length n >= 2 along `axis`
    Output: complex array with n//2 + 1 coefficients along `axis`
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[axis] < 2:
        raise DimensionError("rfft needs at least 2 samples")
    return np.fft.rfft(x, axis=axis)


def irfft(c, n, axis=-1):
    """
    Inverse of rfft for a length-n real signal.

    Input: c - complex array with n//2 + 1 coefficients along `axis`
           n - length of the real output
    Output: real array of length n along `axis`
    """
    c = np.asarray(c, dtype=np.complex128)
    if c.ndim == 0 or c.shape[axis] != n // 2 + 1:
        raise DimensionError(f"irfft of length {n} needs {n // 2 + 1} coefficients, "
                             f"got {c.shape[axis] if c.ndim else 0}")
    return np.fft.irfft(c, n=n, axis=axis)


def cholesky(A, jitter=DEFAULT_JITTER):
    """
    Lower Cholesky factor of A + jitter*I.

    Input: A - square symmetric matrix
           jitter - diagonal shift added before factorizing
    Output: lower-triangular L with L @ L.T == A + jitter*I
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"cholesky needs a square matrix, got shape {A.shape}")
    if not np.allclose(A, A.T, rtol=1e-12, atol=0.0):
        raise DimensionError("cholesky needs a symmetric matrix")
    shifted = A + jitter * np.eye(A.shape[0])
    factor, info = lapack.dpotrf(shifted, lower=1, clean=1)
    if info > 0:
        raise DecompositionError(pivot=info - 1)
    if info < 0:
        raise DimensionError(f"invalid argument {-info} passed to dpotrf")
    return np.tril(factor)


def lstsq(A, b):
    """
    Minimum-norm least-squares solution of A x = b via SVD.

    Singular values below LSTSQ_RCOND * max singular value are treated as zero.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] == 0 or A.shape[1] == 0:
        raise DimensionError(f"lstsq needs a non-empty matrix, got shape {A.shape}")
    if A.shape[0] != b.shape[0]:
        raise DimensionError(f"lstsq row mismatch: {A.shape[0]} vs {b.shape[0]}")
    x, *_ = np.linalg.lstsq(A, b, rcond=LSTSQ_RCOND)
    return x


def rk4_step(f, state, t, h, allow_nonfinite=False):
    """
    One classical Runge-Kutta step.

    Input: f - derivative function f(state, t)
           state - current state array
           t - current time
           h - step size (> 0)
           allow_nonfinite - let NaN/Inf propagate instead of raising; callers
                             that track per-row failures use this
    Output: state after one step of size h
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    k1 = f(state, t)
    k2 = f(state + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(state + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(state + h * k3, t + h)
    if not allow_nonfinite:
        for stage_time, k in ((t, k1), (t + 0.5 * h, k2), (t + 0.5 * h, k3), (t + h, k4)):
            if not np.all(np.isfinite(k)):
                raise IntegrationError(stage_time)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def grad_check(loss, grad, params, eps=1e-6, kink_tol=None):
    """
    Compare an analytic gradient against central finite differences.

    Input: loss - scalar function of a flat parameter vector
           grad - function returning the analytic gradient (same shape as params)
           params - flat parameter vector
           eps - finite-difference step in [1e-7, 1e-4]
           kink_tol - when set, components whose central differences at eps
                      and eps/2 disagree by more than this relative amount
                      are left out (the step crosses a kink of a piecewise
                      linear activation there)
    Output: max over compared components of
            |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    params = np.array(params, dtype=np.float64).ravel()
    analytic = np.asarray(grad(params.copy()), dtype=np.float64).ravel()
    numeric = _central_differences(loss, params, eps)
    compared = np.ones(params.size, dtype=bool)
    if kink_tol is not None:
        half = _central_differences(loss, params, eps / 2.0)
        spread = np.abs(numeric - half) / np.maximum(np.maximum(np.abs(numeric), np.abs(half)), 1e-8)
        compared = spread <= kink_tol
        if not compared.any():
            raise GradientCheckError("every component crosses a kink at this step size")
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)[compared] / denom[compared]))


def _central_differences(loss, params, eps):
    numeric = np.empty_like(params)
    for i in range(params.size):
        probe = params.copy()
        probe[i] = params[i] + eps
        upper = loss(probe)
        probe[i] = params[i] - eps
        lower = loss(probe)
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise GradientCheckError(f"non-finite loss while perturbing component {i}")
        numeric[i] = (upper - lower) / (2.0 * eps)
    return numeric


@dataclass(frozen=True)
class RngStream:
    """
    Reproducible random stream.

    Attributes:
        seed: 64-bit root seed
        stream: purpose counter (training data, test data, noise, ...)
        substream: per-row / per-worker counter
        algorithm: bit generator name
    """
    seed: int
    stream: int = 0
    substream: int = 0
    algorithm: str = "PCG64"

    def generator(self):
        """Fresh numpy Generator positioned at the start of this stream."""
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream, self.substream))
        bit_generator = getattr(np.random, self.algorithm)(sequence)
        return np.random.Generator(bit_generator)

    def spawn(self, stream):
        return RngStream(self.seed, stream, 0, self.algorithm)

    def child(self, substream):
        return RngStream(self.seed, self.stream, substream, self.algorithm)


def map_row_chunks(fn, n_rows, threads=1):
    """
    Apply fn to contiguous row slices and stack the results in row order.

    Chunk boundaries depend only on n_rows and threads, and fn must treat rows
    independently, so the result does not depend on scheduling.
    """
    if threads <= 1 or n_rows < 2:
        return fn(slice(0, n_rows))
    bounds = np.linspace(0, n_rows, min(threads, n_rows) + 1).astype(int)
    slices = [slice(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=len(slices)) as pool:
        parts = list(pool.map(fn, slices))
    return np.concatenate(parts, axis=0)
