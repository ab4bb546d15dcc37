"""Ground-truth sinusoidal signal model, sampling, folding, quantization and metrics.

The signal model is a sum of K complex exponentials

    g(t) = sum_k c_k * exp(j * w_k * t)

Real-valued signals are represented as conjugate pairs (c, w) <-> (conj(c), -w)
so that the same complex machinery serves both cases.  Folding wraps amplitudes
into the half-open interval [-lam, +lam) with the centered modulo map; complex
inputs are folded component-wise (real and imaginary parts independently).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SinusoidalModel",
    "SamplingGrid",
    "evaluate_signal",
    "sample",
    "centered_modulo",
    "quantize",
    "add_noise",
    "mse",
    "peak_amplitude",
]

_PAIR_TOL = 1e-12


@dataclass(frozen=True)
class SinusoidalModel:
    """K-component complex-exponential signal.

    Parameters
    ----------
    amplitudes : (K,) complex
        Coefficients c_k in volts.
    frequencies : (K,) float
        Angular frequencies w_k in rad/s, pairwise distinct.
    real_valued : bool
        If True the components must occur in exact conjugate pairs
        (c, w) <-> (conj(c), -w) and time-domain evaluations return the
        real part (the imaginary part vanishes up to rounding).
    """

    amplitudes: np.ndarray
    frequencies: np.ndarray
    real_valued: bool = False

    def __post_init__(self):
        amps = np.atleast_1d(np.asarray(self.amplitudes, dtype=complex))
        freqs = np.atleast_1d(np.asarray(self.frequencies, dtype=float))
        if amps.shape != freqs.shape or amps.ndim != 1:
            raise ValueError("amplitudes and frequencies must be 1-d of equal length")
        if amps.size < 1:
            raise ValueError("need at least one component")
        if np.unique(freqs).size != freqs.size:
            raise ValueError("frequencies must be pairwise distinct")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "frequencies", freqs)
        if self.real_valued:
            self._check_conjugate_pairs()

    def _check_conjugate_pairs(self):
        order = np.argsort(self.frequencies)
        w = self.frequencies[order]
        c = self.amplitudes[order]
        w_scale = max(1.0, np.abs(w).max())
        c_scale = max(np.abs(c).max(), 1e-300)
        if (np.abs(w + w[::-1]).max() > _PAIR_TOL * w_scale
                or np.abs(c - np.conj(c[::-1])).max() > _PAIR_TOL * c_scale):
            raise ValueError("real_valued model requires exact conjugate pairs")

    @property
    def K(self) -> int:
        return self.amplitudes.size

    @classmethod
    def from_real_sinusoids(cls, freqs_hz, amplitudes, phases=None) -> "SinusoidalModel":
        """Build sum_k a_k * cos(2*pi*f_k*t + phi_k) as K' conjugate pairs."""
        f = np.atleast_1d(np.asarray(freqs_hz, dtype=float))
        a = np.atleast_1d(np.asarray(amplitudes, dtype=float))
        phi = np.zeros_like(f) if phases is None else np.atleast_1d(np.asarray(phases, dtype=float))
        if not (f.shape == a.shape == phi.shape):
            raise ValueError("freqs_hz, amplitudes, phases must have equal length")
        if np.any(f <= 0):
            raise ValueError("real sinusoid frequencies must be positive")
        c_pos = 0.5 * a * np.exp(1j * phi)
        amps = np.concatenate([c_pos, np.conj(c_pos)])
        omegas = np.concatenate([2 * np.pi * f, -2 * np.pi * f])
        return cls(amplitudes=amps, frequencies=omegas, real_valued=True)

    def scaled(self, factor: float) -> "SinusoidalModel":
        return SinusoidalModel(self.amplitudes * factor, self.frequencies, self.real_valued)


@dataclass(frozen=True)
class SamplingGrid:
    """Uniform grid t_n = n*T + offset, n = 0..N-1."""

    T: float
    N: int
    offset: float = 0.0

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("sampling period must be positive")
        if self.N < 1:
            raise ValueError("need at least one sample")

    @property
    def rate(self) -> float:
        return 1.0 / self.T

    @property
    def omega_s(self) -> float:
        return 2 * np.pi / self.T

    @property
    def times(self) -> np.ndarray:
        return self.offset + self.T * np.arange(self.N)


def evaluate_signal(model: SinusoidalModel, t):
    """Evaluate g(t) = sum_k c_k exp(j w_k t); real models return the real part."""
    t_arr = np.asarray(t, dtype=float)
    g = np.exp(1j * np.multiply.outer(t_arr, model.frequencies)) @ model.amplitudes
    if model.real_valued:
        g = g.real
    if np.ndim(t) == 0:
        return g[()]
    return g


def sample(model: SinusoidalModel, grid: SamplingGrid) -> np.ndarray:
    """Pointwise samples g[n] = g(n*T + offset)."""
    return evaluate_signal(model, grid.times)


def _split_complex(func, x, *args, **kwargs):
    if np.iscomplexobj(x):
        return func(np.real(x), *args, **kwargs) + 1j * func(np.imag(x), *args, **kwargs)
    return None


def centered_modulo(x, lam: float):
    """Wrap amplitudes into [-lam, +lam); identity for in-range inputs.

    Satisfies x - centered_modulo(x, lam) in 2*lam*Z exactly; values exactly on
    the upper boundary (odd multiples of lam) map to -lam.  Complex inputs are
    folded component-wise.
    """
    if lam <= 0:
        raise ValueError("fold threshold must be positive")
    out = _split_complex(centered_modulo, x, lam)
    if out is not None:
        return out
    x = np.asarray(x, dtype=float)
    k = np.floor(x / (2 * lam) + 0.5)
    r = x - 2 * lam * k
    # float rounding at the fold boundary can spill one step outside the interval
    r = np.where(r < -lam, r + 2 * lam, r)
    r = np.where(r >= lam, r - 2 * lam, r)
    r = np.where((x >= -lam) & (x < lam), x, r)
    return r[()] if r.ndim == 0 else r


def quantize(x, lam: float, bits: int | None = None):
    """Amplitude quantization.

    With ``bits`` absent this is the grid operator 2*lam*floor((x+lam)/(2*lam)),
    mapping onto the lattice 2*lam*Z with error at most lam.  With ``bits=B`` it
    is a mid-rise uniform B-bit ADC over [-lam, +lam): the 2**B levels sit at
    (k + 1/2)*step for step = 2*lam/2**B, and out-of-range inputs clip to the
    extreme levels.
    """
    if lam <= 0:
        raise ValueError("fold threshold must be positive")
    out = _split_complex(quantize, x, lam, bits)
    if out is not None:
        return out
    x = np.asarray(x, dtype=float)
    if bits is None:
        r = 2 * lam * np.floor((x + lam) / (2 * lam))
    else:
        if bits < 1:
            raise ValueError("bit depth must be >= 1")
        half = 2 ** (bits - 1)
        step = lam / half
        idx = np.clip(np.floor(x / step), -half, half - 1)
        r = (idx + 0.5) * step
    return r[()] if r.ndim == 0 else r


def add_noise(samples, noise_sd: float, seed: int) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise, deterministic for a given seed.

    Complex inputs receive independent real and imaginary noise, each with
    standard deviation ``noise_sd``.
    """
    if noise_sd < 0:
        raise ValueError("noise standard deviation must be nonnegative")
    samples = np.asarray(samples)
    if noise_sd == 0:
        return samples.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if np.iscomplexobj(samples):
        z = rng.standard_normal(samples.shape) + 1j * rng.standard_normal(samples.shape)
    else:
        z = rng.standard_normal(samples.shape)
    return samples + noise_sd * z


def mse(x, y) -> float:
    """Mean squared error (1/N) * sum |x[n] - y[n]|^2."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError("sequences must have equal length")
    return float(np.mean(np.abs(x - y) ** 2))


def peak_amplitude(model: SinusoidalModel, duration: float, n_dense: int | None = None) -> float:
    """Estimate the fold-relevant peak max(|Re g|, |Im g|) over [0, duration].

    Uses a dense sweep with at least 64 points per period of the fastest
    component; real models reduce to max |g(t)|.
    """
    f_max = np.abs(model.frequencies).max() / (2 * np.pi)
    if n_dense is None:
        n_dense = int(min(4e6, max(4096, 64 * f_max * duration)))
    t = np.linspace(0.0, duration, n_dense)
    g = evaluate_signal(model, t)
    if np.iscomplexobj(g):
        return float(max(np.abs(g.real).max(), np.abs(g.imag).max()))
    return float(np.abs(g).max())
