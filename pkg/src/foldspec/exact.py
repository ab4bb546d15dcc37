"""Exact recovery from noiseless folded sub-Nyquist captures.

Two-stage inversion of the double folding:

* Range unfolding: the first differences of two channels that share the signal
  but differ in the fold threshold carry the same smooth part, so their
  difference is a sparse spike train with amplitudes 2*lam_b*e_b - 2*lam_a*e_a
  over integer fold counts (e_a, e_b).  When lam_a/lam_b is irrational the
  integer pair is unique per spike and a nearest-value table decodes it.

* Domain unfolding: the unfolded difference sequence is annihilated by a
  degree-K filter whose roots carry the aliased frequencies; the phase ratio
  between the base and the delayed channel pair then selects the alias band,
  giving the true frequency.  Amplitudes follow by least squares.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .acquisition import MultiChannelCapture, finite_difference
from .numerics import lstsq, roots

__all__ = [
    "ThresholdSeparationError",
    "ModelOrderError",
    "ClusteredFrequencyError",
    "PhaseUndefinedError",
    "ResidueSpikes",
    "SpectralEstimate",
    "separate_residues",
    "unfold_channel",
    "prony",
    "aliased_frequencies",
    "estimate_amplitudes",
    "dealias",
    "recover_exact",
]


class ThresholdSeparationError(ValueError):
    """The two fold thresholds cannot disambiguate the observed spike."""


class ModelOrderError(ValueError):
    """The annihilation system is rank deficient for the requested order."""


class ClusteredFrequencyError(ValueError):
    """Recovered modes are too close for a stable amplitude fit."""


class PhaseUndefinedError(ValueError):
    """A component amplitude is too small to carry the de-aliasing phase."""


@dataclass(frozen=True)
class ResidueSpikes:
    """Sparse fold residue of one difference channel.

    The residue at position n_l has amplitude 2*lam*e_l; counts are plain
    integers for real captures and Gaussian integers (complex) when the
    folded signal was complex.
    """

    positions: np.ndarray
    counts: np.ndarray
    threshold: float
    channel: int

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=int)
        counts = np.asarray(self.counts)
        if pos.size and np.any(np.diff(pos) <= 0):
            raise ValueError("spike positions must be strictly increasing")
        if np.any(counts == 0):
            raise ValueError("spike fold counts must be nonzero")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "counts", counts)

    def residue(self, length: int) -> np.ndarray:
        """Dense residue vector u with u[n_l] = 2*lam*e_l."""
        dtype = complex if np.iscomplexobj(self.counts) else float
        u = np.zeros(length, dtype=dtype)
        u[self.positions] = 2 * self.threshold * self.counts
        return u


@dataclass(frozen=True)
class SpectralEstimate:
    """Recovered spectral parameters.

    ``aliased_omega`` lives in the canonical band (-w_s/2, w_s/2];
    ``channel_amplitudes[k, i]`` are the difference-domain amplitudes of mode k
    in channel i.  ``omega`` and ``amplitudes`` (the de-aliased frequencies and
    the time-domain coefficients c_k) are filled once de-aliasing has run.
    """

    aliased_omega: np.ndarray
    channel_amplitudes: np.ndarray
    omega: np.ndarray | None = None
    amplitudes: np.ndarray | None = None


def _pair_table(lam_a: float, lam_b: float, e_max: int):
    e = np.arange(-e_max, e_max + 1)
    ea, eb = np.meshgrid(e, e, indexing="ij")
    vals = 2 * lam_b * eb.ravel() - 2 * lam_a * ea.ravel()
    order = np.argsort(vals, kind="stable")
    return vals[order], ea.ravel()[order], eb.ravel()[order]


def _decode_real(d: np.ndarray, lam_a: float, lam_b: float, e_max: int, distortion: float):
    vals, ea, eb = _pair_table(lam_a, lam_b, e_max)
    if distortion > 0:
        gaps = np.diff(vals)
        min_gap = gaps[gaps > 0].min()
        if min_gap <= 4 * distortion:
            raise ThresholdSeparationError(
                f"threshold pair grid gap {min_gap:g} is within 4x the distortion bound"
            )
    idx = np.searchsorted(vals, d)
    lo = np.clip(idx - 1, 0, vals.size - 1)
    hi = np.clip(idx, 0, vals.size - 1)
    pick_hi = np.abs(vals[hi] - d) < np.abs(vals[lo] - d)
    best = np.where(pick_hi, hi, lo)
    other = np.where(pick_hi, lo, hi)
    if distortion > 0:
        ambiguous = ((np.abs(vals[other] - d) <= distortion)
                     & (np.abs(vals[best] - d) <= distortion)
                     & (vals[other] != vals[best]))
        if np.any(ambiguous):
            raise ThresholdSeparationError(
                "two residue grid points fall within the distortion bound"
            )
    return ea[best], eb[best]


def separate_residues(v_a, v_b, lam_a: float, lam_b: float, e_max: int = 10,
                      channels=(0, 1), distortion: float = 0.0):
    """Decode per-sample fold counts from the channel difference d = v_a - v_b.

    Each sample's pair (e_a, e_b) minimizes |d[n] - (2*lam_b*e_b - 2*lam_a*e_a)|
    over the integer square [-e_max, e_max]^2; with distortion below the table
    gap the minimizer is exact and unique.  Complex streams decode the real and
    imaginary parts independently.  Returns one spike list per channel, keeping
    only nonzero counts.
    """
    v_a = np.asarray(v_a)
    v_b = np.asarray(v_b)
    if v_a.shape != v_b.shape:
        raise ValueError("channel streams must have equal length")
    if e_max < 1:
        raise ValueError("e_max must be >= 1")
    d = v_a - v_b
    if np.iscomplexobj(d):
        ea_r, eb_r = _decode_real(d.real, lam_a, lam_b, e_max, distortion)
        ea_i, eb_i = _decode_real(d.imag, lam_a, lam_b, e_max, distortion)
        ea = ea_r + 1j * ea_i
        eb = eb_r + 1j * eb_i
    else:
        ea, eb = _decode_real(d, lam_a, lam_b, e_max, distortion)
    spikes = []
    for e, lam, ch in ((ea, lam_a, channels[0]), (eb, lam_b, channels[1])):
        pos = np.nonzero(e != 0)[0]
        spikes.append(ResidueSpikes(pos, e[pos], lam, ch))
    return spikes[0], spikes[1]


def unfold_channel(v, spikes: ResidueSpikes) -> np.ndarray:
    """Add the decoded residue back: g_bar = v + sum_l 2*lam*e_l*delta[n-n_l]."""
    v = np.asarray(v)
    return v + spikes.residue(len(v))


def prony(gbar, K: int):
    """Annihilating filter (monic, h[0] = 1) and its roots for K modes.

    ``gbar`` may be one difference sequence or several sequences sharing the
    same modes (their annihilation equations are stacked).  A single sequence
    must have length >= 2K.  Raises :class:`ModelOrderError` when the stacked
    system is rank deficient, i.e. the data carries fewer than K active modes.
    """
    if K < 1:
        raise ValueError("model order must be >= 1")
    if isinstance(gbar, np.ndarray) and gbar.ndim == 1:
        seqs = [gbar]
    else:
        seqs = [np.asarray(s) for s in gbar]
    blocks = []
    rhs = []
    for s in seqs:
        L = len(s)
        if L < K + 1:
            continue
        blocks.append(toeplitz(s[K - 1:L - 1], s[K - 1::-1][:K]))
        rhs.append(-s[K:])
    if not blocks:
        raise ModelOrderError(f"need more than {K} samples to fit {K} modes")
    T = np.vstack(blocks).astype(complex)
    b = np.concatenate(rhs).astype(complex)
    if T.shape[0] < K:
        raise ModelOrderError(
            f"{T.shape[0]} annihilation equations cannot determine {K} filter taps"
        )
    sv = np.linalg.svd(T, compute_uv=False)
    if sv[0] == 0 or sv[K - 1] / sv[0] < 1e-10:
        raise ModelOrderError("annihilation system is rank deficient (model-order mismatch)")
    h = np.concatenate([[1.0 + 0j], lstsq(T, b)])
    return h, roots(h)


def aliased_frequencies(u, T: float) -> np.ndarray:
    """Map filter roots to angular frequencies in the band (-w_s/2, w_s/2]."""
    return np.angle(np.asarray(u)) / T


def estimate_amplitudes(gbar, u) -> np.ndarray:
    """Least-squares fit of gbar[n] = sum_k c_k * u_k^n for the mode weights."""
    gbar = np.asarray(gbar)
    u = np.asarray(u, dtype=complex)
    if u.size > 1:
        gap = np.abs(u[:, None] - u[None, :])
        gap[np.diag_indices_from(gap)] = np.inf
        if gap.min() < 1e-6:
            raise ClusteredFrequencyError(
                f"mode gap {gap.min():.2e} is too small for a stable amplitude fit"
            )
    n = np.arange(len(gbar))
    theta = u[None, :] ** n[:, None]
    return lstsq(theta, gbar.astype(complex))


def dealias(aliased_omega, c_base, c_delayed, delay: float, omega_s: float) -> np.ndarray:
    """Resolve alias bands from the base/delayed amplitude phase ratio.

    phi_k = arg(c_delayed/c_base) estimates w_k * Td; the band index
    m = round((phi_k/Td - nu_k) / w_s) snaps the coarse phase estimate onto the
    alias grid, so the returned w_k = nu_k + m*w_s inherits the precision of
    the aliased estimate.  Requires |w_k|*Td <= pi and Td not a multiple of T.
    """
    nu = np.asarray(aliased_omega, dtype=float)
    c_base = np.asarray(c_base, dtype=complex)
    c_delayed = np.asarray(c_delayed, dtype=complex)
    if delay <= 0:
        raise ValueError("channel delay must be positive to de-alias")
    floor = 1e-12 * max(np.abs(c_base).max(), np.abs(c_delayed).max())
    if np.any(np.abs(c_base) < floor):
        raise PhaseUndefinedError("a component amplitude is too small to carry phase")
    phi = np.angle(c_delayed / c_base)
    m = np.round((phi / delay - nu) / omega_s)
    return nu + m * omega_s


def recover_exact(cap: MultiChannelCapture, K: int, e_max: int = 10) -> SpectralEstimate:
    """Full exact pipeline on a (noiseless) capture.

    difference -> residue separation on channel pairs (0,1) and (2,3) ->
    unfold -> annihilating filter on channels 0,1 -> per-channel amplitudes ->
    de-alias -> time-domain coefficients c_k = c_{k,0} / (exp(j*w_k*T) - 1).
    """
    cfg = cap.config
    cfg.validate_for_exact(K)
    T = cfg.T
    omega_s = 2 * np.pi / T
    v = finite_difference(cap).v
    sp0, sp1 = separate_residues(v[0], v[1], cfg.lam0, cfg.lam1, e_max, channels=(0, 1))
    sp2, sp3 = separate_residues(v[2], v[3], cfg.lam0, cfg.lam1, e_max, channels=(2, 3))
    gbar = [unfold_channel(v[i], sp) for i, sp in enumerate((sp0, sp1, sp2, sp3))]
    _, u = prony([gbar[0], gbar[1]], K)
    nu = aliased_frequencies(u, T)
    order = np.argsort(nu)
    u, nu = u[order], nu[order]
    c = np.column_stack([estimate_amplitudes(gbar[i], u) for i in range(4)])
    omega = dealias(nu, c[:, 0], c[:, 2], cfg.delay, omega_s)
    amplitudes = c[:, 0] / (np.exp(1j * omega * T) - 1)
    return SpectralEstimate(nu, c, omega, amplitudes)
