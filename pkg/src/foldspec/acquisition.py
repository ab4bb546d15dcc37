"""Quad-channel folded-acquisition simulator.

Four channels observe the same signal through two distinct fold thresholds and
a sub-sample time delay:

    y_0[n] = M_lam0(g(nT))        y_1[n] = M_lam1(g(nT))
    y_2[n] = M_lam0(g(nT + Td))   y_3[n] = M_lam1(g(nT + Td))

so channels (0, 1) and (2, 3) are pairwise redundant in the unfolded signal.
Non-idealities are applied in the physical order of the chain: fold (with
optional per-fold jitter), additive output noise, then ADC quantization.
Ground truth is stored on the capture for evaluation only; recovery code works
from the folded streams and config alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .signal import (
    SamplingGrid,
    SinusoidalModel,
    add_noise,
    centered_modulo,
    quantize,
    sample,
)

__all__ = [
    "CaptureConfig",
    "MultiChannelCapture",
    "DifferenceStreams",
    "capture",
    "finite_difference",
    "simulate_nonideal_fold",
    "save_capture_csv",
    "load_capture_csv",
]


@dataclass(frozen=True)
class CaptureConfig:
    """Acquisition parameters of the four-channel folded front end.

    ``counts`` holds the per-channel sample counts (N_0..N_3); a scalar is
    broadcast to all channels.  ``bit_depth=None`` disables ADC quantization.
    ``noise_prefold`` moves the Gaussian noise injection before the folder
    (ablation switch; the default models noise at the folder output).
    """

    lam0: float
    lam1: float
    delay: float
    sample_rate: float
    counts: tuple
    bit_depth: int | None = None
    noise_sd: float = 0.0
    fold_jitter: float = 0.0
    noise_prefold: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lam0 <= 0 or self.lam1 <= 0:
            raise ValueError("fold thresholds must be positive")
        if self.lam0 == self.lam1:
            raise ValueError("fold thresholds must differ")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        if self.delay < 0:
            raise ValueError("channel delay must be nonnegative")
        if self.noise_sd < 0 or self.fold_jitter < 0:
            raise ValueError("noise and jitter levels must be nonnegative")
        counts = self.counts
        if np.isscalar(counts):
            counts = (int(counts),) * 4
        counts = tuple(int(n) for n in counts)
        if len(counts) != 4 or any(n < 1 for n in counts):
            raise ValueError("counts must give four positive sample counts")
        if self.bit_depth is not None and self.bit_depth < 1:
            raise ValueError("bit depth must be >= 1")
        object.__setattr__(self, "counts", counts)

    @property
    def T(self) -> float:
        return 1.0 / self.sample_rate

    def threshold(self, channel: int) -> float:
        return self.lam0 if channel % 2 == 0 else self.lam1

    def validate_for_model(self, model: SinusoidalModel):
        """Check the delay bound Td <= pi / max|w_k| against a known model."""
        w_max = np.abs(model.frequencies).max()
        if self.delay > np.pi / w_max:
            raise ValueError(
                f"channel delay {self.delay:g} s exceeds pi/max|w| = {np.pi / w_max:g} s"
            )

    def validate_for_exact(self, K: int):
        """Check the per-channel sample counts required by exact recovery."""
        need = (2 * K + 1, 2 * K + 1, K + 1, K + 1)
        for i, (n, n_min) in enumerate(zip(self.counts, need)):
            if n < n_min:
                raise ValueError(
                    f"channel {i} has {n} samples; exact recovery of K={K} needs >= {n_min}"
                )

    def noiseless(self) -> "CaptureConfig":
        return replace(self, noise_sd=0.0, fold_jitter=0.0, bit_depth=None)


@dataclass(frozen=True)
class MultiChannelCapture:
    """Folded sample streams plus (evaluation-only) ground truth.

    ``truth`` and ``truth_delayed`` hold the unfolded samples on the base and
    delayed grids; they are never consumed by recovery operations.
    """

    streams: tuple
    config: CaptureConfig
    truth: np.ndarray | None = None
    truth_delayed: np.ndarray | None = None

    def __post_init__(self):
        if len(self.streams) != 4:
            raise ValueError("expected four channel streams")
        object.__setattr__(self, "streams", tuple(np.asarray(y) for y in self.streams))


@dataclass(frozen=True)
class DifferenceStreams:
    """First differences v_i = diff(y_i) and, when available, diff of truth."""

    v: tuple
    truth_diff: np.ndarray | None = None
    truth_diff_delayed: np.ndarray | None = None


def simulate_nonideal_fold(x, lam: float, fold_jitter: float, seed) -> np.ndarray:
    """Fold a sample stream with per-fold-event amplitude jitter.

    A fold event is each unit change of the integer fold count
    floor(x/(2*lam) + 1/2) along the path through consecutive samples (the
    stream is taken to start from rest).  Every event perturbs the 2*lam jump
    by an independent uniform draw in [-fold_jitter, +fold_jitter]; the
    perturbations accumulate in the folder state, producing off-grid residues.
    With ``fold_jitter=0`` this reduces exactly to ``centered_modulo``.
    """
    if fold_jitter < 0:
        raise ValueError("fold jitter must be nonnegative")
    x = np.asarray(x)
    if np.iscomplexobj(x):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return (simulate_nonideal_fold(x.real, lam, fold_jitter, rng)
                + 1j * simulate_nonideal_fold(x.imag, lam, fold_jitter, rng))
    if fold_jitter == 0:
        return centered_modulo(x, lam)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    k = np.floor(x / (2 * lam) + 0.5)
    steps = np.diff(np.concatenate([[0.0], k])).astype(np.int64)
    n_events = np.abs(steps)
    total = int(n_events.sum())
    if total == 0:
        return centered_modulo(x, lam)
    draws = rng.uniform(-fold_jitter, fold_jitter, total)
    signed = draws * np.repeat(np.sign(steps), n_events)
    per_sample = np.zeros(x.size)
    np.add.at(per_sample, np.repeat(np.arange(x.size), n_events), signed)
    return x - 2 * lam * k - np.cumsum(per_sample)


def capture(model: SinusoidalModel, config: CaptureConfig) -> MultiChannelCapture:
    """Simulate the four folded channels for a model, deterministic per seed.

    Chain per channel: pointwise sampling, folding (with jitter when
    configured), additive Gaussian noise, re-fold into [-lam, lam) (a no-op for
    in-range values), then B-bit quantization when enabled.
    """
    ss = np.random.SeedSequence(config.seed)
    children = ss.spawn(8)
    T = config.T
    offsets = (0.0, 0.0, config.delay, config.delay)
    streams = []
    for i in range(4):
        lam = config.threshold(i)
        grid = SamplingGrid(T, config.counts[i], offsets[i])
        x = sample(model, grid)
        if config.noise_prefold and config.noise_sd > 0:
            x = add_noise(x, config.noise_sd, np.random.default_rng(children[4 + i]))
        if config.fold_jitter > 0:
            y = simulate_nonideal_fold(x, lam, config.fold_jitter,
                                       np.random.default_rng(children[i]))
        else:
            y = centered_modulo(x, lam)
        if not config.noise_prefold and config.noise_sd > 0:
            y = add_noise(y, config.noise_sd, np.random.default_rng(children[4 + i]))
        y = centered_modulo(y, lam)
        if config.bit_depth is not None:
            y = quantize(y, lam, config.bit_depth)
        streams.append(y)
    n_base = max(config.counts[0], config.counts[1])
    n_delayed = max(config.counts[2], config.counts[3])
    truth = sample(model, SamplingGrid(T, n_base, 0.0))
    truth_delayed = sample(model, SamplingGrid(T, n_delayed, config.delay))
    return MultiChannelCapture(tuple(streams), config, truth, truth_delayed)


def finite_difference(cap: MultiChannelCapture) -> DifferenceStreams:
    """First differences v_i[n] = y_i[n+1] - y_i[n] of every channel."""
    if any(len(y) < 2 for y in cap.streams):
        raise ValueError("need at least two samples per channel to difference")
    v = tuple(np.diff(y) for y in cap.streams)
    td = np.diff(cap.truth) if cap.truth is not None and len(cap.truth) >= 2 else None
    tdd = (np.diff(cap.truth_delayed)
           if cap.truth_delayed is not None and len(cap.truth_delayed) >= 2 else None)
    return DifferenceStreams(v, td, tdd)


def save_capture_csv(cap: MultiChannelCapture, path):
    """Write streams as columnar text: channel, n, t_seconds, y_volts.

    Values use 17 significant digits so doubles round-trip exactly.  Only
    real-valued captures are serializable in this schema.
    """
    if any(np.iscomplexobj(y) for y in cap.streams):
        raise ValueError("capture CSV schema stores real-valued streams only")
    T = cap.config.T
    offsets = (0.0, 0.0, cap.config.delay, cap.config.delay)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "n", "t_seconds", "y_volts"])
        for i, y in enumerate(cap.streams):
            for n, val in enumerate(y):
                writer.writerow([i, n, f"{n * T + offsets[i]:.16e}", f"{val:.16e}"])


def load_capture_csv(path, config: CaptureConfig) -> MultiChannelCapture:
    """Read a capture written by :func:`save_capture_csv` (no ground truth)."""
    per_channel = {0: [], 1: [], 2: [], 3: []}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["channel", "n", "t_seconds", "y_volts"]:
            raise ValueError(f"unexpected capture header: {header}")
        for row in reader:
            per_channel[int(row[0])].append((int(row[1]), float(row[3])))
    streams = []
    for i in range(4):
        rows = sorted(per_channel[i])
        if len(rows) != config.counts[i]:
            raise ValueError(
                f"channel {i} has {len(rows)} rows; config expects {config.counts[i]}"
            )
        streams.append(np.array([v for _, v in rows]))
    return MultiChannelCapture(tuple(streams), config)
