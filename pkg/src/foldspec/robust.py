"""Robust spectral recovery from noisy, quantized, imperfectly folded captures.

The joint problem couples two unknown structures: the residues u_i (spike
trains on the 2*lam_i grid) and the shared spectral content of the four
difference channels.  It is split into an alternation:

* Joint rational fit: all four channel spectra are matched by numerators
  P_i of degree K-1 over one common degree-K denominator H whose roots carry
  the aliased modes.  Each pass re-weights by the previous denominator and
  solves a norm-constrained linear least squares in the stacked coefficients;
  a fresh root initialization restarts the pass when it stalls off target.

* Residue refinement: with the fitted channel models fixed, the constrained
  residue problem has a closed form per sample, a clamped channel-pair average
  followed by quantization onto the residue grid.

The alternation stops once the two channel pairs of the fitted model agree
within the distortion tolerance sigma in the sup norm.  Because corrupted
initial residues admit self-consistent but wrong mode sets, every stagnated
fit is kept as a candidate and the returned estimate is the candidate whose
re-folded model best matches the raw folded measurements (the selection rule
applied to the acquisition data itself).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.linalg import block_diag

from .acquisition import MultiChannelCapture, finite_difference
from .exact import (
    PhaseUndefinedError,
    SpectralEstimate,
    aliased_frequencies,
    dealias,
    estimate_amplitudes,
    prony,
    separate_residues,
)
from .numerics import RestartNeeded, constrained_lstsq_update, dft, expand_roots, roots, vandermonde
from .signal import centered_modulo, mse, quantize

__all__ = [
    "RobustConfig",
    "RationalFitState",
    "RobustResult",
    "estimate_sigma",
    "clamped_average",
    "refine_residues",
    "amplitude_from_residue",
    "joint_spectral_fit",
    "recover_robust",
]

_DENOM_FLOOR = 1e-12
_ROOT_MAG_MIN = 1e-6
_ROOT_MAG_MAX = 1e3


@dataclass(frozen=True)
class RobustConfig:
    """Tuning of the alternating recovery.

    ``sigma`` is the distortion tolerance in volts; when None it is derived
    from the capture's bit depth as 2*alpha*max(lam)/(2^B - 1).  ``tol_root``
    bounds the acceptable polynomial residual at extracted roots; stagnated
    fits exceeding it are discarded as degenerate.
    """

    sigma: float | None = None
    alpha: float = 2.0
    j_max: int = 30
    restarts: int = 15
    outer_max: int = 20
    tol_root: float = 1e-8
    inner_tol: float = 1e-10
    e_max: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.j_max < 1 or self.restarts < 1 or self.outer_max < 1:
            raise ValueError("iteration limits must be >= 1")


@dataclass(frozen=True)
class RationalFitState:
    """State of the iterated rational fit.

    ``h`` are the K+1 denominator coefficients (normalized so that
    h_init^H h = 1), ``q`` the per-channel numerator coefficients (4, K),
    ``modes`` the raw denominator roots.
    """

    h: np.ndarray
    q: np.ndarray
    h_init: np.ndarray
    modes: np.ndarray
    iteration: int
    objective: float
    criterion: float
    converged: bool
    restarts_used: int
    objective_trace: tuple


@dataclass(frozen=True)
class RobustResult:
    """Final estimate plus convergence diagnostics of the alternation."""

    estimate: SpectralEstimate
    converged: bool
    iterations: int
    criterion_trace: tuple
    objective_trace: tuple
    fit: RationalFitState


def estimate_sigma(lam0: float, lam1: float, bits: int, alpha: float) -> float:
    """Distortion tolerance heuristic 2*alpha*max(lam0, lam1)/(2^bits - 1)."""
    if bits < 1:
        raise ValueError("bit depth must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return 2 * alpha * max(lam0, lam1) / (2 ** bits - 1)


def clamped_average(x, y, sigma: float):
    """The pairwise reconciliation (x + clip(y, -sigma, +sigma)) / 2.

    This is the closed-form minimizer of the two-channel residue problem
    before grid quantization: when |y| < sigma the sup-norm constraint is
    inactive and both channels meet at their average; otherwise the constraint
    is tight and the disagreement is clamped at +-sigma.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if np.iscomplexobj(x) or np.iscomplexobj(y):
        return (clamped_average(np.real(x), np.real(y), sigma)
                + 1j * clamped_average(np.imag(x), np.imag(y), sigma))
    return 0.5 * (x + np.clip(y, -sigma, sigma))


def refine_residues(gbar_fit, v, lam0: float, lam1: float, sigma: float,
                    grid_quantize: bool = True):
    """Closed-form residue update given fitted channel models.

    For the pair (0, 1): with x_i = g0 + g1 - 2*v_i and
    y_i = (-1)^i * (g0 - g1), the refined residue is the grid quantization of
    clamped_average(x_i, y_i); pair (2, 3) is identical with its own fitted
    models.  Pass ``grid_quantize=False`` to obtain the pre-quantization
    minimizer (used by optimality checks).
    """
    g = [np.asarray(x) for x in gbar_fit]
    v = [np.asarray(x) for x in v]
    if len(g) != 4 or len(v) != 4:
        raise ValueError("expected four fitted sequences and four difference streams")
    lams = (lam0, lam1, lam0, lam1)
    out = []
    for i in range(4):
        base = 0 if i < 2 else 2
        x = g[base] + g[base + 1] - 2 * v[i]
        y = (-1) ** i * (g[base] - g[base + 1])
        ui = clamped_average(x, y, sigma)
        if grid_quantize:
            ui = quantize(ui, lams[i])
        out.append(ui)
    return out


def amplitude_from_residue(h, q_i, u, length: int, gbar_i=None) -> np.ndarray:
    """Mode amplitudes of one channel from the rational-fit coefficients.

    Partial fractions of P_i/H on the DFT grid give the closed form

        c_k = -u_k * P_i(1/u_k) / ((1 - u_k^L) * H'(1/u_k))

    with polynomials read along ascending powers of w = z^(-1) and L the
    sequence length.  Roots with u_k^L = 1 within 1e-10 (poles on the DFT
    grid) or with a vanishing denominator derivative fall back to a direct
    least-squares fit, which requires the channel data ``gbar_i``.
    """
    h = np.asarray(h, dtype=complex)
    q_i = np.asarray(q_i, dtype=complex)
    u = np.asarray(u, dtype=complex)
    dh = npoly.polyder(h)
    w = 1.0 / u
    denom = (1.0 - u ** length) * npoly.polyval(w, dh)
    bad = np.abs(1.0 - u ** length) < 1e-10
    bad |= np.abs(denom) < 1e-300
    if np.any(bad):
        if gbar_i is None:
            raise ValueError("grid-aligned mode: channel data needed for the fallback fit")
        return estimate_amplitudes(gbar_i, u)
    return -u * npoly.polyval(w, q_i) / denom


def _guard_denominator(grid_vals: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Clamp near-zero denominator grid values to a relative floor."""
    floor = _DENOM_FLOOR * np.abs(h).sum()
    mag = np.abs(grid_vals)
    small = mag < floor
    if not np.any(small):
        return grid_vals
    out = grid_vals.copy()
    safe = np.where(mag[small] > 0, mag[small], 1.0)
    phase = np.where(mag[small] > 0, out[small] / safe, 1.0)
    out[small] = floor * phase
    return out


def _objective(ghat: np.ndarray, V0: np.ndarray, Hm: np.ndarray, q: np.ndarray) -> float:
    resid = ghat - (q @ V0.T) / Hm[None, :]
    return float(np.sum(np.abs(resid) ** 2))


def _resynthesize(u: np.ndarray, c: np.ndarray, length: int) -> np.ndarray:
    theta = u[None, :] ** np.arange(length)[:, None]
    return (theta @ c).T


def _pair_criterion(gfit: np.ndarray) -> float:
    return float(max(np.abs(gfit[0] - gfit[1]).max(), np.abs(gfit[2] - gfit[3]).max()))


def _random_roots(K: int, conjugate_pairs: bool, rng) -> np.ndarray:
    # conjugate-symmetric draws keep real-data restarts on the real submanifold
    if conjugate_pairs:
        theta = rng.uniform(0.0, np.pi, K // 2)
        rts = np.concatenate([np.exp(1j * theta), np.exp(-1j * theta)])
        if K % 2:
            rts = np.append(rts, rng.choice([-1.0, 1.0]))
        return rts
    return np.exp(1j * rng.uniform(-np.pi, np.pi, K))


def _mode_pool(g, K: int, conjugate_pairs: bool) -> np.ndarray:
    """Candidate unit-circle phases from an overmodeled subspace estimate.

    Per channel, an order-inflated shift-invariance estimate absorbs the
    residue outliers into extra modes while the true modes survive near the
    unit circle.  Candidates from all channels are merged, de-duplicated and
    ranked by their matched-filter energy summed over channels; the returned
    phases are sorted by decreasing energy (positive phases only for
    conjugate-pair data).
    """
    L = len(g[0])
    W = max(K + 2, L // 2)
    order = min(4 * K + 4, L - W - 1, W - 1)
    if order < K:
        return np.array([])
    cand = []
    for s in g:
        H = np.lib.stride_tricks.sliding_window_view(np.asarray(s, dtype=complex), W)
        try:
            U, _, _ = np.linalg.svd(H, full_matrices=False)
            Us = U[:, :order]
            lam = np.linalg.eigvals(np.linalg.pinv(Us[:-1]) @ Us[1:])
        except np.linalg.LinAlgError:
            continue
        cand.append(lam[np.abs(np.abs(lam) - 1) < 0.1])
    if not cand:
        return np.array([])
    phases = np.angle(np.concatenate(cand))
    if conjugate_pairs:
        phases = np.abs(phases)
    if phases.size == 0:
        return np.array([])
    # merge candidates closer than 0.4 DFT bin (sub-resolution duplicates)
    phases = np.sort(phases)
    merged = [phases[0]]
    for p in phases[1:]:
        if p - merged[-1] > 0.8 * np.pi / L:
            merged.append(p)
    merged = np.asarray(merged)
    n = np.arange(L)
    probe = np.exp(1j * np.outer(n, merged))
    energy = sum(np.abs(np.asarray(s, dtype=complex) @ np.conj(probe)) ** 2 for s in g)
    return merged[np.argsort(energy)[::-1]]


def _seeded_roots(pool: np.ndarray, K: int, conjugate_pairs: bool, pick, rng) -> np.ndarray | None:
    """Roots for one restart from the candidate pool; ``pick=0`` is top-energy."""
    need = K // 2 if conjugate_pairs else K
    if pool.size < need:
        return None
    if pick == 0:
        sel = pool[:need]
    else:
        width = min(pool.size, max(need + 2, 2 * need))
        sel = rng.choice(pool[:width], size=need, replace=False)
    if conjugate_pairs:
        rts = np.concatenate([np.exp(1j * sel), np.exp(-1j * sel)])
        if K % 2:
            rts = np.append(rts, rng.choice([-1.0, 1.0]))
        return rts
    return np.exp(1j * sel)


def _initial_denominator(restart: int, gbar, K: int, h_init, conjugate_pairs,
                         pool, rng) -> np.ndarray:
    """Restart schedule: warm/annihilating-filter start, then pool-seeded
    starts, then unconstrained random phases."""
    if restart == 0:
        if h_init is not None:
            h0 = np.asarray(h_init, dtype=complex)
        else:
            try:
                h0, _ = prony(gbar, K)
            except ValueError:
                h0 = None
        if h0 is not None and h0.size == K + 1 and np.all(np.isfinite(h0)):
            return h0 / np.linalg.norm(h0)
    rts = None
    if 1 <= restart <= 8 and pool is not None:
        rts = _seeded_roots(pool, K, conjugate_pairs, restart - 1, rng)
    if rts is None:
        rts = _random_roots(K, conjugate_pairs, rng)
    h0 = expand_roots(rts)
    return h0 / np.linalg.norm(h0)


def _extract_state(h, q, g, L: int, K: int, T: float, tol_root: float):
    """Roots, per-channel amplitudes, resynthesis and pair criterion of a fit."""
    try:
        u = roots(h)
    except ValueError:
        return None
    if (u.size != K or not np.all(np.isfinite(u))
            or np.any(np.abs(u) <= _ROOT_MAG_MIN) or np.any(np.abs(u) >= _ROOT_MAG_MAX)):
        return None
    resid = np.abs(npoly.polyval(1.0 / u, h))
    if resid.max() > tol_root * max(np.abs(h).sum(), 1.0):
        return None
    order = np.argsort(aliased_frequencies(u, T))
    u = u[order]
    try:
        c = np.column_stack([amplitude_from_residue(h, q[i], u, L, g[i]) for i in range(4)])
    except ValueError:
        return None
    if not np.all(np.isfinite(c)):
        return None
    gfit = _resynthesize(u, c, L)
    return u, c, _pair_criterion(gfit)


def joint_spectral_fit(gbar, K: int, T: float, cfg: RobustConfig,
                       h_init=None, rng=None, candidates=None, validate=None):
    """One full pass of the iterated rational fit over the four channels.

    Each restart iterates the re-weighted constrained update until the
    objective stagnates (or j_max), then extracts roots and amplitudes and
    evaluates the pair-agreement stopping criterion on the resynthesized
    model; meeting it terminates all loops.  Otherwise the best-objective
    stagnation state is returned, flagged non-converged.

    A small resynthesized model satisfies the pair criterion vacuously, so
    callers that can check the candidate against independent data may pass
    ``validate(estimate, state) -> bool``; a criterion hit then terminates
    only when validation passes.

    Returns a :class:`SpectralEstimate` (aliased modes plus per-channel
    amplitudes; de-aliasing is the caller's job) and the winning
    :class:`RationalFitState`.  When ``candidates`` is a list, every usable
    stagnation state is appended to it as an (estimate, state) pair.
    """
    g = [np.asarray(x) for x in gbar]
    if len(g) != 4 or len({len(x) for x in g}) != 1:
        raise ValueError("need four difference sequences of equal length")
    L = len(g[0])
    if L < 2 * K + 1:
        raise ValueError(f"sequences of length {L} cannot determine {K} modes robustly")
    if cfg.sigma is None:
        raise ValueError("cfg.sigma must be resolved before fitting")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    conjugate_pairs = not any(np.iscomplexobj(x) for x in g)
    ghat = np.array([dft(x) for x in g])
    V1 = vandermonde(L, K + 1)
    V0 = vandermonde(L, K)
    pool = _mode_pool(g, K, conjugate_pairs) if cfg.restarts > 1 else None
    best = None

    for restart in range(cfg.restarts):
        h0 = _initial_denominator(restart, g, K, h_init if restart == 0 else None,
                                  conjugate_pairs, pool, rng)
        h = h0
        prev_obj = None
        trace = []
        last = None
        for j in range(1, cfg.j_max + 1):
            Hm = _guard_denominator(V1 @ h, h)
            rinv = 1.0 / Hm
            A = np.vstack([(ghat[i] * rinv)[:, None] * V1 for i in range(4)])
            Bblk = rinv[:, None] * V0
            B = block_diag(Bblk, Bblk, Bblk, Bblk)
            try:
                h_new, q_flat, _ = constrained_lstsq_update(A, B, h0)
            except RestartNeeded:
                break
            q = q_flat.reshape(4, K)
            obj = _objective(ghat, V0, _guard_denominator(V1 @ h_new, h_new), q)
            trace.append(obj)
            last = (h_new, q, obj, j)
            if prev_obj is not None and abs(obj - prev_obj) <= cfg.inner_tol * max(obj, 1e-300):
                break
            prev_obj = obj
            h = h_new
        if last is None:
            continue
        h_new, q, obj, j = last
        extracted = _extract_state(h_new, q, g, L, K, T, cfg.tol_root)
        if extracted is None:
            continue
        u, c, crit = extracted
        state = (obj, crit, h_new, q, h0, u, c, j, restart, tuple(trace))
        if candidates is not None:
            candidates.append(_pack_fit(state, T, converged=False))
        if best is None or obj < best[0]:
            best = state
        if crit <= cfg.sigma:
            packed = _pack_fit(state, T, converged=True)
            if validate is None or validate(*packed):
                return packed
    if best is None:
        raise RestartNeeded("rational fit produced no usable denominator roots")
    return _pack_fit(best, T, converged=False)


def _pack_fit(state, T: float, converged: bool):
    obj, crit, h, q, h0, u, c, j, restart, trace = state
    nu = aliased_frequencies(u, T)
    est = SpectralEstimate(nu, c)
    fit = RationalFitState(h, q, h0, u, j, obj, crit, converged, restart + 1, trace)
    return est, fit


def _trusted_rows(resid_i, sigma: float, K: int) -> np.ndarray:
    """Samples trusted for refitting: residual within 3*sigma, or failing a
    quorum, the smallest-residual samples (a drifting model leaves a clean
    prefix whose residuals are smallest, so this windows the data
    automatically)."""
    L = resid_i.size
    quorum = min(L, max(2 * K + 2, L // 3))
    mask = np.abs(resid_i) <= 3 * sigma
    if mask.sum() >= quorum:
        return mask
    keep = np.argsort(np.abs(resid_i), kind="stable")[:quorum]
    mask = np.zeros(L, dtype=bool)
    mask[keep] = True
    return mask


def _conjugate_pair_index(u: np.ndarray):
    """Indices of positive-phase modes and their conjugate partners, or None."""
    order = np.argsort(np.angle(u))
    K = u.size
    if K % 2:
        return None
    ang = np.angle(u[order])
    if np.abs(ang + ang[::-1]).max() > 1e-6:
        return None
    return order[K // 2:], order[: K // 2][::-1]


def _wrapped_phase_bootstrap(u, c, v, lam0, lam1, T):
    """Re-estimate mode phases (and locally the frequencies) by a
    wrapped-residual search.

    Residues are exact multiples of 2*lam, so the centered-modulo of
    (model - v) erases them entirely: near the true parameters the wrapped
    residual is just noise, while wrong parameters wrap into near-uniform
    spread.  A coarse phase grid on the base channel block, followed by a
    batched cyclic refinement of phases, magnitudes, and mode frequencies of
    a shortlist, lands in the global basin regardless of how badly the fit's
    phases were biased; the delayed block then reuses the refined modes and
    magnitudes and searches only its phases, which carry the alias-band
    information.  The current parameters always compete as an extra grid
    point, so an already-correct candidate is never degraded.  Only low mode
    counts are searched (grid dims <= 3 per block); larger models are
    returned unchanged.

    Returns (modes, channel amplitudes, wrapped loss); the loss is NaN when
    the search does not apply.
    """
    K = u.size
    real_input = not any(np.iscomplexobj(x) for x in v)
    if real_input:
        pairing = _conjugate_pair_index(u)
        if pairing is None:
            return u, c, float("nan")
        pos, neg = pairing
        dims = pos.size
    else:
        pos, neg = np.arange(K), None
        dims = K
    if dims > 3 or dims == 0:
        return u, c, float("nan")
    L = len(v[0])
    W = min(L, max(4 * K, int(0.35 * L)))
    n = np.arange(W, dtype=float)
    lams = (lam0, lam1, lam0, lam1)

    def block_loss(th, w, b0):
        """th, w: (dims, C) mode phases and complex weights -> loss (C,)."""
        acc = np.zeros((W, th.shape[1]), dtype=complex)
        for k in range(dims):
            acc += np.exp(1j * np.outer(n, th[k])) * w[k][None, :]
        model = 2 * acc.real if real_input else acc
        loss = np.zeros(th.shape[1])
        for i in (b0, b0 + 1):
            wrapped = centered_modulo(model - np.asarray(v[i])[:W, None], lams[i])
            loss += np.sum(np.abs(wrapped) ** 2, axis=0)
        return loss

    def cyclic_refine(th, w, b0, rounds, scan_freq, scan_mag):
        dphi = np.exp(1j * np.linspace(-0.35, 0.35, 13))
        dmag = np.geomspace(0.7, 1.4, 9)
        dth = np.linspace(-0.5, 0.5, 9) * 2 * np.pi / L
        C = th.shape[1]

        def sweep(th_s, w_s, axis_k, offs, kind):
            m = offs.size
            th_t = np.repeat(th_s, m, axis=1)
            w_t = np.repeat(w_s, m, axis=1)
            tiled = np.tile(offs, C)
            if kind == "phase":
                w_t[axis_k] = w_t[axis_k] * tiled
            elif kind == "mag":
                w_t[axis_k] = w_t[axis_k] * tiled
            else:
                th_t[axis_k] = th_t[axis_k] + tiled
            ls = block_loss(th_t, w_t, b0).reshape(C, m)
            pick = np.argmin(ls, axis=1)
            cols = np.arange(C) * m + pick
            return th_t[:, cols], w_t[:, cols]

        for _ in range(rounds):
            for k in range(dims):
                th, w = sweep(th, w, k, dphi, "phase")
                if scan_mag:
                    th, w = sweep(th, w, k, dmag, "mag")
                if scan_freq:
                    th, w = sweep(th, w, k, dth, "freq")
        return th, w

    n_phase = 14
    phis = np.linspace(-np.pi, np.pi, n_phase, endpoint=False)
    grids = np.meshgrid(*([phis] * dims), indexing="ij")
    phase_combos = np.stack([g.ravel() for g in grids])  # (dims, C)
    th0 = np.angle(u[pos])
    out = c.copy()

    # base block: coarse phase grid, then refine phases/magnitudes/frequencies
    a0 = 0.5 * (np.abs(c[pos, 0]) + np.abs(c[pos, 1]))
    cur0 = 0.5 * (c[pos, 0] + c[pos, 1])
    w = np.hstack([a0[:, None] * np.exp(1j * phase_combos), cur0[:, None]])
    th = np.repeat(th0[:, None], w.shape[1], axis=1)
    coarse = np.argsort(block_loss(th, w, 0), kind="stable")[:40]
    th, w = cyclic_refine(th[:, coarse], w[:, coarse], 0, rounds=2,
                          scan_freq=True, scan_mag=True)
    final = block_loss(th, w, 0)
    j = int(np.argmin(final))
    th_best, w0_best, loss0 = th[:, j], w[:, j], final[j]

    # delayed block: modes and magnitudes fixed, phases searched
    a1 = np.abs(w0_best)
    cur1 = 0.5 * (c[pos, 2] + c[pos, 3])
    w = np.hstack([a1[:, None] * np.exp(1j * phase_combos), cur1[:, None]])
    th = np.repeat(th_best[:, None], w.shape[1], axis=1)
    coarse = np.argsort(block_loss(th, w, 2), kind="stable")[:40]
    th, w = cyclic_refine(th[:, coarse], w[:, coarse], 2, rounds=2,
                          scan_freq=False, scan_mag=False)
    final = block_loss(th, w, 2)
    j = int(np.argmin(final))
    w1_best, loss1 = w[:, j], final[j]

    u_new = u.astype(complex).copy()
    u_new[pos] = np.exp(1j * th_best)
    out[pos, 0] = out[pos, 1] = w0_best
    out[pos, 2] = out[pos, 3] = w1_best
    if real_input:
        u_new[neg] = np.conj(u_new[pos])
        out[neg, 0] = out[neg, 1] = np.conj(w0_best)
        out[neg, 2] = out[neg, 3] = np.conj(w1_best)
    return u_new, out, loss0 + loss1


def _masked_amplitudes(theta, d, mask, K, active):
    """Per-channel masked LS weights; inactive channels copy their pair lead."""
    c = np.empty((K, 4), dtype=complex)
    for i in range(4):
        if not active[i]:
            continue
        c[:, i] = np.linalg.lstsq(theta[mask[i]], np.asarray(d[i])[mask[i]].astype(complex),
                                  rcond=None)[0]
    for i in range(4):
        if not active[i]:
            lead = i + 1 if active[(i // 2) * 2 + 1] and i % 2 == 0 else i - 1
            c[:, i] = c[:, lead]
    return c


def _polish_candidate(u_modes, c, v, lam0, lam1, sigma, T, passes=4, bootstrap=True):
    """Outlier-masked refit of a candidate state against refined data.

    The rational fit's least squares is biased by residue samples that remain
    a full fold off; the resulting per-mode frequency error, though tiny,
    accrues a large phase drift over a seconds-long window and spoils any
    time-domain validation.  This pass alternates the closed-form residue
    refinement with a cyclic per-mode matched-filter frequency scan (wide
    capture, parabolic sub-grid refinement) and an amplitude refit, all
    restricted to samples whose residual is within 3*sigma of the model.

    A fold error that agrees with a wrong model leaves a small residual on
    the finer-threshold channel (its grid step is comparable to the model
    error), so such samples evade the mask and keep the wrong phases locked
    in; on the coarser-threshold channels the same error leaves a residual of
    about the model error reflected off the larger grid, which the mask does
    catch.  The first pass therefore trusts only the coarser-threshold member
    of each channel pair; once the model has re-snapped the finer channels,
    later passes refit all four.

    Returns (modes, channel amplitudes, refined residues).
    """
    L = len(v[0])
    n = np.arange(L)
    real_input = not any(np.iscomplexobj(x) for x in v)
    u = np.asarray(u_modes, dtype=complex)
    u = u / np.abs(u)
    c = np.asarray(c, dtype=complex)
    if bootstrap:
        u, c, _ = _wrapped_phase_bootstrap(u, c, v, lam0, lam1, T)
    half_width = 1.5 * 2 * np.pi / L  # phase window: 1.5 DFT bins
    offsets = np.linspace(-half_width, half_width, 121)
    coarse = 1 if lam1 >= lam0 else 0
    lead_only = np.array([i % 2 == coarse for i in range(4)])
    all_channels = np.ones(4, dtype=bool)
    u_res = None
    for p in range(passes):
        active = lead_only if p == 0 else all_channels
        theta = u[None, :] ** n[:, None]
        gfit = (theta @ c).T
        u_res = refine_residues(gfit.real if real_input else gfit, v, lam0, lam1, sigma)
        d = [v[i] + u_res[i] for i in range(4)]
        resid = np.stack([d[i] - gfit[i] for i in range(4)])
        mask = np.stack([_trusted_rows(resid[i], sigma, u.size) for i in range(4)])
        c = _masked_amplitudes(theta, d, mask, u.size, active)
        for k in range(u.size):
            phase = np.angle(u[k])
            probes = np.exp(1j * np.outer(n, phase + offsets))  # (L, n_off)
            energy = np.zeros(offsets.size)
            for i in range(4):
                if not active[i]:
                    continue
                others = np.delete(np.arange(u.size), k)
                r = np.asarray(d[i]).astype(complex) - (theta[:, others] @ c[others, i])
                energy += np.abs(r[mask[i]] @ np.conj(probes[mask[i]])) ** 2
            j = int(np.argmax(energy))
            if 0 < j < offsets.size - 1:
                e0, e1, e2 = energy[j - 1], energy[j], energy[j + 1]
                denom = e0 - 2 * e1 + e2
                shift = 0.5 * (e0 - e2) / denom if denom != 0 else 0.0
            else:
                shift = 0.0
            u[k] = np.exp(1j * (phase + offsets[j] + shift * (offsets[1] - offsets[0])))
            theta[:, k] = u[k] ** n
            c = _masked_amplitudes(theta, d, mask, u.size, active)
    # closing residue refinement and masked refit at the scanned phases
    theta = u[None, :] ** n[:, None]
    gfit = (theta @ c).T
    u_res = refine_residues(gfit.real if real_input else gfit, v, lam0, lam1, sigma)
    d = [v[i] + u_res[i] for i in range(4)]
    resid = np.stack([d[i] - gfit[i] for i in range(4)])
    mask = np.stack([_trusted_rows(resid[i], sigma, u.size) for i in range(4)])
    c = _masked_amplitudes(theta, d, mask, u.size, all_channels)
    order = np.argsort(np.angle(u))
    return u[order], c[order], u_res


def _subspace_candidates(gbar, K: int, T: float, width: int = 3):
    """Candidate states taken directly from the overmodeled subspace pool.

    The constrained rational fit can drag accurate pool modes toward residue
    outliers, so every mode subset from the top of the pool is also offered
    as a candidate as-is, with plain least-squares channel amplitudes.
    """
    from itertools import combinations

    real_input = not any(np.iscomplexobj(x) for x in gbar)
    pool = _mode_pool(gbar, K, real_input)
    need = K // 2 if real_input else K
    if pool.size < need or (real_input and K % 2):
        return []
    L = len(gbar[0])
    n = np.arange(L)
    picks = list(combinations(range(min(pool.size, need + width)), need))
    out = []
    for pick in picks:
        sel = pool[list(pick)]
        if real_input:
            u = np.concatenate([np.exp(1j * sel), np.exp(-1j * sel)])
        else:
            u = np.exp(1j * sel)
        u = u[np.argsort(np.angle(u))]
        theta = u[None, :] ** n[:, None]
        c = np.column_stack([
            np.linalg.lstsq(theta, np.asarray(g).astype(complex), rcond=None)[0]
            for g in gbar])
        h = expand_roots(u)
        est = SpectralEstimate(aliased_frequencies(u, T), c)
        fit = RationalFitState(h, np.zeros((4, K), dtype=complex), h, u, 0,
                               float("inf"), float("inf"), False, 0, ())
        out.append((est, fit))
    return out


def _dealias_estimate(est: SpectralEstimate, delay: float, T: float):
    """De-alias a fit candidate using channel-pair-averaged amplitudes."""
    c = est.channel_amplitudes
    c_base = 0.5 * (c[:, 0] + c[:, 1])
    c_delayed = 0.5 * (c[:, 2] + c[:, 3])
    try:
        omega = dealias(est.aliased_omega, c_base, c_delayed, delay, 2 * np.pi / T)
    except PhaseUndefinedError:
        return None
    denom = np.exp(1j * omega * T) - 1
    if np.any(np.abs(denom) < 1e-12):
        return None
    amplitudes = c_base / denom
    return SpectralEstimate(est.aliased_omega, c, omega, amplitudes)


def _fold_residual(cap: MultiChannelCapture, est: SpectralEstimate) -> float:
    """Per-channel mean squared mismatch between the re-folded model and the
    raw streams.

    This validates a candidate against the acquisition data itself (folded
    samples only, never ground truth); it discriminates mode sets that are
    self-consistent in the difference domain but wrong in the time domain,
    and it checks the chosen alias bands through the delayed channels.
    """
    cfg = cap.config
    total = 0.0
    for i, y in enumerate(cap.streams):
        lam = cfg.threshold(i)
        t = np.arange(len(y)) * cfg.T + (0.0 if i < 2 else cfg.delay)
        g = np.exp(1j * np.outer(t, est.omega)) @ est.amplitudes
        if not np.iscomplexobj(y):
            g = g.real
        total += mse(centered_modulo(g, lam), y)
    return total / 4.0


def recover_robust(cap: MultiChannelCapture, K: int,
                   cfg: RobustConfig | None = None) -> RobustResult:
    """Alternating recovery on a folded capture.

    Residues are initialized from the threshold-pair lookup on the raw
    differences, then the joint rational fit and the closed-form residue
    refinement alternate until the fitted channel pairs agree within sigma in
    the sup norm or the outer iteration cap is reached.  All stagnated fit
    candidates are de-aliased (channel-pair-averaged amplitudes) and scored by
    re-folding against the raw streams; the best-scoring candidate is the
    returned estimate and also steers each refinement step.  The final
    time-domain coefficients are c_k = c_base_k / (exp(j*w_k*T) - 1).
    """
    if cfg is None:
        cfg = RobustConfig()
    ccfg = cap.config
    if cfg.sigma is None:
        if ccfg.bit_depth is None:
            raise ValueError("sigma must be given explicitly for unquantized captures")
        cfg = replace(cfg, sigma=estimate_sigma(ccfg.lam0, ccfg.lam1, ccfg.bit_depth, cfg.alpha))
    T = ccfg.T
    v_full = finite_difference(cap).v
    L = min(len(x) for x in v_full)
    v = [x[:L] for x in v_full]
    real_input = not any(np.iscomplexobj(x) for x in v)

    sp0, sp1 = separate_residues(v[0], v[1], ccfg.lam0, ccfg.lam1, cfg.e_max, channels=(0, 1))
    sp2, sp3 = separate_residues(v[2], v[3], ccfg.lam0, ccfg.lam1, cfg.e_max, channels=(2, 3))
    u_res = [sp.residue(L) for sp in (sp0, sp1, sp2, sp3)]

    rng = np.random.default_rng(cfg.seed)
    score_gate = 2 * cfg.sigma ** 2

    def _polish_and_score(cand_est, cand_fit, u_boot=None, c_boot=None):
        """Polish a fit candidate, de-alias it, and score it on the raw streams."""
        pre_done = u_boot is not None and c_boot is not None
        u_p, c_p, u_res_p = _polish_candidate(
            u_boot if pre_done else cand_fit.modes,
            c_boot if pre_done else cand_est.channel_amplitudes.copy(),
            v, ccfg.lam0, ccfg.lam1, cfg.sigma, T, bootstrap=not pre_done)
        partial = SpectralEstimate(aliased_frequencies(u_p, T), c_p)
        full = _dealias_estimate(partial, ccfg.delay, T)
        if full is None:
            return np.inf, None, None
        return _fold_residual(cap, full), full, u_res_p

    def _validate(cand_est, cand_fit):
        score, _, _ = _polish_and_score(cand_est, cand_fit)
        return score <= score_gate

    best_score = np.inf
    best = None
    best_outer = 0
    crit_trace = []
    obj_trace = []
    converged = False
    outer_used = 0

    for outer in range(1, cfg.outer_max + 1):
        outer_used = outer
        gbar_data = [v[i] + u_res[i] for i in range(4)]
        cands = []
        try:
            fit_est, fit = joint_spectral_fit(gbar_data, K, T, cfg, rng=rng,
                                              candidates=cands, validate=_validate)
        except RestartNeeded:
            crit_trace.append(float("inf"))
            obj_trace.append(float("inf"))
            continue
        crit_trace.append(fit.criterion)
        obj_trace.append(fit.objective)

        # dedup stagnated mode sets (many restarts share one basin) and let raw
        # subspace-pool combinations compete alongside the fit states
        cands.extend(_subspace_candidates(gbar_data, K, T))
        distinct = {}
        for cand_est, cand_fit in cands:
            key = tuple(np.round(np.sort(cand_est.aliased_omega) * T, 3))
            if key not in distinct or cand_fit.objective < distinct[key][1].objective:
                distinct[key] = (cand_est, cand_fit)

        # cheap fold-immune pre-rank: bootstrap phases per candidate and rank
        # by the wrapped-residual loss, then fully polish only the leaders
        ranked = []
        for cand_est, cand_fit in distinct.values():
            u_cand = cand_fit.modes / np.abs(cand_fit.modes)
            u_boot, c_boot, wl = _wrapped_phase_bootstrap(
                u_cand, cand_est.channel_amplitudes.copy().astype(complex),
                v, ccfg.lam0, ccfg.lam1, T)
            if not np.isfinite(wl):
                wl = np.inf  # unbootstrappable: rank last, polish handles it
            ranked.append((wl, len(ranked), cand_est, cand_fit, u_boot, c_boot))
        ranked.sort(key=lambda item: (item[0], item[1]))

        round_best = None
        round_score = np.inf
        for wl, _, cand_est, cand_fit, u_boot, c_boot in ranked[:3]:
            if np.isinf(wl):
                u_boot = c_boot = None
            score, full, u_res_p = _polish_and_score(
                cand_est, cand_fit, u_boot=u_boot, c_boot=c_boot)
            if full is None:
                continue
            if score < round_score:
                round_score = score
                round_best = (full, cand_fit, u_res_p)
            if score < best_score:
                best_score = score
                best = (full, cand_fit)
                best_outer = outer
        if fit.converged:
            converged = True
            # the validated state may rank outside the raw top-5; score it directly
            score, full, _ = _polish_and_score(fit_est, fit)
            if full is not None and score < best_score:
                best_score = score
                best = (full, fit)
            break
        if round_best is None:
            continue
        if outer - best_outer >= 3 or best_score <= score_gate:
            break  # fold-domain score stopped improving; more outers add nothing
        u_res = round_best[2]

    if best is None:
        raise RestartNeeded("no usable recovery candidate was produced")
    est, fit = best
    return RobustResult(est, converged, outer_used, tuple(crit_trace), tuple(obj_trace), fit)
