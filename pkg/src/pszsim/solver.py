"""Regularized pressure matching for loudspeaker pre-filter design.

Per frequency bin the solver minimizes ``||H a - g||^2 + lam * ||a||^2`` for
the complex control-grid system ``H`` and target ``g``.  The minimizer is
computed through an orthogonal decomposition of the augmented system
``[H; sqrt(lam) I] a = [g; 0]`` rather than by forming normal equations, which
keeps small-``lam`` solves well conditioned.  At ``lam = 0`` a rank-deficient
system yields the minimum-norm least-squares solution by default.

A single regularization weight is shared across all frequency bins; the
global weight can be tuned so the broadband array effort on the monitor grid
hits a requested level (bisection on log10(lam), which relies on the effort
being non-increasing in lam).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .metrics import broadband_array_effort
from .room import ATFTensor, FrequencyGrid
from .scene import MaskPattern, mask_indices


class IllPosedError(ValueError):
    """Unregularized solve on a rank-deficient system with strict handling."""


class IllPosedWarning(RuntimeWarning):
    """Unregularized solve hit a rank-deficient system; returned minimum norm."""


class TuneError(RuntimeError):
    """The regularization search cannot reach the requested effort."""


@dataclass
class PreFilterSet:
    """Complex loudspeaker pre-filters, shape (K, L)."""

    data: np.ndarray
    freq_grid: FrequencyGrid
    method: str = ""
    mask: str = ""

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim != 2:
            raise ValueError(f"pre-filters must be 2-D (K, L), got {self.data.shape}")
        if self.data.shape[0] != len(self.freq_grid):
            raise ValueError(
                f"frequency axis {self.data.shape[0]} does not match grid of "
                f"length {len(self.freq_grid)}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("pre-filters contain non-finite entries")

    @property
    def num_speakers(self) -> int:
        return self.data.shape[1]


@dataclass
class TargetATF:
    """Bright-zone target field; the dark-zone target is implicitly zero."""

    bright: np.ndarray
    num_dark: int

    def __post_init__(self) -> None:
        self.bright = np.asarray(self.bright, dtype=complex)
        if self.bright.ndim != 2:
            raise ValueError(f"bright target must be 2-D (K, M_B), got {self.bright.shape}")
        if not np.all(np.isfinite(self.bright)):
            raise ValueError("target contains non-finite entries")
        if self.num_dark < 0:
            raise ValueError("num_dark must be >= 0")


def reproduce_atf(h: ATFTensor, prefilters: PreFilterSet) -> np.ndarray:
    """Reproduced field ``g(k) = H(k) a(k)`` on the receivers of ``h``.

    Returns a complex (K, M) array.
    """
    if h.num_sources != prefilters.num_speakers:
        raise ValueError(
            f"source count {h.num_sources} does not match pre-filter count "
            f"{prefilters.num_speakers}"
        )
    if h.freq_grid != prefilters.freq_grid:
        raise ValueError("transfer functions and pre-filters use different frequency grids")
    return np.einsum("kml,kl->km", h.data, prefilters.data)


def pressure_match(
    h: np.ndarray,
    target: np.ndarray,
    lam: float,
    rank_deficient: str = "minnorm",
) -> np.ndarray:
    """Minimize ``||H a - g||^2 + lam ||a||^2`` for one frequency bin.

    Parameters
    ----------
    h : complex (M, L)
    target : complex (M,) or (M, T) for T simultaneous targets.
    lam : regularization weight, >= 0.
    rank_deficient : "minnorm" returns the minimum-norm least-squares solution
        (with a warning) when ``lam == 0`` and ``H`` is rank deficient;
        "error" raises :class:`IllPosedError` instead.

    Returns
    -------
    complex (L,) or (L, T)
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] < 1:
        raise ValueError(f"H must be a 2-D matrix with M >= 1 rows, got {h.shape}")
    if not (math.isfinite(lam) and lam >= 0):
        raise ValueError(f"lam must be finite and >= 0, got {lam}")
    if rank_deficient not in ("minnorm", "error"):
        raise ValueError("rank_deficient must be 'minnorm' or 'error'")
    m, l = h.shape
    target = np.asarray(target, dtype=complex)
    single = target.ndim == 1
    rhs = target[:, None] if single else target
    if rhs.shape[0] != m:
        raise ValueError(f"target has {rhs.shape[0]} rows, expected {m}")
    if lam == 0:
        sol, _, rank, _ = np.linalg.lstsq(h, rhs, rcond=None)
        if rank < l:
            if rank_deficient == "error":
                raise IllPosedError(
                    f"H has rank {rank} < {l} and lam = 0; the solve is ill posed"
                )
            warnings.warn(
                f"H has rank {rank} < {l} and lam = 0; returning the minimum-norm solution",
                IllPosedWarning,
                stacklevel=2,
            )
    else:
        aug = np.vstack([h, math.sqrt(lam) * np.eye(l, dtype=complex)])
        aug_rhs = np.vstack([rhs, np.zeros((l, rhs.shape[1]), dtype=complex)])
        sol, _, _, _ = np.linalg.lstsq(aug, aug_rhs, rcond=None)
    return sol[:, 0] if single else sol


def _masked_system_indices(pattern: MaskPattern, num_bright: int, num_dark: int) -> np.ndarray:
    """Control-grid row selection: masked bright rows plus every dark row."""
    bright = pattern.flat_indices()
    if len(bright) == 0:
        raise ValueError("mask selects no bright-zone control points")
    if bright.max() >= num_bright:
        raise ValueError(
            f"mask indices exceed the bright control grid of {num_bright} points"
        )
    dark = np.arange(num_bright, num_bright + num_dark, dtype=np.int64)
    return np.concatenate([bright, dark])


def solve_masked_pm(
    h_ctrl: ATFTensor,
    target: TargetATF,
    pattern: MaskPattern,
    lam: float,
) -> PreFilterSet:
    """Pressure matching against a masked control grid.

    Bright-zone rows of ``h_ctrl`` (the first ``M_B`` receivers) are reduced
    to the mask's selection; every dark-zone row is kept with a zero target,
    so sparsifying the input never relaxes the dark-zone constraint.
    """
    sets = solve_masked_pm_many(h_ctrl, [target], pattern, lam)
    return sets[0]


def solve_masked_pm_many(
    h_ctrl: ATFTensor,
    targets: Sequence[TargetATF],
    pattern: MaskPattern,
    lam: float,
) -> list[PreFilterSet]:
    """Batch variant of :func:`solve_masked_pm` sharing one factorization.

    All targets must agree on shape; per frequency a single multi-column
    least-squares solve covers every target.
    """
    if len(targets) == 0:
        raise ValueError("no targets to solve")
    k_count, m_total, l_count = h_ctrl.data.shape
    m_bright = targets[0].bright.shape[1]
    num_dark = targets[0].num_dark
    if m_bright + num_dark != m_total:
        raise ValueError(
            f"control tensor has {m_total} receivers, target implies "
            f"{m_bright} bright + {num_dark} dark"
        )
    for t in targets:
        if t.bright.shape != (k_count, m_bright) or t.num_dark != num_dark:
            raise ValueError("all targets must share the same shape")
    rows = _masked_system_indices(pattern, m_bright, num_dark)
    sel_bright = pattern.flat_indices()
    n_sel = len(sel_bright)
    brights = np.stack([t.bright for t in targets])  # (T, K, M_B)
    out = np.empty((len(targets), k_count, l_count), dtype=complex)
    rhs = np.zeros((len(rows), len(targets)), dtype=complex)
    for k in range(k_count):
        h_k = h_ctrl.data[k][rows, :]
        rhs[:n_sel, :] = brights[:, k, :][:, sel_bright].T
        sol = pressure_match(h_k, rhs, lam)
        out[:, k, :] = sol.T
    return [
        PreFilterSet(
            data=out[i],
            freq_grid=h_ctrl.freq_grid,
            method="pm",
            mask=pattern.name,
        )
        for i in range(len(targets))
    ]


@dataclass
class TuneResult:
    """Outcome of the global regularization search."""

    lam: float
    achieved_bae_db: float
    target_bae_db: float
    iterations: int
    evaluations: list[tuple[float, float]] = field(default_factory=list)


def _mean_bae(
    h_ctrl: ATFTensor,
    h_mon: ATFTensor,
    targets: Sequence[TargetATF],
    pattern: MaskPattern,
    lam: float,
    num_bright_monitor: int,
    ref_speaker: int,
) -> float:
    sets = solve_masked_pm_many(h_ctrl, targets, pattern, lam)
    vals = []
    for s in sets:
        reproduced = np.einsum(
            "kml,kl->km", h_mon.data[:, :num_bright_monitor, :], s.data
        )
        vals.append(
            broadband_array_effort(
                s.data, h_mon.data[:, :num_bright_monitor, :], reproduced, ref_speaker
            )
        )
    return float(np.mean(vals))


def tune_regularization(
    h_ctrl: ATFTensor,
    h_mon: ATFTensor,
    test_set: Sequence[TargetATF],
    target_bae_db: float,
    tol_db: float = 0.1,
    pattern: MaskPattern | None = None,
    num_bright_monitor: int | None = None,
    ref_speaker: int = 0,
    bracket: tuple[float, float] = (1e-8, 1e2),
    max_iter: int = 100,
) -> TuneResult:
    """Find the global ``lam`` whose mean broadband array effort hits a target.

    The mean is over ``test_set``; the effort is measured on the monitor grid
    of ``h_mon``.  Bisection runs on log10(lam) and relies on the effort being
    non-increasing in ``lam``; if the bracket endpoints do not straddle the
    target a :class:`TuneError` reports the achievable range.

    Parameters
    ----------
    pattern : control-grid mask for the solves; defaults to the full grid.
    num_bright_monitor : bright-zone rows in ``h_mon``; defaults to half.
    ref_speaker : reference loudspeaker index for the effort metric.
    """
    if pattern is None:
        pattern = mask_indices("Grid-12")
    if num_bright_monitor is None:
        num_bright_monitor = h_mon.num_receivers // 2
    lo, hi = bracket
    if not (0 < lo < hi):
        raise ValueError(f"bracket must satisfy 0 < lo < hi, got {bracket}")
    evals: list[tuple[float, float]] = []

    def bae_at(lam: float) -> float:
        val = _mean_bae(
            h_ctrl, h_mon, test_set, pattern, lam, num_bright_monitor, ref_speaker
        )
        evals.append((lam, val))
        return val

    bae_lo = bae_at(lo)
    bae_hi = bae_at(hi)
    if not (bae_hi - tol_db <= target_bae_db <= bae_lo + tol_db):
        raise TuneError(
            f"target effort {target_bae_db:.3f} dB is outside the achievable range "
            f"[{bae_hi:.3f}, {bae_lo:.3f}] dB for lam in [{lo:g}, {hi:g}]"
        )
    log_lo, log_hi = math.log10(lo), math.log10(hi)
    lam_mid, bae_mid = lo, bae_lo
    for it in range(max_iter):
        log_mid = 0.5 * (log_lo + log_hi)
        lam_mid = 10.0**log_mid
        bae_mid = bae_at(lam_mid)
        if abs(bae_mid - target_bae_db) <= tol_db:
            return TuneResult(
                lam=lam_mid,
                achieved_bae_db=bae_mid,
                target_bae_db=target_bae_db,
                iterations=it + 1,
                evaluations=evals,
            )
        if bae_mid > target_bae_db:
            log_lo = log_mid  # effort too high: increase lam
        else:
            log_hi = log_mid
    raise TuneError(
        f"bisection did not reach {target_bae_db:.3f} dB within {tol_db} dB after "
        f"{max_iter} iterations (last: lam={lam_mid:g}, effort={bae_mid:.3f} dB); "
        "the effort may not vary monotonically over the bracket"
    )
