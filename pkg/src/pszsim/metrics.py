"""Reproduction quality metrics: relative energy error, contrast, array effort.

All metrics operate on complex sound-field vectors sampled on the monitor
grid.  Broadband variants aggregate *energies* across frequency bins before
taking the ratio and the log; they are not averages of per-bin dB values.

Exact-zero numerators or denominators are clamped to +/-300 dB where the
definition allows it, and the clamp is flagged in :class:`MetricsReport`.

CSV schema (frozen): one row per frequency bin plus one broadband row, with
columns ``kind, freq_hz, re_b_db, re_d_db, ac_db, ae_db`` where ``kind`` is
``bin`` or ``broadband`` and ``freq_hz`` is empty on the broadband row.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

CLAMP_DB = 300.0

CSV_COLUMNS = ("kind", "freq_hz", "re_b_db", "re_d_db", "ac_db", "ae_db")


class ZeroReferenceError(ValueError):
    """The reference energy of a metric is exactly zero."""


def _mean_energy(x: np.ndarray) -> float:
    x = np.asarray(x)
    return float(np.mean(np.abs(x) ** 2))


def relative_energy_error(
    reproduced: np.ndarray, target_ref: np.ndarray, zone: str = "bright"
) -> float:
    """Relative mean energy error in dB for one frequency bin.

    For the bright zone this is the error energy between ``reproduced`` and
    ``target_ref`` over the mean energy of ``target_ref``.  For the dark zone
    the numerator is the reproduced energy itself (the dark target is zero)
    but the denominator stays the *bright* target energy, so the two zones
    share a reference scale.

    Parameters
    ----------
    reproduced : complex (M_zone,)
        Reproduced field in the zone being scored.
    target_ref : complex (M_B,)
        Bright-zone target; also the error reference for ``zone="bright"``.
    zone : "bright" or "dark"
    """
    if zone not in ("bright", "dark"):
        raise ValueError(f"zone must be 'bright' or 'dark', got {zone!r}")
    ref = _mean_energy(target_ref)
    if ref == 0.0:
        raise ZeroReferenceError("bright-zone target has zero energy")
    if zone == "bright":
        num = _mean_energy(np.asarray(reproduced) - np.asarray(target_ref))
    else:
        num = _mean_energy(reproduced)
    if num == 0.0:
        return -CLAMP_DB
    return 10.0 * math.log10(num / ref)


def broadband_relative_energy_error(
    reproduced: np.ndarray, target_ref: np.ndarray, zone: str = "bright"
) -> float:
    """Broadband RE: energies summed over all (frequency, point) entries first."""
    if zone not in ("bright", "dark"):
        raise ValueError(f"zone must be 'bright' or 'dark', got {zone!r}")
    ref = _mean_energy(target_ref)
    if ref == 0.0:
        raise ZeroReferenceError("bright-zone target has zero energy")
    if zone == "bright":
        num = _mean_energy(np.asarray(reproduced) - np.asarray(target_ref))
    else:
        num = _mean_energy(reproduced)
    if num == 0.0:
        return -CLAMP_DB
    return 10.0 * math.log10(num / ref)


def acoustic_contrast(g_bright: np.ndarray, g_dark: np.ndarray) -> float:
    """Bright-to-dark mean energy ratio in dB for one frequency bin.

    A dark zone with exactly zero energy clamps to +300 dB.
    """
    num = _mean_energy(g_bright)
    den = _mean_energy(g_dark)
    if den == 0.0:
        return CLAMP_DB
    if num == 0.0:
        return -CLAMP_DB
    return 10.0 * math.log10(num / den)


def broadband_acoustic_contrast(g_bright: np.ndarray, g_dark: np.ndarray) -> float:
    """Broadband AC: zone energies aggregated over all bins before the ratio.

    Inputs are (K, M_B') and (K, M_D') reproduced fields.
    """
    return acoustic_contrast(g_bright, g_dark)


def array_effort(
    prefilters: np.ndarray,
    h_mon_bright: np.ndarray,
    g_bright: np.ndarray,
    ref_speaker: int,
) -> float:
    """Array effort in dB for one frequency bin.

    The reference is a single loudspeaker (column ``ref_speaker`` of
    ``h_mon_bright``) driven to produce the same mean bright-zone energy as
    the array's reproduced field ``g_bright``:

        ``|a_ref|^2 = mean|g_B|^2 / mean|H[:, ref]|^2``
        ``AE = 10*log10( sum_l |a_l|^2 / |a_ref|^2 )``

    Parameters
    ----------
    prefilters : complex (L,)
    h_mon_bright : complex (M_B', L)
        Bright-zone monitor-grid transfer functions.
    g_bright : complex (M_B',)
        Reproduced bright-zone field for these prefilters.
    ref_speaker : column index of the reference loudspeaker.
    """
    ref_energy = _mean_energy(np.asarray(h_mon_bright)[:, ref_speaker])
    if ref_energy == 0.0:
        raise ZeroReferenceError("reference loudspeaker has zero energy in the bright zone")
    rep_energy = _mean_energy(g_bright)
    if rep_energy == 0.0:
        raise ZeroReferenceError("reproduced bright-zone energy is zero")
    a_ref_sq = rep_energy / ref_energy
    total = float(np.sum(np.abs(np.asarray(prefilters)) ** 2))
    return 10.0 * math.log10(total / a_ref_sq)


def broadband_array_effort(
    prefilters: np.ndarray,
    h_mon_bright: np.ndarray,
    g_bright: np.ndarray,
    ref_speaker: int,
) -> float:
    """Broadband AE: numerator and denominator energies summed over bins first.

    Inputs are (K, L) prefilters, (K, M_B', L) monitor transfer functions and
    (K, M_B') reproduced bright fields.
    """
    h = np.asarray(h_mon_bright)
    num = 0.0
    den = 0.0
    for k in range(h.shape[0]):
        ref_energy = _mean_energy(h[k, :, ref_speaker])
        if ref_energy == 0.0:
            raise ZeroReferenceError(
                f"reference loudspeaker has zero bright-zone energy at bin {k}"
            )
        rep_energy = _mean_energy(np.asarray(g_bright)[k])
        num += float(np.sum(np.abs(np.asarray(prefilters)[k]) ** 2))
        den += rep_energy / ref_energy
    if den == 0.0:
        raise ZeroReferenceError("reproduced bright-zone energy is zero in every bin")
    return 10.0 * math.log10(num / den)


@dataclass
class MetricsReport:
    """Per-frequency and broadband metrics for one evaluated prefilter set."""

    freqs_hz: np.ndarray
    re_b: np.ndarray
    re_d: np.ndarray
    ac: np.ndarray
    ae: np.ndarray
    b_re_b: float
    b_re_d: float
    b_ac: float
    b_ae: float
    clamped: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        k = len(self.freqs_hz)
        for name in ("re_b", "re_d", "ac", "ae"):
            if len(getattr(self, name)) != k:
                raise ValueError(f"{name} length does not match the frequency grid")
        self.clamped = bool(
            self.clamped
            or any(
                np.any(np.abs(getattr(self, name)) >= CLAMP_DB)
                for name in ("re_b", "re_d", "ac", "ae")
            )
            or any(
                abs(v) >= CLAMP_DB
                for v in (self.b_re_b, self.b_re_d, self.b_ac, self.b_ae)
            )
        )

    def to_dict(self) -> dict:
        return {
            "freqs_hz": [float(f) for f in self.freqs_hz],
            "re_b_db": [float(v) for v in self.re_b],
            "re_d_db": [float(v) for v in self.re_d],
            "ac_db": [float(v) for v in self.ac],
            "ae_db": [float(v) for v in self.ae],
            "broadband": {
                "re_b_db": float(self.b_re_b),
                "re_d_db": float(self.b_re_d),
                "ac_db": float(self.b_ac),
                "ae_db": float(self.b_ae),
            },
            "clamped": self.clamped,
            "metadata": self.metadata,
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def csv_rows(self) -> list[tuple[str, str, str, str, str, str]]:
        """K bin rows plus one broadband row, columns per ``CSV_COLUMNS``."""
        fmt = lambda v: f"{v:.10g}"
        rows = [
            ("bin", fmt(f), fmt(rb), fmt(rd), fmt(a), fmt(e))
            for f, rb, rd, a, e in zip(self.freqs_hz, self.re_b, self.re_d, self.ac, self.ae)
        ]
        rows.append(
            ("broadband", "", fmt(self.b_re_b), fmt(self.b_re_d), fmt(self.b_ac), fmt(self.b_ae))
        )
        return rows


def compute_report(
    prefilters: np.ndarray,
    h_mon: np.ndarray,
    monitor_target_bright: np.ndarray,
    num_bright_monitor: int,
    freqs_hz: np.ndarray,
    ref_speaker: int,
    metadata: dict | None = None,
) -> MetricsReport:
    """Evaluate one prefilter set on the monitor grid.

    Parameters
    ----------
    prefilters : complex (K, L)
    h_mon : complex (K, M', L)
        Monitor transfer functions, bright-zone rows first.
    monitor_target_bright : complex (K, M_B')
        Bright-zone monitor target; the dark-zone target is zero.
    num_bright_monitor : number of bright-zone rows in ``h_mon``.
    freqs_hz : (K,) frequencies for reporting.
    ref_speaker : reference loudspeaker index for effort metrics.
    """
    a = np.asarray(prefilters)
    h = np.asarray(h_mon)
    tgt = np.asarray(monitor_target_bright)
    k_count = h.shape[0]
    reproduced = np.einsum("kml,kl->km", h, a)
    g_b = reproduced[:, :num_bright_monitor]
    g_d = reproduced[:, num_bright_monitor:]
    re_b = np.array(
        [relative_energy_error(g_b[k], tgt[k], "bright") for k in range(k_count)]
    )
    re_d = np.array(
        [relative_energy_error(g_d[k], tgt[k], "dark") for k in range(k_count)]
    )
    ac = np.array([acoustic_contrast(g_b[k], g_d[k]) for k in range(k_count)])
    ae = np.array(
        [
            array_effort(a[k], h[k, :num_bright_monitor, :], g_b[k], ref_speaker)
            for k in range(k_count)
        ]
    )
    return MetricsReport(
        freqs_hz=np.asarray(freqs_hz, dtype=float),
        re_b=re_b,
        re_d=re_d,
        ac=ac,
        ae=ae,
        b_re_b=broadband_relative_energy_error(g_b, tgt, "bright"),
        b_re_d=broadband_relative_energy_error(g_d, tgt, "dark"),
        b_ac=broadband_acoustic_contrast(g_b, g_d),
        b_ae=broadband_array_effort(a, h[:, :num_bright_monitor, :], g_b, ref_speaker),
        metadata=metadata or {},
    )
