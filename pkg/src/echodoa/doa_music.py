"""MUSIC direction-of-arrival estimation for a small array.

Covariance estimation, closed-form 2x2 noise-subspace extraction,
pseudospectrum search with a 0-degree fallback when no convincing peak
exists, and enumeration of grating-lobe ambiguities for element
spacings beyond half a wavelength.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import EchoNotFoundError, InputError, TooFewSnapshotsError
from .signal_sim import (
    ArrayGeometry,
    ComplexBaseband,
    SimConfig,
    detect_echo_window,
    steering_vector,
    wavelength,
)

CONVERGED = "converged"
FALLBACK = "fallback"

# Denominator floor, relative to the numerator, guarding exact nulls.
_DENOM_FLOOR = 1e-12

# Eigenvalue ratio above which the spectrum is flagged degenerate.
_DEGENERATE_GAP = 1.0 - 1e-9


@dataclass(frozen=True)
class NoiseSubspace:
    """Orthonormal basis of the noise subspace plus spectrum metadata."""

    matrix: np.ndarray      # (M, M - D), unit columns
    gap_ratio: float        # lambda_min / lambda_max
    degenerate: bool


@dataclass(frozen=True)
class SpectrumPeak:
    angle_deg: float
    value: float
    prominence: float


@dataclass
class Pseudospectrum:
    """MUSIC power over an angle grid with its local maxima."""

    angles_deg: np.ndarray
    power: np.ndarray
    peaks: list            # SpectrumPeak, sorted by descending prominence

    def write_table(self, path) -> None:
        """Two-column plain-text export (angle_deg, power)."""
        lines = ["# angle_deg power"]
        lines += [f"{a:.17g} {p:.17g}"
                  for a, p in zip(self.angles_deg, self.power)]
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class DoaEstimate:
    """Angle estimate with convergence status and aliasing ambiguities."""

    angle_deg: float
    status: str                     # CONVERGED or FALLBACK
    ambiguity_deg: tuple
    prominence: float = 0.0

    def __post_init__(self):
        if self.status == FALLBACK and self.angle_deg != 0.0:
            raise InputError("fallback estimates report angle 0")
        if self.angle_deg not in self.ambiguity_deg:
            raise InputError("ambiguity set must contain the estimate")


@dataclass(frozen=True)
class MusicOptions:
    """Tuning knobs of the full MUSIC pipeline."""

    grid_step_deg: float = 0.25
    domain_deg: tuple = (-90.0, 90.0)
    prominence_min: float | None = None     # None: 3x the spectrum median
    threshold_factor: float = 5.0
    min_snapshots: int = 16
    degeneracy_max: float = _DEGENERATE_GAP
    source_count: int = 1


def covariance(snapshots: np.ndarray) -> np.ndarray:
    """Sample covariance (1/K) * sum of snapshot outer products.

    ``snapshots`` is (channels, K) complex with K >= channels. The
    result is Hermitian by construction.
    """
    y = np.asarray(snapshots)
    if y.ndim != 2:
        raise InputError("snapshot matrix must be 2-D (channels x snapshots)")
    m, k = y.shape
    if k < m:
        raise TooFewSnapshotsError(f"{k} snapshots for {m} channels")
    return (y @ y.conj().T) / k


def noise_subspace(r: np.ndarray, source_count: int = 1) -> NoiseSubspace:
    """Eigenvectors of the smallest M - D covariance eigenvalues.

    For two channels the closed-form Hermitian eigendecomposition is
    used: eigenvalues (a+c)/2 +- sqrt(((a-c)/2)^2 + |b|^2). Columns are
    unit norm with the first nonzero component made real positive. A
    near-flat eigenvalue spectrum is reported via ``degenerate``, not
    raised.
    """
    r = np.asarray(r)
    m = r.shape[0]
    if r.shape != (m, m):
        raise InputError("covariance must be square")
    if not 1 <= source_count < m:
        raise InputError("source count must satisfy 1 <= D < M")

    if m == 2:
        a = float(r[0, 0].real)
        c = float(r[1, 1].real)
        b = complex(r[0, 1])
        mean = 0.5 * (a + c)
        half = math.hypot(0.5 * (a - c), abs(b))
        lam_max, lam_min = mean + half, mean - half
        scale = max(abs(a), abs(c), abs(b))
        if scale == 0.0 or half <= 1e-15 * scale:
            # flat spectrum: deterministic tie-break on the second axis
            return NoiseSubspace(matrix=np.array([[0.0], [1.0]], dtype=complex),
                                 gap_ratio=1.0 if scale else 0.0,
                                 degenerate=True)
        # pick the better conditioned of the two eigenvector formulas
        if abs(lam_min - a) >= abs(lam_min - c):
            v = np.array([b, lam_min - a], dtype=complex)
        else:
            v = np.array([lam_min - c, np.conj(b)], dtype=complex)
        vecs = v[:, None]
    else:
        eigvals, eigvecs = np.linalg.eigh(r)
        lam_min, lam_max = float(eigvals[0]), float(eigvals[-1])
        vecs = eigvecs[:, :m - source_count]

    cols = []
    for j in range(vecs.shape[1]):
        v = vecs[:, j]
        v = v / np.linalg.norm(v)
        nz = np.flatnonzero(np.abs(v) > 1e-12)
        lead = v[nz[0]]
        cols.append(v * (np.conj(lead) / abs(lead)))
    basis = np.stack(cols, axis=1)
    gap = 1.0 if lam_max <= 0 else max(lam_min, 0.0) / lam_max
    return NoiseSubspace(matrix=basis, gap_ratio=gap,
                         degenerate=gap > _DEGENERATE_GAP)


def _angle_grid(domain_deg, step_deg):
    lo, hi = domain_deg
    if not (-90.0 <= lo < hi <= 90.0):
        raise InputError("domain must be an interval inside [-90, 90]")
    if step_deg <= 0:
        raise InputError("grid step must be positive")
    count = round((hi - lo) / step_deg)
    return lo + step_deg * np.arange(count + 1)


def pseudospectrum(subspace: NoiseSubspace, geometry: ArrayGeometry,
                   wavelength_m: float, grid_step_deg: float = 0.25,
                   domain_deg=( -90.0, 90.0)) -> Pseudospectrum:
    """MUSIC pseudospectrum P = (a^H a) / (a^H Vn Vn^H a) on a grid.

    The denominator is floored at 1e-12 times the numerator so exact
    nulls stay finite. Peaks are strict local maxima (grid endpoints
    included) carrying their prominence.
    """
    angles = _angle_grid(domain_deg, grid_step_deg)
    x = np.asarray(geometry.element_x) - geometry.element_x[0]
    m = geometry.num_elements
    sines = np.sin(np.radians(angles))
    steering = np.exp(-2j * np.pi * np.outer(sines, x) / wavelength_m)  # (n, M)
    proj = steering.conj() @ subspace.matrix                            # (n, M-D)
    denom = np.sum(np.abs(proj) ** 2, axis=1)
    numer = float(m)
    power = numer / np.maximum(denom, _DENOM_FLOOR * numer)

    # pad with the global minimum so boundary maxima are eligible
    padded = np.concatenate(([power.min()], power, [power.min()]))
    idx, props = sps.find_peaks(padded, prominence=0.0)
    peaks = [SpectrumPeak(angle_deg=float(angles[i - 1]),
                          value=float(padded[i]),
                          prominence=float(p))
             for i, p in zip(idx, props["prominences"])]
    peaks.sort(key=lambda pk: (-pk.prominence, pk.angle_deg))
    return Pseudospectrum(angles_deg=angles, power=power, peaks=peaks)


def grating_lobe_set(doa_deg: float, geometry: ArrayGeometry,
                     wavelength_m: float) -> list:
    """All angles aliased with ``doa_deg`` for the pair spacing.

    Solutions of sin(t') = sin(t) + k * lambda / d over [-90, 90],
    including k = 0, sorted ascending with near-duplicates merged.
    """
    if abs(doa_deg) > 90.0:
        raise InputError("doa_deg must lie in [-90, 90]")
    d = geometry.element_x[1] - geometry.element_x[0]
    ratio = wavelength_m / d
    s0 = math.sin(math.radians(doa_deg))
    k_lo = math.ceil((-1.0 - s0) / ratio - 1e-12)
    k_hi = math.floor((1.0 - s0) / ratio + 1e-12)
    angles = []
    for k in range(k_lo, k_hi + 1):
        s = s0 + k * ratio
        if abs(s) > 1.0:
            continue
        ang = math.degrees(math.asin(s))
        if not any(abs(ang - a) < 1e-9 for a in angles):
            angles.append(ang)
    # keep the queried angle exactly as given
    angles = [doa_deg if abs(a - doa_deg) < 1e-9 else a for a in angles]
    return sorted(angles)


def _fallback() -> DoaEstimate:
    return DoaEstimate(angle_deg=0.0, status=FALLBACK, ambiguity_deg=(0.0,))


def estimate_doa_music(base: ComplexBaseband, geometry: ArrayGeometry,
                       config: SimConfig,
                       options: MusicOptions = MusicOptions()) -> DoaEstimate:
    """Full pipeline: detect echo, covariance, subspace, peak search.

    Returns a fallback (angle 0) instead of raising when the echo is
    not detected, no peak is prominent enough, or the eigenvalue
    spectrum is degenerate. Estimation failure is never an exception.
    """
    if base.data.shape[0] != geometry.num_elements:
        raise InputError("baseband channel count does not match the geometry")
    try:
        window = detect_echo_window(base, options.threshold_factor,
                                    min_len=options.min_snapshots)
    except EchoNotFoundError:
        return _fallback()

    snapshots = base.data[:, window.start:window.stop]
    r = covariance(snapshots)
    subspace = noise_subspace(r, options.source_count)
    if subspace.gap_ratio > options.degeneracy_max:
        return _fallback()

    lam = wavelength(config)
    spectrum = pseudospectrum(subspace, geometry, lam,
                              options.grid_step_deg, options.domain_deg)
    if not spectrum.peaks:
        return _fallback()
    prominence_min = (options.prominence_min if options.prominence_min is not None
                      else 3.0 * float(np.median(spectrum.power)))
    best = spectrum.peaks[0]
    if best.prominence < prominence_min:
        return _fallback()
    ambiguity = grating_lobe_set(best.angle_deg, geometry, lam)
    return DoaEstimate(angle_deg=best.angle_deg, status=CONVERGED,
                       ambiguity_deg=tuple(ambiguity),
                       prominence=best.prominence)
