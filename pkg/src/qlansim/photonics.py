"""Polarization-entangled pair source, analyzers, and detection streams.

Two-photon states live in the basis (HH, HV, VH, VV), first factor = arm A.
Each arm's analyzer is a quarter-wave plate, then a half-wave plate, then a
polarizing beam splitter; the detector sits on one PBS port.  The measured
projector is W P_port W^dagger with W = HWP(hwp) * QWP(qwp) applied to the
port eigenstate (the state the analyzer back-propagates from that port):

    (qwp, hwp, port) = (0, 0, transmit)    -> |H><H|
    (0, 0, reflect)                        -> |V><V|
    (0, pi/8, transmit)                    -> |D><D|
    (0, pi/8, reflect)                     -> |A><A|
    (pi/4, 0, transmit)                    -> |R><R|,  R = (H + iV)/sqrt(2)

Angles are radians; times are seconds; jitters picoseconds; delays nanoseconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

__all__ = [
    "AnalyzerSetting",
    "ArmConfig",
    "BASIS_LABELS",
    "DensityMatrix",
    "FringeFit",
    "ScanCurve",
    "StateValidationError",
    "analyzer_projector",
    "apply_hv_phase",
    "basis_setting",
    "bell_psi_plus",
    "estimate_residual_phase",
    "fit_fringe",
    "generate_streams",
    "joint_probability",
    "maximally_mixed",
    "product_state",
    "pure_state",
    "waveplate_scan",
    "werner_state",
]

BASIS_LABELS = ("HH", "HV", "VH", "VV")

_HERMITICITY_TOL = 1e-12
_TRACE_TOL = 1e-12
_EIGENVALUE_TOL = -1e-10


class StateValidationError(ValueError):
    """Matrix handed in as a state is not a valid two-qubit density matrix."""


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Validated 4x4 density matrix in the (HH, HV, VH, VV) basis."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.complex128)
        if m.shape != (4, 4):
            raise StateValidationError(f"expected a 4x4 matrix, got shape {m.shape}")
        if np.abs(m - m.conj().T).max() > _HERMITICITY_TOL:
            raise StateValidationError("matrix is not hermitian")
        trace = m.trace()
        if abs(trace - 1.0) > _TRACE_TOL:
            raise StateValidationError(f"trace is {trace}, expected 1")
        eigs = np.linalg.eigvalsh(m)
        if eigs.min() < _EIGENVALUE_TOL:
            raise StateValidationError(f"negative eigenvalue {eigs.min()}")
        object.__setattr__(self, "matrix", m)


def pure_state(vector: Sequence[complex]) -> DensityMatrix:
    """|v><v| for a (possibly unnormalized) 4-component state vector."""
    v = np.asarray(vector, dtype=np.complex128).reshape(4)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise StateValidationError("zero state vector")
    v = v / norm
    return DensityMatrix(np.outer(v, v.conj()))


def bell_psi_plus() -> DensityMatrix:
    """(|HV> + |VH>)/sqrt(2), the state the source is aligned to emit."""
    return pure_state([0.0, 1.0, 1.0, 0.0])


def maximally_mixed() -> DensityMatrix:
    return DensityMatrix(np.eye(4) / 4.0)


def werner_state(p: float) -> DensityMatrix:
    """Depolarized singlet-class state: p * bell + (1-p) * I/4.

    One number captures the total white noise on the link; fidelity to the
    bell state is (1 + 3p)/4.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"mixing weight p must be in [0, 1], got {p}")
    return DensityMatrix(p * bell_psi_plus().matrix + (1.0 - p) * np.eye(4) / 4.0)


def product_state(rho_a: np.ndarray, rho_b: np.ndarray) -> DensityMatrix:
    """Tensor product of two single-qubit states (no entanglement)."""
    return DensityMatrix(np.kron(np.asarray(rho_a), np.asarray(rho_b)))


def apply_hv_phase(rho: DensityMatrix, phi: float, arm: Literal["a", "b"] = "a") -> DensityMatrix:
    """Apply the residual birefringent phase diag(1, e^{i phi}) in one arm.

    On the bell state, arm "a" gives (|HV> + e^{i phi}|VH>)/sqrt(2).
    """
    u1 = np.diag([1.0, np.exp(1j * phi)])
    u = np.kron(u1, np.eye(2)) if arm == "a" else np.kron(np.eye(2), u1)
    return DensityMatrix(u @ rho.matrix @ u.conj().T)


# ---------------------------------------------------------------------------
# analyzers


@dataclass(frozen=True)
class AnalyzerSetting:
    """Wave-plate angles (radians) and the monitored PBS port of one arm."""

    qwp_rad: float = 0.0
    hwp_rad: float = 0.0
    port: Literal["transmit", "reflect"] = "transmit"

    def __post_init__(self) -> None:
        if self.port not in ("transmit", "reflect"):
            raise ValueError(f"port must be 'transmit' or 'reflect', got {self.port!r}")


_BASIS_SETTINGS = {
    "H": AnalyzerSetting(0.0, 0.0, "transmit"),
    "V": AnalyzerSetting(0.0, 0.0, "reflect"),
    "D": AnalyzerSetting(0.0, math.pi / 8, "transmit"),
    "A": AnalyzerSetting(0.0, math.pi / 8, "reflect"),
    "R": AnalyzerSetting(math.pi / 4, 0.0, "transmit"),
    "L": AnalyzerSetting(math.pi / 4, 0.0, "reflect"),
}


def basis_setting(label: str) -> AnalyzerSetting:
    """Setting that projects onto the named polarization (H V D A R L)."""
    try:
        return _BASIS_SETTINGS[label.upper()]
    except KeyError:
        raise ValueError(f"unknown polarization label {label!r}") from None


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _hwp_jones(theta: float) -> np.ndarray:
    return _rotation(theta) @ np.diag([1.0, -1.0]) @ _rotation(-theta)


def _qwp_jones(theta: float) -> np.ndarray:
    return _rotation(theta) @ np.diag([1.0, 1.0j]) @ _rotation(-theta)


def analyzer_projector(setting: AnalyzerSetting) -> np.ndarray:
    """Rank-1 projector (2x2) measured by one arm at this setting."""
    w = _hwp_jones(setting.hwp_rad) @ _qwp_jones(setting.qwp_rad)
    port_vec = np.array([1.0, 0.0]) if setting.port == "transmit" else np.array([0.0, 1.0])
    v = w @ port_vec.astype(np.complex128)
    return np.outer(v, v.conj())


def joint_probability(
    rho: DensityMatrix, setting_a: AnalyzerSetting, setting_b: AnalyzerSetting
) -> float:
    """Probability that a pair fires both selected ports, Tr[rho Pa x Pb]."""
    proj = np.kron(analyzer_projector(setting_a), analyzer_projector(setting_b))
    p = float(np.real(np.trace(rho.matrix @ proj)))
    return min(max(p, 0.0), 1.0)


# ---------------------------------------------------------------------------
# detection streams


@dataclass(frozen=True)
class ArmConfig:
    """Per-arm link budget: channel transmission, detector darks and jitter,
    and the fiber path delay to the node."""

    transmission: float = 1.0
    dark_rate_hz: float = 0.0
    jitter_sigma_ps: float = 0.0
    path_delay_ns: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.transmission <= 1.0:
            raise ValueError(f"transmission must be in [0, 1], got {self.transmission}")
        if self.dark_rate_hz < 0:
            raise ValueError(f"dark_rate_hz must be >= 0, got {self.dark_rate_hz}")
        if self.jitter_sigma_ps < 0:
            raise ValueError(f"jitter_sigma_ps must be >= 0, got {self.jitter_sigma_ps}")


def generate_streams(
    rho: DensityMatrix,
    pair_rate_hz: float,
    duration_s: float,
    setting_a: AnalyzerSetting,
    setting_b: AnalyzerSetting,
    arm_a: ArmConfig,
    arm_b: ArmConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the two detection-time streams (sorted float seconds).

    Pairs are emitted as a Poisson process; each photon passes its analyzer
    with the joint statistics of ``rho`` at the two settings, survives its arm
    with the configured transmission, and lands at emission time + path delay
    + gaussian detector jitter.  Dark counts are uniform and uncorrelated.
    The empirical coincidence fraction converges to
    joint_probability * transmission_a * transmission_b.
    """
    if pair_rate_hz < 0:
        raise ValueError(f"pair_rate_hz must be >= 0, got {pair_rate_hz}")
    if duration_s <= 0:
        raise ValueError(f"duration_s must be > 0, got {duration_s}")

    n_pairs = int(rng.poisson(pair_rate_hz * duration_s))
    emission = np.sort(rng.uniform(0.0, duration_s, size=n_pairs))

    p_joint = joint_probability(rho, setting_a, setting_b)
    proj_a = np.kron(analyzer_projector(setting_a), np.eye(2))
    proj_b = np.kron(np.eye(2), analyzer_projector(setting_b))
    p_a = float(np.real(np.trace(rho.matrix @ proj_a)))
    p_b = float(np.real(np.trace(rho.matrix @ proj_b)))
    # outcome categories: both pass, only a, only b, neither
    p10 = max(p_a - p_joint, 0.0)
    p01 = max(p_b - p_joint, 0.0)
    u = rng.random(n_pairs)
    pass_a = u < p_joint + p10
    pass_b = (u < p_joint) | ((u >= p_joint + p10) & (u < p_joint + p10 + p01))

    def arm_times(passed: np.ndarray, arm: ArmConfig) -> np.ndarray:
        kept = passed & (rng.random(n_pairs) < arm.transmission)
        times = emission[kept] + arm.path_delay_ns * 1e-9
        if arm.jitter_sigma_ps > 0:
            times = times + rng.normal(0.0, arm.jitter_sigma_ps * 1e-12, size=times.size)
        if arm.dark_rate_hz > 0:
            n_dark = int(rng.poisson(arm.dark_rate_hz * duration_s))
            darks = rng.uniform(0.0, duration_s, size=n_dark) + arm.path_delay_ns * 1e-9
            times = np.concatenate([times, darks])
        return np.sort(times)

    return arm_times(pass_a, arm_a), arm_times(pass_b, arm_b)


# ---------------------------------------------------------------------------
# phase-compensation scan


@dataclass(frozen=True)
class ScanCurve:
    """Coincidence response of a retardance scan in arm A."""

    angles_rad: np.ndarray
    values: np.ndarray
    sampled: bool  # True when values are Poisson counts rather than probabilities


@dataclass(frozen=True)
class FringeFit:
    amplitude: float
    phase_rad: float
    offset: float

    @property
    def visibility(self) -> float:
        if self.offset <= 0:
            raise ValueError("fringe offset is not positive; visibility undefined")
        return self.amplitude / self.offset


def _scan_projector(fixed: AnalyzerSetting, retardance_rad: float) -> np.ndarray:
    # variable H/V retarder (birefringent compensator) ahead of the analyzer
    ret = np.diag([1.0, np.exp(1j * retardance_rad)])
    base = analyzer_projector(fixed)
    return ret.conj().T @ base @ ret


def waveplate_scan(
    rho: DensityMatrix,
    angles_rad: Sequence[float],
    fixed_setting_b: AnalyzerSetting | None = None,
    analyzer_setting_a: AnalyzerSetting | None = None,
    counts_scale: float | None = None,
    rng: np.random.Generator | None = None,
) -> ScanCurve:
    """Sweep the compensator retardance in arm A against a fixed arm B.

    Both analyzers default to D.  For a bell state with residual phase phi the
    expected curve is (1 + cos(angle + phi))/4, so the fitted fringe phase
    reads the residual phase directly (see estimate_residual_phase).  With
    ``counts_scale`` set, per-step Poisson counts with mean counts_scale *
    probability are drawn instead of exact probabilities.
    """
    angles = np.asarray(angles_rad, dtype=np.float64)
    if angles.size == 0:
        raise ValueError("empty scan plan")
    fixed_b = fixed_setting_b if fixed_setting_b is not None else basis_setting("D")
    base_a = analyzer_setting_a if analyzer_setting_a is not None else basis_setting("D")
    proj_b = analyzer_projector(fixed_b)
    probs = np.empty(angles.size)
    for i, alpha in enumerate(angles):
        proj = np.kron(_scan_projector(base_a, float(alpha)), proj_b)
        probs[i] = min(max(float(np.real(np.trace(rho.matrix @ proj))), 0.0), 1.0)
    if counts_scale is None:
        return ScanCurve(angles_rad=angles, values=probs, sampled=False)
    if rng is None:
        raise ValueError("counts_scale requires an rng")
    counts = rng.poisson(counts_scale * probs).astype(np.float64)
    return ScanCurve(angles_rad=angles, values=counts, sampled=True)


def fit_fringe(curve: ScanCurve, harmonic: int = 1) -> FringeFit:
    """Least-squares fit of offset + amplitude * cos(harmonic * angle - phase)."""
    angles = curve.angles_rad
    if angles.size < 3:
        raise ValueError("need at least 3 scan points to fit a fringe")
    design = np.column_stack(
        [np.ones_like(angles), np.cos(harmonic * angles), np.sin(harmonic * angles)]
    )
    coeffs, *_ = np.linalg.lstsq(design, curve.values, rcond=None)
    offset, a_c, a_s = (float(c) for c in coeffs)
    return FringeFit(
        amplitude=math.hypot(a_c, a_s), phase_rad=math.atan2(a_s, a_c), offset=offset
    )


def estimate_residual_phase(curve: ScanCurve) -> float:
    """Residual H/V phase (radians, in (-pi, pi]) read off the fringe."""
    fit = fit_fringe(curve)
    phi = -fit.phase_rad
    if phi <= -math.pi:
        phi += 2 * math.pi
    elif phi > math.pi:
        phi -= 2 * math.pi
    return phi
