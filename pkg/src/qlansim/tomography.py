"""Bayesian two-qubit state reconstruction and entanglement metrics.

Counts from joint polarization settings feed a Poisson likelihood.  States
are parameterized by a normalized lower-triangular (Cholesky-style) factor,
rho = T T^dag / tr(T T^dag), so every sample is Hermitian, unit-trace, and
positive by construction.  The prior is flat over this parameterization:
only the direction of the 16-component parameter vector matters to the
state, and the standard normal factor applied to it has a uniform direction
distribution, so it pins the irrelevant radius without reweighting states.
A 17th parameter carries the log of the detected-pair intensity.

Random-walk Metropolis with independent chains.  Burn-in first tunes an
isotropic step toward a standard acceptance target, then switches to
proposals drawn from the empirical covariance of the chain so far -- counts
constrain some parameter directions far more tightly than others, and an
isotropic walk mixes poorly across that spread.  Both the covariance and
the scale freeze at the end of burn-in.  Convergence is checked with the
split-chain diagnostic on the fidelity and log-negativity traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .photonics import (
    BASIS_LABELS,
    AnalyzerSetting,
    DensityMatrix,
    analyzer_projector,
    basis_setting,
)

__all__ = [
    "ChainConfig",
    "ConvergenceError",
    "MeanStd",
    "PosteriorSummary",
    "RateModel",
    "TomographyDataset",
    "complete_settings",
    "dataset_to_json",
    "default_settings",
    "entanglement_rate",
    "fidelity",
    "log_negativity",
    "reconstruct",
    "setting_label",
    "simulate_dataset",
    "state_to_json",
    "summary_to_json",
]

_ACCEPT_TARGET = 0.234
_ADAPT_INTERVAL = 50


class ConvergenceError(RuntimeError):
    """Chains disagree after the configured number of draws."""


def fidelity(rho: DensityMatrix, target: np.ndarray | DensityMatrix) -> float:
    """Overlap <target|rho|target> with a pure target state."""
    if isinstance(target, DensityMatrix):
        purity = float(np.real(np.trace(target.matrix @ target.matrix)))
        if abs(purity - 1.0) > 1e-9:
            raise ValueError(f"target must be a pure state, got purity {purity:.6f}")
        value = np.trace(rho.matrix @ target.matrix)
    else:
        vec = np.asarray(target, dtype=np.complex128).reshape(-1)
        if vec.shape != (4,):
            raise ValueError(f"target vector must have 4 amplitudes, got {vec.shape}")
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ValueError("target vector is zero")
        vec = vec / norm
        value = vec.conj() @ rho.matrix @ vec
    if abs(value.imag) > 1e-12:
        raise ValueError(f"fidelity came out complex ({value.imag:.2e} imaginary)")
    return float(min(max(value.real, 0.0), 1.0))


def _partial_transpose_b(matrix: np.ndarray) -> np.ndarray:
    return matrix.reshape(2, 2, 2, 2).transpose(0, 3, 2, 1).reshape(4, 4)


def log_negativity(rho: DensityMatrix) -> float:
    """log2 of the trace norm of the partial transpose; 0 for PPT states."""
    eigenvalues = np.linalg.eigvalsh(_partial_transpose_b(rho.matrix))
    trace_norm = float(np.abs(eigenvalues).sum())
    value = math.log2(trace_norm)
    # eigensolver noise puts PPT states a few ulp either side of zero
    return value if value > 1e-12 else 0.0


def entanglement_rate(e_n: float, coincidence_rate_hz: float) -> float:
    """Ebits per second delivered: E_N times the coincidence rate."""
    if e_n < 0 or coincidence_rate_hz < 0:
        raise ValueError("log negativity and rate must be non-negative")
    return e_n * coincidence_rate_hz


@dataclass(frozen=True)
class RateModel:
    """Detected-pair rate plus the singles/window that set the accidental floor."""

    pair_rate_hz: float
    singles_a_hz: float = 0.0
    singles_b_hz: float = 0.0
    window_ns: float = 1.0

    def __post_init__(self) -> None:
        if min(self.pair_rate_hz, self.singles_a_hz, self.singles_b_hz) < 0:
            raise ValueError("rates must be non-negative")
        if self.window_ns <= 0:
            raise ValueError("window must be positive")

    @property
    def accidental_rate_hz(self) -> float:
        return self.singles_a_hz * self.singles_b_hz * self.window_ns * 1e-9


SettingPair = tuple[AnalyzerSetting, AnalyzerSetting]


def default_settings() -> tuple[SettingPair, ...]:
    """All 16 joint settings over the rectilinear and diagonal bases."""
    labels = ("H", "V", "D", "A")
    return tuple(
        (basis_setting(a), basis_setting(b)) for a in labels for b in labels
    )


def complete_settings() -> tuple[SettingPair, ...]:
    """A 16-setting tomographically complete choice (adds a circular basis)."""
    labels = ("H", "V", "D", "R")
    return tuple(
        (basis_setting(a), basis_setting(b)) for a in labels for b in labels
    )


def setting_label(setting: AnalyzerSetting) -> str:
    for label in ("H", "V", "D", "A", "R", "L"):
        if basis_setting(label) == setting:
            return label
    return f"qwp={setting.qwp_rad:.4f},hwp={setting.hwp_rad:.4f},{setting.port}"


@dataclass(frozen=True, eq=False)
class TomographyDataset:
    """Coincidence counts per joint analyzer setting."""

    settings: tuple[SettingPair, ...]
    counts: np.ndarray
    integration_time_s: float
    accidental_rate_hz: float = 0.0

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "settings", tuple(self.settings))
        if len(self.settings) == 0:
            raise ValueError("dataset needs at least one setting")
        if counts.shape != (len(self.settings),):
            raise ValueError(
                f"counts shape {counts.shape} does not match {len(self.settings)} settings"
            )
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if self.integration_time_s <= 0:
            raise ValueError("integration time must be positive")
        if self.accidental_rate_hz < 0:
            raise ValueError("accidental rate must be non-negative")

    @property
    def total_counts(self) -> int:
        return int(self.counts.sum())

    def measured_pair_rate_hz(self) -> float:
        """Accidental-corrected detected-pair rate, one complete basis worth.

        The settings tile complete bases (every group of 4 outcome projectors
        sums to the identity), so total expected signal counts are
        intensity * integration * n_settings / 4.
        """
        signal = self.total_counts - self.accidental_rate_hz * self.integration_time_s * len(
            self.settings
        )
        rate = signal / (self.integration_time_s * len(self.settings) / 4.0)
        return max(rate, 0.0)


def simulate_dataset(
    rho: DensityMatrix,
    settings: tuple[SettingPair, ...],
    rates: RateModel,
    integration_time_s: float,
    rng: np.random.Generator,
) -> TomographyDataset:
    """Poisson counts with mean rate*p(setting)*time plus the accidental floor."""
    settings = tuple(settings)
    if not settings:
        raise ValueError("settings must be non-empty")
    if integration_time_s <= 0:
        raise ValueError("integration time must be positive")
    operators = _measurement_operators(settings)
    probs = _joint_probabilities(rho.matrix, operators)
    means = (rates.pair_rate_hz * probs + rates.accidental_rate_hz) * integration_time_s
    counts = rng.poisson(means)
    return TomographyDataset(
        settings=settings,
        counts=counts,
        integration_time_s=float(integration_time_s),
        accidental_rate_hz=rates.accidental_rate_hz,
    )


def _measurement_operators(settings: tuple[SettingPair, ...]) -> np.ndarray:
    ops = np.empty((len(settings), 4, 4), dtype=np.complex128)
    for k, (setting_a, setting_b) in enumerate(settings):
        ops[k] = np.kron(analyzer_projector(setting_a), analyzer_projector(setting_b))
    return ops


def _joint_probabilities(matrix: np.ndarray, operators: np.ndarray) -> np.ndarray:
    probs = np.einsum("ij,sji->s", matrix, operators).real
    return np.clip(probs, 0.0, 1.0)


def _operator_vectors(operators: np.ndarray) -> np.ndarray:
    """Each Hermitian operator as 16 real coordinates."""
    rows = np.empty((operators.shape[0], 16))
    iu = np.triu_indices(4, k=1)
    for k, op in enumerate(operators):
        rows[k] = np.concatenate(
            [np.diag(op).real, op[iu].real, op[iu].imag]
        )
    return rows


def _linear_inversion_params(
    operators: np.ndarray,
    counts: np.ndarray,
    integration_time_s: float,
    accidental_rate_hz: float,
    intensity_hz: float,
) -> np.ndarray:
    """Rough Cholesky start from least-squares inversion of the counts.

    Keeps eigenvalues clear of zero so the factorization stays conditioned;
    min-norm least squares leaves unmeasured directions near the mixed state.
    """
    probs = np.maximum(
        counts / integration_time_s - accidental_rate_hz, 0.0
    ) / max(intensity_hz, 1e-9)
    design = _operator_vectors(operators)
    # Tr(A B) doubles the off-diagonal coordinate products
    weights = np.concatenate([np.ones(4), np.full(12, 2.0)])
    coords, *_ = np.linalg.lstsq(design * weights, probs, rcond=None)
    estimate = np.zeros((4, 4), dtype=np.complex128)
    estimate[np.diag_indices(4)] = coords[:4]
    iu = np.triu_indices(4, k=1)
    estimate[iu] = coords[4:10] + 1j * coords[10:16]
    estimate = estimate + estimate.conj().T - np.diag(np.diag(estimate))
    values, vectors = np.linalg.eigh(estimate)
    values = np.maximum(values, 1e-3)
    estimate = (vectors * values) @ vectors.conj().T
    estimate /= estimate.trace().real
    factor = np.linalg.cholesky(estimate)
    il = np.tril_indices(4, k=-1)
    params = np.concatenate(
        [np.diag(factor).real, factor[il].real, factor[il].imag]
    )
    return params / np.linalg.norm(params)


def _state_from_params(t: np.ndarray) -> np.ndarray:
    """Normalized T T^dag from 16 real parameters (4 diag + 6 complex below)."""
    factor = np.zeros((4, 4), dtype=np.complex128)
    factor[np.diag_indices(4)] = t[:4]
    il = np.tril_indices(4, k=-1)
    factor[il] = t[4:10] + 1j * t[10:16]
    product = factor @ factor.conj().T
    trace = product.trace().real
    if trace <= 0:
        raise ValueError("degenerate state parameters")
    return product / trace


@dataclass(frozen=True)
class MeanStd:
    mean: float
    std: float

    def __post_init__(self) -> None:
        if self.std < 0:
            raise ValueError("standard deviation cannot be negative")


@dataclass(frozen=True)
class ChainConfig:
    """Random-walk Metropolis settings.

    Defaults are sized for bench-scale datasets (hundreds to thousands of
    counts per setting), where the metric autocorrelation runs to a few
    hundred raw steps.
    """

    draws: int = 80000
    burn_in: int = 10000
    step_scale: float = 0.05
    chains: int = 2
    thin: int = 40

    def __post_init__(self) -> None:
        if self.draws < self.thin or self.burn_in < 0:
            raise ValueError("need draws >= thin and burn_in >= 0")
        if self.step_scale <= 0 or self.thin < 1 or self.chains < 2:
            raise ValueError("step_scale > 0, thin >= 1, chains >= 2 required")


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    """Posterior mean state plus metric summaries and chain diagnostics."""

    mean_state: DensityMatrix
    samples: np.ndarray
    fidelity: MeanStd
    log_negativity: MeanStd
    fidelity_trace: np.ndarray
    log_negativity_trace: np.ndarray
    r_hat: dict[str, float]
    acceptance_rate: float
    final_step_scale: float
    warnings: tuple[str, ...] = field(default_factory=tuple)


def _split_r_hat(chains: list[np.ndarray]) -> float:
    """Potential scale reduction over the half-chains."""
    segments = []
    for trace in chains:
        half = len(trace) // 2
        segments.append(trace[:half])
        segments.append(trace[half : 2 * half])
    segments = np.asarray(segments)
    n = segments.shape[1]
    if n < 2:
        return 1.0
    means = segments.mean(axis=1)
    within = segments.var(axis=1, ddof=1).mean()
    between = n * means.var(ddof=1)
    if within < 1e-14:
        return 1.0
    var_plus = (n - 1) / n * within + between / n
    return float(math.sqrt(var_plus / within))


def _log_posterior(
    params: np.ndarray,
    operators: np.ndarray,
    counts: np.ndarray,
    integration_time_s: float,
    accidental_rate_hz: float,
) -> float:
    matrix = _state_from_params(params[:16])
    probs = _joint_probabilities(matrix, operators)
    means = (math.exp(params[16]) * probs + accidental_rate_hz) * integration_time_s
    if np.any((means <= 0) & (counts > 0)):
        return -math.inf
    safe = np.maximum(means, 1e-300)
    log_like = float(np.sum(counts * np.log(safe) - means))
    # radius gauge term; uniform over state-relevant directions
    return log_like - 0.5 * float(params[:16] @ params[:16])


def _run_chain(
    rng: np.random.Generator,
    start: np.ndarray,
    config: ChainConfig,
    operators: np.ndarray,
    counts: np.ndarray,
    integration_time_s: float,
    accidental_rate_hz: float,
) -> tuple[np.ndarray, float, float]:
    """One Metropolis chain; returns kept parameter draws, acceptance, scale."""
    params = start.copy()
    log_post = _log_posterior(
        params, operators, counts, integration_time_s, accidental_rate_hz
    )
    step = config.step_scale
    scale = 1.0
    shaper: np.ndarray | None = None
    history = np.empty((config.burn_in, 17)) if config.burn_in else None
    kept = np.empty((config.draws // config.thin, 17))
    kept_n = 0
    accepted_recent = 0
    accepted_total = 0
    # burn-in phases: isotropic walk, covariance refits, then scalar-only
    # polish against the frozen covariance so the final acceptance is honest
    covariance_from = config.burn_in // 2
    covariance_until = (5 * config.burn_in) // 6
    total_steps = config.burn_in + config.draws
    for iteration in range(total_steps):
        noise = rng.standard_normal(17)
        if shaper is None:
            proposal = params + step * noise
        else:
            proposal = params + scale * (shaper @ noise)
        proposal_post = _log_posterior(
            proposal, operators, counts, integration_time_s, accidental_rate_hz
        )
        if math.log(rng.uniform()) < proposal_post - log_post:
            params = proposal
            log_post = proposal_post
            accepted_recent += 1
            if iteration >= config.burn_in:
                accepted_total += 1
        if iteration < config.burn_in:
            history[iteration] = params
            if (iteration + 1) % _ADAPT_INTERVAL == 0:
                rate = accepted_recent / _ADAPT_INTERVAL
                accepted_recent = 0
                if shaper is None:
                    step *= math.exp(0.5 * (rate - _ACCEPT_TARGET))
                else:
                    scale *= math.exp(0.5 * (rate - _ACCEPT_TARGET))
            refit = (
                iteration + 1 >= covariance_from
                and iteration + 1 <= covariance_until
                and (iteration + 1 - covariance_from) % (4 * _ADAPT_INTERVAL) == 0
            )
            if refit:
                window = history[max(0, iteration - 2000) : iteration + 1]
                covariance = np.cov(window.T) + 1e-10 * np.eye(17)
                shaper = np.linalg.cholesky(2.38**2 / 17.0 * covariance)
        else:
            post_index = iteration - config.burn_in
            if (post_index + 1) % config.thin == 0 and kept_n < kept.shape[0]:
                kept[kept_n] = params
                kept_n += 1
    return kept[:kept_n], accepted_total / config.draws, scale if shaper is not None else step


def reconstruct(
    data: TomographyDataset,
    rng: np.random.Generator,
    config: ChainConfig | None = None,
    target: np.ndarray | None = None,
    rhat_threshold: float = 1.1,
) -> PosteriorSummary:
    """Posterior over states given Poisson counts; flat prior, two chains.

    Raises ConvergenceError when the split-chain diagnostic on either metric
    trace exceeds ``rhat_threshold``.  A rank-deficient setting choice is
    reported through ``warnings`` on the returned summary, not an exception.
    """
    config = config or ChainConfig()
    operators = _measurement_operators(data.settings)

    warnings: list[str] = []
    rank = np.linalg.matrix_rank(_operator_vectors(operators), tol=1e-9)
    if rank < 16:
        warnings.append(
            f"settings span {rank} of 16 operator dimensions; "
            "reconstruction is under-determined and leans on the prior"
        )

    # data-driven intensity start: settings tile complete bases
    mixed_probs = _joint_probabilities(np.eye(4) / 4.0, operators)
    prob_mass = float(mixed_probs.sum())
    signal = max(
        data.total_counts / data.integration_time_s
        - data.accidental_rate_hz * len(data.settings),
        1e-6,
    )
    nu0 = math.log(signal / max(prob_mass, 1e-6))

    if target is None:
        target = np.array([0, 1, 1, 0], dtype=np.complex128)
    target_vec = np.asarray(target, dtype=np.complex128).reshape(-1)
    target_vec = target_vec / np.linalg.norm(target_vec)

    base = _linear_inversion_params(
        operators,
        data.counts,
        data.integration_time_s,
        data.accidental_rate_hz,
        math.exp(nu0),
    )

    chain_rngs = rng.spawn(config.chains)
    chain_params: list[np.ndarray] = []
    acceptance = []
    steps = []
    for chain_rng in chain_rngs:
        start = np.empty(17)
        start[:16] = base + 0.05 * chain_rng.standard_normal(16)
        # radius is irrelevant to the state; start near the prior's typical value
        start[:16] *= 4.0 / np.linalg.norm(start[:16])
        start[16] = nu0 + 0.1 * chain_rng.standard_normal()
        kept, rate, final_step = _run_chain(
            chain_rng,
            start,
            config,
            operators,
            data.counts,
            data.integration_time_s,
            data.accidental_rate_hz,
        )
        chain_params.append(kept)
        acceptance.append(rate)
        steps.append(final_step)

    fidelity_chains = []
    negativity_chains = []
    state_sum = np.zeros((4, 4), dtype=np.complex128)
    n_total = 0
    for kept in chain_params:
        f_trace = np.empty(len(kept))
        e_trace = np.empty(len(kept))
        for i, draw in enumerate(kept):
            matrix = _state_from_params(draw[:16])
            f_trace[i] = float(np.real(target_vec.conj() @ matrix @ target_vec))
            eig = np.linalg.eigvalsh(_partial_transpose_b(matrix))
            e_trace[i] = max(math.log2(float(np.abs(eig).sum())), 0.0)
            state_sum += matrix
        n_total += len(kept)
        fidelity_chains.append(f_trace)
        negativity_chains.append(e_trace)

    r_hat = {
        "fidelity": _split_r_hat(fidelity_chains),
        "log_negativity": _split_r_hat(negativity_chains),
    }
    for statistic, value in r_hat.items():
        if value > rhat_threshold:
            raise ConvergenceError(
                f"split-chain diagnostic for {statistic} is {value:.3f}, "
                f"above the {rhat_threshold:.2f} threshold; "
                "increase draws or adjust step_scale"
            )

    f_all = np.concatenate(fidelity_chains)
    e_all = np.concatenate(negativity_chains)
    mean_state = DensityMatrix(state_sum / n_total)
    return PosteriorSummary(
        mean_state=mean_state,
        samples=np.vstack(chain_params),
        fidelity=MeanStd(float(f_all.mean()), float(f_all.std(ddof=1))),
        log_negativity=MeanStd(float(e_all.mean()), float(e_all.std(ddof=1))),
        fidelity_trace=f_all,
        log_negativity_trace=e_all,
        r_hat=r_hat,
        acceptance_rate=float(np.mean(acceptance)),
        final_step_scale=float(np.mean(steps)),
        warnings=tuple(warnings),
    )


def state_to_json(rho: DensityMatrix) -> dict:
    """4x4 matrix as separate real/imaginary grids with basis labels."""
    return {
        "basis": list(BASIS_LABELS),
        "re": np.round(rho.matrix.real, 12).tolist(),
        "im": np.round(rho.matrix.imag, 12).tolist(),
    }


def dataset_to_json(data: TomographyDataset) -> dict:
    return {
        "settings": [
            [setting_label(a), setting_label(b)] for a, b in data.settings
        ],
        "counts": data.counts.tolist(),
        "integration_time_s": data.integration_time_s,
        "accidental_rate_hz": data.accidental_rate_hz,
    }


def summary_to_json(summary: PosteriorSummary, coincidence_rate_hz: float | None = None) -> dict:
    document = {
        "mean_state": state_to_json(summary.mean_state),
        "fidelity": {"mean": summary.fidelity.mean, "std": summary.fidelity.std},
        "log_negativity": {
            "mean": summary.log_negativity.mean,
            "std": summary.log_negativity.std,
        },
        "r_hat": summary.r_hat,
        "acceptance_rate": summary.acceptance_rate,
        "n_samples": int(summary.samples.shape[0]),
        "warnings": list(summary.warnings),
    }
    if coincidence_rate_hz is not None:
        document["coincidence_rate_hz"] = coincidence_rate_hz
        document["entanglement_rate_ebits_per_s"] = entanglement_rate(
            summary.log_negativity.mean, coincidence_rate_hz
        )
    return document
