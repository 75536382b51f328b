"""Core model quantities: data containers, transition matrix, mean process,
and the conditional response density.

The four responses are, in order: hemoglobin (g/dL), heart rate (bpm), mean
arterial pressure (mmHg), lactate (mmol/L), on a 15-minute grid. Latent states
are 1-based: 1 stable, 2 hemorrhage, 3 recovery from hemorrhage, 4
non-bleeding event, 5 recovery from non-bleeding event.

Functions here are straight numpy and favor readability; rsmicu.kernels holds
the loop-heavy twins used inside the samplers, which the test suite checks
against these.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diagram import ADJ_5, EDGES_5

N_RESPONSES = 4
N_STATES = 5
RESPONSE_NAMES = ("hgb", "hr", "map", "lactate")
# Observed values outside these bounds are treated as recording errors and
# masked out at data-cleaning time. Lactate has no upper bound enforced.
PLAUSIBLE_LO = np.array([0.0, 20.0, 25.0, 0.0])
PLAUSIBLE_HI = np.array([20.0, 200.0, 150.0, np.inf])

LOGIT_CLAMP = 30.0


class InvalidDataError(ValueError):
    """Raised when a container fails its validation contract."""


# ---------------------------------------------------------------------------
# labels

LABEL_UNLABELED = "unlabeled"
LABEL_RBC_RULE = "rbc_rule"
LABEL_BLEED = "annotated_bleed"
LABEL_NO_BLEED = "annotated_no_bleed"


@dataclass(frozen=True)
class Label:
    """Semi-supervision tag for one encounter.

    kind is one of the LABEL_* constants. For rbc_rule, windows holds
    (start, end, last_order_index) triples of 0-based grid indices: each
    window spans <= 48 grid steps, contains >= 3 ordered RBC units, and
    last_order_index is the index of the final order inside the window.
    """
    kind: str = LABEL_UNLABELED
    windows: tuple[tuple[int, int, int], ...] = ()

    def validate(self, n: int) -> None:
        if self.kind not in (LABEL_UNLABELED, LABEL_RBC_RULE, LABEL_BLEED,
                             LABEL_NO_BLEED):
            raise InvalidDataError(f"unknown label kind {self.kind!r}")
        if self.kind != LABEL_RBC_RULE and self.windows:
            raise InvalidDataError("windows only valid for rbc_rule labels")
        if self.kind == LABEL_RBC_RULE:
            if not self.windows:
                raise InvalidDataError("rbc_rule label requires >= 1 window")
            for w in self.windows:
                s, e, last = w
                if not (0 <= s <= last <= e < n):
                    raise InvalidDataError(f"window {w} out of range for n={n}")
                if e - s + 1 > 48:
                    raise InvalidDataError(f"window {w} spans more than 48 steps")


@dataclass
class StateSequence:
    """Latent path b in {1..5}^n (or {1..3}^n for the 3-state study)."""
    b: np.ndarray
    n_states: int = N_STATES

    def validate(self, adj: np.ndarray | None = None) -> None:
        from .paths import valid_sequence
        from .diagram import adjacency
        if adj is None:
            adj = adjacency(self.n_states)
        b = np.asarray(self.b, dtype=np.int64)
        if b.ndim != 1 or b.size == 0:
            raise InvalidDataError("state sequence must be a nonempty vector")
        if b.min() < 1 or b.max() > self.n_states:
            raise InvalidDataError(
                f"states must lie in 1..{self.n_states}, got range "
                f"[{b.min()}, {b.max()}]")
        if not valid_sequence(b, adj):
            raise InvalidDataError("sequence uses a disallowed transition")


@dataclass
class EncounterData:
    """One ICU encounter on the 15-minute grid.

    y is (4, n) with np.nan at masked cells; missing is the (4, n) bool mask
    (True = missing). hr_doses / map_doses are (n_hr, n) and (n_map, n)
    nonnegative dose matrices. rbc_ordered[k] counts units ordered at step k;
    rbc_admin_cum[k] is the running count of units administered through step
    k (nondecreasing, administration trails orders).
    """
    encounter_id: str
    y: np.ndarray
    missing: np.ndarray
    hr_doses: np.ndarray
    map_doses: np.ndarray
    rbc_ordered: np.ndarray
    rbc_admin_cum: np.ndarray
    label: Label = field(default_factory=Label)

    @property
    def n(self) -> int:
        return self.y.shape[1]

    def validate(self, clinical_bounds: bool = True) -> None:
        """Structural checks always; clinical_bounds additionally enforces
        the cleaning-rule plausibility ranges on observed cells. Synthetic
        trajectories routinely leave those ranges, so the simulators and
        the fitting path validate with clinical_bounds=False."""
        y, miss = self.y, self.missing
        if y.ndim != 2 or y.shape[0] != N_RESPONSES or y.shape[1] < 1:
            raise InvalidDataError(
                f"y must be (4, n), n >= 1; got {y.shape}")
        n = y.shape[1]
        if miss.shape != y.shape or miss.dtype != bool:
            raise InvalidDataError("missing mask must be (4, n) bool")
        if np.any(np.isnan(y[~miss])):
            raise InvalidDataError("NaN present at an unmasked cell")
        if clinical_bounds:
            obs = ~miss
            for j in range(N_RESPONSES):
                vals = y[j, obs[j]]
                bad = (vals < PLAUSIBLE_LO[j]) | (vals > PLAUSIBLE_HI[j])
                if np.any(bad):
                    raise InvalidDataError(
                        f"{RESPONSE_NAMES[j]} has {int(bad.sum())} observed "
                        f"values outside [{PLAUSIBLE_LO[j]}, "
                        f"{PLAUSIBLE_HI[j]}]")
        for name, d in (("hr_doses", self.hr_doses),
                        ("map_doses", self.map_doses)):
            if d.ndim != 2 or d.shape[1] != n:
                raise InvalidDataError(f"{name} must be (n_med, {n})")
            if np.any(d < 0) or np.any(~np.isfinite(d)):
                raise InvalidDataError(f"{name} must be finite and >= 0")
        if self.rbc_ordered.shape != (n,) or np.any(self.rbc_ordered < 0):
            raise InvalidDataError("rbc_ordered must be (n,) and >= 0")
        cum = self.rbc_admin_cum
        if cum.shape != (n,) or np.any(np.diff(cum) < 0) or np.any(cum < 0):
            raise InvalidDataError("rbc_admin_cum must be (n,) nondecreasing >= 0")
        self.label.validate(n)


@dataclass
class GlobalParams:
    """Population-level parameters shared across encounters.

    zeta: (12, 2) of (intercept, slope) per directed edge in diagram.EDGES_5
    order. pi_logit: 4 free initial-state logits for states 2..5 (state 1 is
    the reference). a_logit: (5, 4) per-state AR logits, a = sigmoid(a_logit).
    alpha_tilde: (4, 4) population slope means, rows = states 2..5, columns =
    responses. upsilon: (16, 16) covariance of vec(alpha_star). omega: med
    effects (hr meds then MAP meds). R, G: (4, 4) covariances.
    """
    zeta: np.ndarray
    pi_logit: np.ndarray
    a_logit: np.ndarray
    omega: np.ndarray
    beta: np.ndarray
    R: np.ndarray
    G: np.ndarray
    alpha_tilde: np.ndarray
    upsilon: np.ndarray

    def pi(self) -> np.ndarray:
        """Initial-state probabilities over states 1..5."""
        logits = np.concatenate(([0.0], np.clip(self.pi_logit, -LOGIT_CLAMP,
                                                LOGIT_CLAMP)))
        w = np.exp(logits - logits.max())
        return w / w.sum()

    def a_diag(self) -> np.ndarray:
        """(5, 4) AR coefficients in (0, 1), one row per state."""
        return 1.0 / (1.0 + np.exp(-self.a_logit))

    def copy(self) -> "GlobalParams":
        return GlobalParams(*(np.array(getattr(self, f), dtype=float)
                              for f in ("zeta", "pi_logit", "a_logit",
                                        "omega", "beta", "R", "G",
                                        "alpha_tilde", "upsilon")))


@dataclass
class SubjectState:
    """Per-encounter latent quantities carried by the chain."""
    b: np.ndarray              # (n,) int64, 1-based states
    alpha_star: np.ndarray     # (4, 4) rows = states 2..5, cols = responses
    gamma: np.ndarray          # (4,) subject-level intercept
    y_imputed: np.ndarray      # (4, n) fully populated response matrix


@dataclass
class PriorConfig:
    """Hyperparameters for every prior. Values are concrete numbers; see
    default() for the standard construction."""
    mu_zeta: np.ndarray        # (24,) interleaved (intercept, slope) pairs
    sigma_zeta_diag: np.ndarray
    pi_logit_var: float
    a_logit_var: float
    omega0: np.ndarray
    sigma_omega_diag: np.ndarray
    beta0: np.ndarray
    sigma_beta_diag: np.ndarray
    psi_R: np.ndarray
    nu_R: float
    psi_alpha: np.ndarray
    nu_alpha: float
    alpha_tilde0: np.ndarray   # (16,) stacked column-major
    sigma_alpha_diag: np.ndarray
    psi_G: np.ndarray
    nu_G: float

    OMEGA0_SIGNS = (
        -1, 1, 1, -1, -1, 1, 1, -1, 1, 1, -1, -1, 1, -1, 1, 1, -1, -1, -1,
        -1, 1, -1, 1, -1, 1,
        -1, -1, -1, -1, -1, 1, 1, -1, -1, -1, -1, -1, 1, 1, 1, -1, 1, -1,
        -1, -1, 1, -1, 1,
        -1, 1, -1, -1, -1, 1, 1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, 1,
        1, 1, -1, -1,
        -1, 1, -1, 1, -1, -1, -1, -1, 1, -1, -1, -1, -1, -1,
    )
    MU_ZETA = (
        -7.2405, 2.5, -6.2152, 1.0, -2.6473, -1.0, -6.1475, -1.0,
        -9.4459, -1.0, -7.2404, 2.5, -7.2151, 1.0, -7.1778, 2.5,
        -5.2151, 0.0, -9.4459, -1.0, -7.2404, 2.5, -5.2151, 0.0,
    )

    @classmethod
    def default(cls, n_total_obs: int, n_hr: int = 34,
                n_map: int = 50) -> "PriorConfig":
        """Standard priors. n_total_obs is the total observation count across
        training encounters and sets the inverse-Wishart weight on R."""
        n_med = n_hr + n_map
        if n_med != len(cls.OMEGA0_SIGNS):
            raise ValueError(
                f"omega prior center defined for 84 medications, got {n_med}")
        nu_R = 2.0 * float(n_total_obs)
        sigma_omega = np.full(n_med, 1.0 / 16.0)
        # three strongly-held medication effects (1-based 6, 42, 49)
        for idx in (6, 42, 49):
            sigma_omega[idx - 1] = 1.0 / 625.0
        nu_alpha = 80.0
        nu_G = 8.0
        return cls(
            mu_zeta=np.array(cls.MU_ZETA),
            sigma_zeta_diag=np.ones(24),
            pi_logit_var=100.0,
            a_logit_var=1.0,
            omega0=1.5 * np.array(cls.OMEGA0_SIGNS, dtype=float),
            sigma_omega_diag=sigma_omega,
            beta0=np.array([0.25, -2.0, 2.0, -0.25]),
            sigma_beta_diag=np.array([1.0, 16.0, 16.0, 16.0]),
            psi_R=nu_R * np.diag([0.5, 1.5, 1.5, 0.5]),
            nu_R=nu_R,
            psi_alpha=(nu_alpha - 16.0 - 1.0) * np.diag(
                [0.25, 0.25, 4.0, 4.0, 2.25, 2.25, 25.0, 25.0,
                 2.25, 2.25, 25.0, 25.0, 0.25, 0.25, 4.0, 4.0]),
            nu_alpha=nu_alpha,
            alpha_tilde0=np.array(
                [-1.0, 1.0, 0.0, 0.0, 7.0, -7.0, 0.0, 0.0,
                 -7.0, 7.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0]),
            sigma_alpha_diag=np.array(
                [0.25, 0.25, 4.0, 4.0, 4.0, 4.0, 64.0, 64.0,
                 4.0, 4.0, 64.0, 64.0, 0.25, 0.25, 4.0, 4.0]),
            psi_G=(nu_G - 4.0 - 1.0) * np.diag([8.0, 32.0, 32.0, 8.0]),
            nu_G=nu_G,
        )

    def validate(self) -> None:
        if self.nu_alpha <= 16 + 1:
            raise InvalidDataError("nu_alpha must exceed dim + 1 = 17")
        if self.nu_G <= 4 + 1:
            raise InvalidDataError("nu_G must exceed dim + 1 = 5")
        if self.nu_R <= 4 - 1:
            raise InvalidDataError("nu_R must exceed dim - 1 = 3")
        for name in ("sigma_zeta_diag", "sigma_omega_diag",
                     "sigma_beta_diag", "sigma_alpha_diag"):
            if np.any(getattr(self, name) <= 0):
                raise InvalidDataError(f"{name} must be positive")


# ---------------------------------------------------------------------------
# transition model

def transition_matrix(zeta: np.ndarray, z: float) -> np.ndarray:
    """Row-stochastic (5, 5) transition matrix at RBC-order count z.

    Each allowed edge carries logit zeta[j, 0] + zeta[j, 1] * z against the
    self-transition reference; disallowed entries are exactly zero. Logits are
    clamped to +-30 before exponentiation and rows are normalized with a
    max-shift for stability.
    """
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape != (12, 2):
        raise ValueError(f"zeta must be (12, 2), got {zeta.shape}")
    q = np.clip(zeta[:, 0] + zeta[:, 1] * z, -LOGIT_CLAMP, LOGIT_CLAMP)
    P = np.zeros((N_STATES, N_STATES))
    logits = np.full((N_STATES, N_STATES), -np.inf)
    logits[np.arange(N_STATES), np.arange(N_STATES)] = 0.0
    for j, (a, b) in enumerate(EDGES_5):
        logits[a - 1, b - 1] = q[j]
    for r in range(N_STATES):
        row = logits[r]
        allowed = np.isfinite(row)
        w = np.exp(row[allowed] - row[allowed].max())
        P[r, allowed] = w / w.sum()
    return P


def stationary_covariance(a: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Solve Gamma = A Gamma A^T + R for diagonal A = diag(a), elementwise
    Gamma_jl = R_jl / (1 - a_j a_l). Requires every a_j in [0, 1); a zero
    row collapses to Gamma = R."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 0) or np.any(a >= 1):
        raise ValueError("AR coefficients must lie in [0, 1)")
    return R / (1.0 - np.outer(a, a))


# ---------------------------------------------------------------------------
# design matrices and mean process (reference implementations)

def occupancy_counts(b: np.ndarray, k: int, n_states: int = N_STATES,
                     count_from: int = 2) -> np.ndarray:
    """Occupancy of states 2..n_states over positions count_from..k (1-based,
    inclusive). Returns a length (n_states - 1) vector."""
    b = np.asarray(b, dtype=np.int64)
    seg = b[count_from - 1:k]
    return np.array([(seg == s).sum() for s in range(2, n_states + 1)],
                    dtype=float)


def design_alpha(b: np.ndarray, k: int) -> np.ndarray:
    """(4, 16) slope design at time k: I_4 kron occupancy row (states 2..5
    over j = 2..k). Zero for k = 1."""
    c = occupancy_counts(b, k)
    return np.kron(np.eye(N_RESPONSES), c.reshape(1, -1))


def design_omega(hr_doses: np.ndarray, map_doses: np.ndarray,
                 k: int) -> np.ndarray:
    """(4, n_hr + n_map) medication design at time k: heart-rate meds act on
    row 2, MAP meds on row 3, rows 1 and 4 are zero."""
    n_hr, n_map = hr_doses.shape[0], map_doses.shape[0]
    D = np.zeros((N_RESPONSES, n_hr + n_map))
    D[1, :n_hr] = hr_doses[:, k - 1]
    D[2, n_hr:] = map_doses[:, k - 1]
    return D


def design_x(rbc_admin_cum: np.ndarray, k: int) -> np.ndarray:
    """(4, 4) cumulative-RBC design at time k: x_k * I_4."""
    return float(rbc_admin_cum[k - 1]) * np.eye(N_RESPONSES)


def mean_process(subject: SubjectState, enc: EncounterData,
                 params: GlobalParams, k: int) -> np.ndarray:
    """nu_k: subject intercept plus state-slope, medication, and RBC terms."""
    nu = subject.gamma.copy()
    if k > 1:
        nu += design_alpha(subject.b, k) @ subject.alpha_star.reshape(-1,
                                                                      order="F")
    nu += design_omega(enc.hr_doses, enc.map_doses, k) @ params.omega
    nu += design_x(enc.rbc_admin_cum, k) @ params.beta
    return nu


def mvn_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """Multivariate normal log density via Cholesky."""
    from scipy.linalg import solve_triangular
    L = np.linalg.cholesky(cov)
    u = solve_triangular(L, x - mean, lower=True)
    return float(-0.5 * len(x) * np.log(2.0 * np.pi)
                 - np.log(np.diag(L)).sum() - 0.5 * (u @ u))


def conditional_log_density_at(subject: SubjectState, enc: EncounterData,
                               params: GlobalParams, k: int) -> float:
    """log f(y_k | history) for 1-based k: the time-1 term uses the
    stationary covariance of the initial state, later terms the AR form."""
    y = subject.y_imputed
    A = params.a_diag()
    nu_k = mean_process(subject, enc, params, k)
    if k == 1:
        gam = stationary_covariance(A[subject.b[0] - 1], params.R)
        return mvn_logpdf(y[:, 0], nu_k, gam)
    a = A[subject.b[k - 1] - 1]
    nu_prev = mean_process(subject, enc, params, k - 1)
    mean = nu_k + a * (y[:, k - 2] - nu_prev)
    return mvn_logpdf(y[:, k - 1], mean, params.R)


def conditional_log_density(subject: SubjectState, enc: EncounterData,
                            params: GlobalParams) -> float:
    """Joint log density of the full response matrix given states and
    parameters: the sum of the per-time conditional terms."""
    return sum(conditional_log_density_at(subject, enc, params, k)
               for k in range(1, enc.n + 1))
