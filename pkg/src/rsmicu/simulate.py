"""Synthetic encounter generation for the five-state and three-state models.

Two generating mechanisms share one entry point, simulate_dataset:

* mode "full5": the clinical five-state model with AR(1) responses,
  medication and transfusion covariates, per-encounter random slopes, and
  monitor-style missingness. Ground truth defaults to the packaged
  fixtures/full5_truth.json parameter set.
* mode "simple3": a three-state toy with iid Gaussian responses around
  occupancy-count means. Values are not on clinical scales.

Either mechanism can wander outside the clinical cleaning ranges (the
occupancy staircase is unbounded), so simulated encounters validate
structure only; the plausibility bounds apply to cleaned clinical data.

Each encounter draws m pre-admission transitions starting from state 1
with the transfusion covariate pinned at zero, then the observed segment
with the covariate taken from the order stream at the destination step.
Pre-admission occupancy (the first m+1 states, which include the first
observed state) sets the subject-level intercept offsets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .model import (
    EncounterData,
    GlobalParams,
    Label,
    LABEL_RBC_RULE,
    stationary_covariance,
    transition_matrix,
)
from .sampler import occupancy_matrix

N_HR_DEFAULT = 34
N_MAP_DEFAULT = 50
RBC_ADMIN_LAG = 2          # grid steps from order to administration
RULE_WINDOW = 48           # 12 h of 15-minute steps
RULE_MIN_UNITS = 3
_SIGN_CAP = 1000


def load_truth(mode: str) -> dict:
    """Packaged ground-truth parameter set for a simulation mode."""
    name = {"full5": "full5_truth.json", "simple3": "simple3_truth.json"}[mode]
    ref = resources.files("rsmicu.fixtures").joinpath(name)
    return json.loads(ref.read_text())


@dataclass
class SimConfig:
    """Knobs for simulate_dataset. Fields not used by a mode are ignored."""

    mode: str = "full5"
    n_encounters: int = 100
    seed: int = 0
    n_min: int = 96                 # full5 length law: n ~ U{n_min..n_max}
    n_max: int = 192
    m_max: int = 50                 # pre-admission steps ~ U{0..m_max}
    n_poisson_mean: float = 100.0   # simple3 length law: n ~ Poisson(mean)
    missing_rates: tuple[float, float, float, float] = (0.90, 0.02, 0.02, 0.90)
    covariates: str = "synthetic"   # "synthetic" | "none" | "template"
    truth: dict | None = None       # overrides the packaged fixture
    template: list[EncounterData] | None = None
    id_prefix: str = "enc"

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown simulation config keys: {sorted(extra)}")
        cfg = cls(**d)
        if "missing_rates" in d:
            cfg.missing_rates = tuple(float(r) for r in d["missing_rates"])
        return cfg

    def validate(self) -> None:
        if self.mode not in ("full5", "simple3"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.covariates not in ("synthetic", "none", "template"):
            raise ValueError(f"unknown covariate law {self.covariates!r}")
        if self.covariates == "template" and not self.template:
            raise ValueError("template covariate law needs template encounters")
        if self.n_encounters < 1:
            raise ValueError("n_encounters must be >= 1")
        if not (2 <= self.n_min <= self.n_max):
            raise ValueError("need 2 <= n_min <= n_max")
        if self.m_max < 0:
            raise ValueError("m_max must be >= 0")
        if len(self.missing_rates) != 4 or any(
                not 0.0 <= r < 1.0 for r in self.missing_rates):
            raise ValueError("missing_rates must be four values in [0, 1)")


@dataclass
class SimResult:
    encounters: list[EncounterData]
    truth: dict                     # JSON-ready sidecar


def sample_chain(rng: np.random.Generator, pstack: np.ndarray,
                 zidx: np.ndarray, start: int = 0) -> np.ndarray:
    """Walk a Markov chain for len(zidx) transitions from 0-based `start`.

    pstack is (V, S, S) of transition matrices; transition t uses row
    pstack[zidx[t], state]. Returns the length len(zidx)+1 state path.
    """
    cum = np.cumsum(pstack, axis=2)
    out = np.empty(zidx.size + 1, dtype=np.int64)
    out[0] = start
    u = rng.random(zidx.size)
    cur = start
    for t in range(zidx.size):
        cur = int(np.searchsorted(cum[zidx[t], cur], u[t], side="right"))
        out[t + 1] = cur
    return out


def truth_global_params(truth: dict) -> GlobalParams:
    """Five-state GlobalParams holding the generative truth.

    The initial-state distribution and G are not generative quantities:
    encounters start from state 1 before admission, and the intercept
    spread comes from baseline_var. pi is set uniform and G to
    diag(baseline_var) so the result can seed or freeze a chain.
    """
    a = np.clip(np.asarray(truth["a_diag"], dtype=float), 1e-12, 1 - 1e-12)
    return GlobalParams(
        zeta=np.asarray(truth["zeta"], dtype=float),
        pi_logit=np.zeros(4),
        a_logit=np.log(a / (1.0 - a)),
        omega=np.asarray(truth["omega"], dtype=float),
        beta=np.asarray(truth["beta"], dtype=float),
        R=np.asarray(truth["R"], dtype=float),
        G=np.diag(np.asarray(truth["baseline_var"], dtype=float)),
        alpha_tilde=np.asarray(truth["alpha_tilde"], dtype=float),
        upsilon=np.diag(np.asarray(truth["upsilon_diag"], dtype=float)),
    )


# ---------------------------------------------------------------------------
# covariate streams

def _synthetic_covariates(rng: np.random.Generator, n: int,
                          n_hr: int, n_map: int):
    """Order/administration and infusion streams on the 15-minute grid.

    Roughly a quarter of encounters get a transfusion episode: 2..5 single
    units ordered 2..8 steps apart. A sparse background order process runs
    either way. Each ordered unit is administered RBC_ADMIN_LAG steps
    later. A Poisson(3) number of meds run in 1..3 constant-rate segments.
    """
    ordered = np.zeros(n, dtype=np.int64)
    if rng.random() < 0.25:
        t = int(rng.integers(0, max(1, n - 16)))
        for _ in range(int(rng.integers(2, 6))):
            if t >= n:
                break
            ordered[t] += 1
            t += int(rng.integers(2, 9))
    bg = rng.random(n) < 0.003
    ordered[bg] += 1

    admin = np.zeros(n, dtype=np.int64)
    lag = RBC_ADMIN_LAG
    if n > lag:
        admin[lag:] = ordered[:n - lag]
    admin_cum = np.cumsum(admin)

    hr_doses = np.zeros((n_hr, n))
    map_doses = np.zeros((n_map, n))
    total = n_hr + n_map
    for med in rng.choice(total, size=min(int(rng.poisson(3.0)), total),
                          replace=False):
        tgt = hr_doses if med < n_hr else map_doses
        row = med if med < n_hr else med - n_hr
        for _ in range(int(rng.integers(1, 4))):
            s = int(rng.integers(0, n))
            d = int(rng.integers(8, 49))
            tgt[row, s:min(n, s + d)] += rng.uniform(0.5, 2.0)
    return ordered, admin_cum, hr_doses, map_doses


def rbc_rule_windows(ordered: np.ndarray, window: int = RULE_WINDOW,
                     min_units: int = RULE_MIN_UNITS):
    """Transfusion-burst windows: >= min_units ordered within `window` steps.

    A window fires at each order step whose trailing `window`-step span
    holds at least min_units units; the triple is (first contributing
    order index, firing index, firing index). Windows contained in an
    already-kept one are dropped.
    """
    idx = np.flatnonzero(ordered > 0)
    wins: list[tuple[int, int, int]] = []
    for j in idx:
        lo = max(0, int(j) - window + 1)
        contrib = idx[(idx >= lo) & (idx <= j)]
        if ordered[contrib].sum() >= min_units:
            w = (int(contrib[0]), int(j), int(j))
            if not any(s <= w[0] and w[1] <= e for s, e, _ in wins):
                wins.append(w)
    return tuple(wins)


# ---------------------------------------------------------------------------
# full5

def _draw_alpha_star(rng: np.random.Generator, alpha_tilde: np.ndarray,
                     upsilon_diag: np.ndarray) -> np.ndarray:
    """Subject slopes ~ N(vec(alpha_tilde), diag(upsilon)), sign-constrained.

    Row 1 (hemorrhage) must match (-, +, -, +) on (hgb, hr, MAP, lactate)
    and row 2 (recovery) the reverse. Redraws until both hold.
    """
    mean = alpha_tilde.reshape(16, order="F")
    sd = np.sqrt(upsilon_diag)
    for _ in range(_SIGN_CAP):
        mat = (mean + sd * rng.standard_normal(16)).reshape((4, 4), order="F")
        if (np.all(mat[0] * np.array([-1, 1, -1, 1]) > 0)
                and np.all(mat[1] * np.array([-1, 1, -1, 1]) < 0)):
            return mat
    raise RuntimeError("sign-constrained slope draw failed to accept")


def _simulate_full5(cfg: SimConfig, truth: dict) -> SimResult:
    zeta = np.asarray(truth["zeta"], dtype=float)
    a_diag = np.asarray(truth["a_diag"], dtype=float)
    R = np.asarray(truth["R"], dtype=float)
    alpha_tilde = np.asarray(truth["alpha_tilde"], dtype=float)
    ups_diag = np.asarray(truth["upsilon_diag"], dtype=float)
    omega = np.asarray(truth["omega"], dtype=float)
    beta = np.asarray(truth["beta"], dtype=float)
    base_mean = np.asarray(truth["baseline_mean"], dtype=float)
    base_sd = np.sqrt(np.asarray(truth["baseline_var"], dtype=float))
    n_hr = int(truth.get("n_hr", N_HR_DEFAULT))
    n_map = int(truth.get("n_map", N_MAP_DEFAULT))
    if omega.size != n_hr + n_map:
        raise ValueError("omega length does not match med counts")

    R_chol = np.linalg.cholesky(R)
    gam_chol = np.stack([
        np.linalg.cholesky(stationary_covariance(a_diag[s], R))
        for s in range(5)])
    rates = np.asarray(cfg.missing_rates, dtype=float)

    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_encounters)
    encounters: list[EncounterData] = []
    enc_truth: list[dict] = []
    for i in range(cfg.n_encounters):
        rng = np.random.default_rng(children[i])
        if cfg.covariates == "template":
            src = cfg.template[i % len(cfg.template)]
            n = src.n
            ordered = src.rbc_ordered.astype(np.int64).copy()
            admin_cum = src.rbc_admin_cum.astype(float).copy()
            hr_doses = src.hr_doses.copy()
            map_doses = src.map_doses.copy()
        else:
            n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
            if cfg.covariates == "synthetic":
                ordered, admin_cum, hr_doses, map_doses = \
                    _synthetic_covariates(rng, n, n_hr, n_map)
            else:
                ordered = np.zeros(n, dtype=np.int64)
                admin_cum = np.zeros(n)
                hr_doses = np.zeros((n_hr, n))
                map_doses = np.zeros((n_map, n))

        m = int(rng.integers(0, cfg.m_max + 1))
        zvals = np.unique(np.concatenate(([0.0], ordered.astype(float))))
        pstack = np.stack([transition_matrix(zeta, z) for z in zvals])
        z0 = int(np.searchsorted(zvals, 0.0))
        zidx = np.concatenate([
            np.full(m, z0, dtype=np.int64),
            np.searchsorted(zvals, ordered[1:].astype(float)),
        ])
        b_long = sample_chain(rng, pstack, zidx)        # 0-based, len m+n
        b0 = b_long[m:]
        t_counts = np.array([(b_long[:m + 1] == s).sum() for s in (1, 2, 3, 4)],
                            dtype=np.int64)

        alpha_star = _draw_alpha_star(rng, alpha_tilde, ups_diag)
        baseline = base_mean + base_sd * rng.standard_normal(4)
        gamma = baseline + t_counts @ alpha_star

        exog = np.zeros((4, n))
        exog[1] += omega[:n_hr] @ hr_doses
        exog[2] += omega[n_hr:] @ map_doses
        exog += np.outer(beta, admin_cum)
        mean = gamma[:, None] + exog + alpha_star.T @ occupancy_matrix(b0, 5, 1)

        y = np.empty((4, n))
        y[:, 0] = mean[:, 0] + gam_chol[b0[0]] @ rng.standard_normal(4)
        eps = R_chol @ rng.standard_normal((4, max(0, n - 1)))
        aseq = a_diag[b0]
        for k in range(1, n):
            y[:, k] = (mean[:, k]
                       + aseq[k] * (y[:, k - 1] - mean[:, k - 1])
                       + eps[:, k - 1])

        miss = rng.random((4, n)) < rates[:, None]
        y_obs = y.copy()
        y_obs[miss] = np.nan

        wins = rbc_rule_windows(ordered)
        label = Label(LABEL_RBC_RULE, wins) if wins else Label()
        enc = EncounterData(
            encounter_id=f"{cfg.id_prefix}-{i:04d}",
            y=y_obs, missing=miss,
            hr_doses=hr_doses, map_doses=map_doses,
            rbc_ordered=ordered.astype(float),
            rbc_admin_cum=np.asarray(admin_cum, dtype=float),
            label=label)
        enc.validate(clinical_bounds=False)
        encounters.append(enc)
        enc_truth.append({
            "encounter_id": enc.encounter_id,
            "m": m,
            "b": (b0 + 1).tolist(),
            "t_counts": t_counts.tolist(),
            "gamma": gamma.tolist(),
            "alpha_star": alpha_star.tolist(),
            "y_full": np.round(y, 10).tolist(),
        })

    sidecar = {
        "mode": "full5",
        "seed": cfg.seed,
        "params": {k: truth[k] for k in (
            "zeta", "a_diag", "R", "alpha_tilde", "upsilon_diag", "omega",
            "beta", "baseline_mean", "baseline_var")},
        "encounters": enc_truth,
    }
    return SimResult(encounters, sidecar)


# ---------------------------------------------------------------------------
# simple3

def _simulate_simple3(cfg: SimConfig, truth: dict) -> SimResult:
    P = np.asarray(truth["P"], dtype=float)
    alpha = np.asarray(truth["alpha"], dtype=float)      # (4, 3), cols = states
    r_sd = np.sqrt(np.asarray(truth["R_diag"], dtype=float))
    m_max = int(truth.get("m_max", cfg.m_max))
    lam = float(truth.get("n_poisson_mean", cfg.n_poisson_mean))

    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_encounters)
    encounters: list[EncounterData] = []
    enc_truth: list[dict] = []
    for i in range(cfg.n_encounters):
        rng = np.random.default_rng(children[i])
        m = int(rng.integers(0, m_max + 1))
        n = max(2, int(rng.poisson(lam)))
        zidx = np.zeros(m + n - 1, dtype=np.int64)
        b_long = sample_chain(rng, P[None], zidx)
        b0 = b_long[m:]
        t2 = int((b_long[:m + 1] == 1).sum())
        t3 = int((b_long[:m + 1] == 2).sum())

        g = alpha[:, 0] + t2 * alpha[:, 1] + t3 * alpha[:, 2]
        mean = g[:, None] + alpha[:, 1:] @ occupancy_matrix(b0, 3, 1)
        y = mean + r_sd[:, None] * rng.standard_normal((4, n))

        enc = EncounterData(
            encounter_id=f"{cfg.id_prefix}-{i:04d}",
            y=y, missing=np.zeros((4, n), dtype=bool),
            hr_doses=np.zeros((0, n)), map_doses=np.zeros((0, n)),
            rbc_ordered=np.zeros(n), rbc_admin_cum=np.zeros(n))
        enc.validate(clinical_bounds=False)
        encounters.append(enc)
        enc_truth.append({
            "encounter_id": enc.encounter_id,
            "m": m,
            "b": (b0 + 1).tolist(),
            "t_counts": [t2, t3],
        })

    sidecar = {
        "mode": "simple3",
        "seed": cfg.seed,
        "params": {k: truth[k] for k in ("P", "alpha", "R_diag")},
        "encounters": enc_truth,
    }
    return SimResult(encounters, sidecar)


def simulate_dataset(cfg: SimConfig) -> SimResult:
    """Generate one dataset plus its ground-truth sidecar."""
    cfg.validate()
    truth = cfg.truth if cfg.truth is not None else load_truth(cfg.mode)
    if cfg.mode == "full5":
        return _simulate_full5(cfg, truth)
    return _simulate_simple3(cfg, truth)
