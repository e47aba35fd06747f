"""End-to-end fitting pipeline and fit-artifact persistence.

The pipeline averages the (transformed) fleet series, pre-fits a single
spline to that average to obtain plug-in archetype means, then samples the
full hierarchical posterior and attaches convergence diagnostics.  A fit
artifact bundles everything needed downstream: input data, transform, knot
vector, plug-in hyperparameters, constrained posterior draws, and
diagnostics, all serializable to a plain directory (meta.json + CSV files).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import BasisMatrix, KnotVector, basis_matrix, make_uniform_knots
from .model import FleetData, HierarchicalModel, Hyperparameters
from .sampler import (
    Diagnostics,
    PosteriorDraws,
    SamplerConfig,
    compute_diagnostics,
    sample,
)
from .transform import PowerTransform, fit_transform

_PREFIT_SEED_OFFSET = 10_000_019
CSV_HEADER = ["ship_id", "engine_type", "age", "failure_rate"]


# ----------------------------------------------------------------------
# data file interface


def load_fleet_csv(path) -> FleetData:
    """Read the ``ship_id,engine_type,age,failure_rate`` panel."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"missing CSV columns: {sorted(missing)}")
        for row in reader:
            age = int(row["age"])
            rate = float(row["failure_rate"])
            if age < 1:
                raise ValueError(f"age must be positive, got {age}")
            if rate < 0:
                raise ValueError(f"failure_rate must be non-negative, got {rate}")
            rows.append((row["ship_id"], row["engine_type"], age, rate))
    if not rows:
        raise ValueError(f"no data rows in {path}")

    # dense indices in first-appearance order keep loading deterministic
    ship_labels, type_labels = [], []
    ship_of, type_of = {}, {}
    ship_to_type = []
    for ship_id, engine_type, _, _ in rows:
        if engine_type not in type_of:
            type_of[engine_type] = len(type_labels)
            type_labels.append(engine_type)
        e = type_of[engine_type]
        if ship_id not in ship_of:
            ship_of[ship_id] = len(ship_labels)
            ship_labels.append(ship_id)
            ship_to_type.append(e)
        elif ship_to_type[ship_of[ship_id]] != e:
            raise ValueError(f"ship {ship_id!r} mapped to multiple engine types")

    t_max = max(r[2] for r in rows)
    return FleetData(
        n_ages=t_max,
        age=[r[2] for r in rows],
        ship=[ship_of[r[0]] for r in rows],
        ship_to_type=ship_to_type,
        y=[r[3] for r in rows],
        ship_labels=tuple(ship_labels),
        type_labels=tuple(type_labels),
    )


def write_fleet_csv(data: FleetData, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for n in range(data.n_obs):
            writer.writerow([
                data.ship_labels[data.ship[n]],
                data.type_labels[data.ship_to_type[data.ship[n]]],
                int(data.age[n]),
                format(float(data.y[n]), ".17g"),
            ])


def fingerprint(data: FleetData) -> str:
    """Order-sensitive SHA-256 over the canonical row serialization."""
    h = hashlib.sha256()
    for n in range(data.n_obs):
        h.update(data.ship_labels[data.ship[n]].encode())
        h.update(data.type_labels[data.ship_to_type[data.ship[n]]].encode())
        h.update(str(int(data.age[n])).encode())
        h.update(format(float(data.y[n]), ".17g").encode())
        h.update(b"\n")
    return h.hexdigest()


# ----------------------------------------------------------------------
# averaging and prefit


def average_series(data: FleetData) -> tuple[np.ndarray, np.ndarray]:
    """Per-age mean response and contributing counts; missing ages are NaN."""
    counts = np.bincount(data.age - 1, minlength=data.n_ages)
    sums = np.bincount(data.age - 1, weights=data.y, minlength=data.n_ages)
    with np.errstate(invalid="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return means, counts


@dataclass(frozen=True)
class PrefitResult:
    """Plug-in archetype means obtained from the fleet-averaged series."""

    alpha_bar_0: float
    w_bar_0: np.ndarray
    intercept: float          # OLS intercept anchoring the prior mean
    averaged: np.ndarray      # length-T series, NaN at missing ages
    counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w_bar_0",
                           np.asarray(self.w_bar_0, dtype=float))
        object.__setattr__(self, "averaged",
                           np.asarray(self.averaged, dtype=float))
        object.__setattr__(self, "counts",
                           np.asarray(self.counts, dtype=np.int64))


def _prefit_target(y, B, intercept_prior_mean):
    """Single-curve Bayesian spline: alpha ~ N(I, 1), w ~ N(0, 1), sigma ~ Exp(1)."""
    M, K = B.shape

    def target(vec):
        alpha, w, u = vec[0], vec[1:1 + K], vec[-1]
        if abs(u) > 300.0:
            return -np.inf, np.full(K + 2, np.nan)
        sig = math.exp(u)
        r = y - (alpha + B @ w)
        rss = float(r @ r)
        lp = (-M * u - 0.5 * rss / sig**2 - 0.5 * M * math.log(2 * math.pi)
              - 0.5 * (alpha - intercept_prior_mean) ** 2
              - 0.5 * float(w @ w) - sig + u)
        grad = np.empty(K + 2)
        grad[0] = float(np.sum(r)) / sig**2 - (alpha - intercept_prior_mean)
        grad[1:1 + K] = (B.T @ r) / sig**2 - w
        grad[-1] = -M + rss / sig**2 - sig + 1.0
        return lp, grad

    return target


def prefit(averaged: np.ndarray, counts: np.ndarray, bm: BasisMatrix,
           sampler_cfg: SamplerConfig | None = None) -> PrefitResult:
    """Posterior-mean intercept and weights of a spline fit to the average.

    Ages without observations are skipped.  Requires at least K+2 observed
    ages so the curve is identified beyond the prior.
    """
    averaged = np.asarray(averaged, dtype=float)
    counts = np.asarray(counts)
    mask = (counts > 0) & np.isfinite(averaged)
    K = bm.n_basis
    if int(mask.sum()) < K + 2:
        raise ValueError(
            f"prefit needs at least {K + 2} observed ages, got {int(mask.sum())}")
    y = averaged[mask]
    ages = bm.ages[mask]
    B = bm.values[mask]
    slope, intercept = np.polyfit(ages, y, 1)

    cfg = sampler_cfg or SamplerConfig(n_chains=2, n_warmup=500,
                                       n_samples=500, seed=0)
    target = _prefit_target(y, B, intercept)
    post = sample(target, K + 2, cfg)
    flat = post.flat()
    return PrefitResult(
        alpha_bar_0=float(flat[:, 0].mean()),
        w_bar_0=flat[:, 1:1 + K].mean(axis=0),
        intercept=float(intercept),
        averaged=averaged,
        counts=counts,
    )


# ----------------------------------------------------------------------
# full fit


@dataclass
class FitConfig:
    n_interior: int = 6
    degree: int = 3
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    prefit_warmup: int = 500
    prefit_samples: int = 500
    # the averaged-series fit has a flat intercept/weights direction, so its
    # chains need longer trajectories than the main fit
    prefit_max_leapfrog: int = 128
    # non-centered coordinates sidestep the scale-parameter funnels that stall
    # the centered form at fleet scale; the centered form stays available
    centered: bool = False

    def prefit_sampler(self) -> SamplerConfig:
        return SamplerConfig(n_chains=2, n_warmup=self.prefit_warmup,
                             n_samples=self.prefit_samples,
                             max_leapfrog_steps=self.prefit_max_leapfrog,
                             seed=self.sampler.seed + _PREFIT_SEED_OFFSET)

    def to_dict(self) -> dict:
        return {
            "n_interior": self.n_interior,
            "degree": self.degree,
            "centered": self.centered,
            "prefit_warmup": self.prefit_warmup,
            "prefit_samples": self.prefit_samples,
            "prefit_max_leapfrog": self.prefit_max_leapfrog,
            "n_chains": self.sampler.n_chains,
            "n_warmup": self.sampler.n_warmup,
            "n_samples": self.sampler.n_samples,
            "target_accept": self.sampler.target_accept,
            "max_leapfrog_steps": self.sampler.max_leapfrog_steps,
            "seed": self.sampler.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        sampler = SamplerConfig(
            n_chains=d.get("n_chains", 4),
            n_warmup=d.get("n_warmup", 1000),
            n_samples=d.get("n_samples", 1000),
            target_accept=d.get("target_accept", 0.8),
            max_leapfrog_steps=d.get("max_leapfrog_steps", 64),
            seed=d.get("seed", 0),
        )
        return cls(n_interior=d.get("n_interior", 6),
                   degree=d.get("degree", 3), sampler=sampler,
                   prefit_warmup=d.get("prefit_warmup", 500),
                   prefit_samples=d.get("prefit_samples", 500),
                   prefit_max_leapfrog=d.get("prefit_max_leapfrog", 128),
                   centered=d.get("centered", False))


@dataclass
class FitArtifact:
    """Everything produced by one fit, on the constrained/centered scale."""

    data: FleetData                    # raw input panel
    transform: PowerTransform
    kv: KnotVector
    bm: BasisMatrix
    prefit: PrefitResult
    hyper: Hyperparameters
    draws: np.ndarray                  # (chains, samples, dim) constrained
    energies: np.ndarray
    divergent: np.ndarray
    param_names: list[str]
    diagnostics: Diagnostics
    config: dict
    seed: int
    fingerprint: str
    converged: bool
    warnings: list[str] = field(default_factory=list)

    # layout helpers -----------------------------------------------------
    @property
    def S(self) -> int:
        return self.data.n_ships

    @property
    def E(self) -> int:
        return self.data.n_types

    @property
    def K(self) -> int:
        return self.bm.n_basis

    @property
    def T(self) -> int:
        return self.data.n_ages

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0] * self.draws.shape[1]

    def flat_draws(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[2])

    def alpha_draws(self) -> np.ndarray:
        return self.flat_draws()[:, :self.S]

    def w_draws(self) -> np.ndarray:
        S, K = self.S, self.K
        return self.flat_draws()[:, S:S + S * K].reshape(-1, S, K)

    def alpha_bar_draws(self) -> np.ndarray:
        base = self.S * (self.K + 1)
        return self.flat_draws()[:, base:base + self.E]

    def w_bar_draws(self) -> np.ndarray:
        base = self.S * (self.K + 1) + self.E
        return self.flat_draws()[:, base:base + self.E * self.K].reshape(
            -1, self.E, self.K)

    def sigma_draws(self, name: str) -> np.ndarray:
        names = ("sigma_alpha", "sigma_w", "sigma_alpha_bar",
                 "sigma_w_bar", "sigma_y")
        return self.flat_draws()[:, self.draws.shape[2] - 5 + names.index(name)]

    def transformed_data(self) -> FleetData:
        return self.data.with_y(self.transform.transform(self.data.y))


def build_basis(n_ages: int, n_interior: int, degree: int) -> tuple[KnotVector, BasisMatrix]:
    kv = make_uniform_knots(1.0, float(n_ages), n_interior, degree)
    return kv, basis_matrix(kv, np.arange(1, n_ages + 1, dtype=float))


def fit(data: FleetData, config: FitConfig | None = None) -> FitArtifact:
    """Transform, prefit, sample the hierarchical posterior, diagnose.

    The artifact always comes back; ``converged`` is False (with warnings)
    when any split R-hat exceeds the 1.1 threshold or divergences occurred.
    """
    config = config or FitConfig()
    fp = fingerprint(data)
    transform = fit_transform(data.y)
    data_t = data.with_y(transform.transform(data.y))
    kv, bm = build_basis(data.n_ages, config.n_interior, config.degree)

    means, counts = average_series(data_t)
    pre = prefit(means, counts, bm, config.prefit_sampler())
    hyper = Hyperparameters(mu_alpha_bar=pre.alpha_bar_0,
                            mu_w_bar=pre.w_bar_0)

    model = HierarchicalModel(data_t, bm, hyper, centered=config.centered)
    post = sample(model.logp_and_grad, model.dim, config.sampler)

    constrained = np.empty_like(post.draws)
    n_chains, n_samples, dim = post.draws.shape
    for c in range(n_chains):
        for i in range(n_samples):
            vec = model.to_centered(post.draws[c, i])
            vec[-5:] = np.exp(vec[-5:])
            constrained[c, i] = vec

    diag_post = PosteriorDraws(
        draws=constrained, energies=post.energies, divergent=post.divergent,
        accept_stats=post.accept_stats, step_sizes=post.step_sizes,
        inv_mass=post.inv_mass)
    diagnostics = compute_diagnostics(diag_post)

    warnings = list(diagnostics.warnings)
    converged = diagnostics.converged

    return FitArtifact(
        data=data, transform=transform, kv=kv, bm=bm, prefit=pre,
        hyper=hyper, draws=constrained, energies=post.energies,
        divergent=post.divergent, param_names=model.param_names(),
        diagnostics=diagnostics, config=config.to_dict(),
        seed=config.sampler.seed, fingerprint=fp, converged=converged,
        warnings=warnings)


# ----------------------------------------------------------------------
# posterior predictive check


@dataclass(frozen=True)
class PPCSummary:
    """Posterior predictive p-values for age-averaged series statistics."""

    observed: dict
    p_values: dict
    n_replicates: int

    def all_within(self, lo: float = 0.01, hi: float = 0.99) -> bool:
        vals = [v for v in self.p_values.values() if not math.isnan(v)]
        return all(lo < v < hi for v in vals)


def _series_stats(data: FleetData) -> dict:
    means, counts = average_series(data)
    obs = means[counts > 0]
    stats = {
        "mean": float(np.mean(obs)),
        "sd": float(np.std(obs)),
        "min": float(np.min(obs)),
        "max": float(np.max(obs)),
    }
    if len(obs) > 2 and np.std(obs[:-1]) > 0 and np.std(obs[1:]) > 0:
        stats["lag1_autocorr"] = float(np.corrcoef(obs[:-1], obs[1:])[0, 1])
    else:
        stats["lag1_autocorr"] = float("nan")
    return stats


def posterior_predictive_check(artifact: FitArtifact,
                               n_replicates: int = 200,
                               seed: int | None = None) -> PPCSummary:
    """Simulate replicate datasets and rank the observed statistics.

    Each replicate keeps the posterior draw's parameters fixed and redraws
    only the observation noise.  Ties between observed and replicated
    statistics are resolved by mid-rank.
    """
    if artifact.n_draws < 100:
        raise ValueError("need at least 100 posterior draws for the check")
    rng = np.random.default_rng(artifact.seed + 1 if seed is None else seed)
    data_t = artifact.transformed_data()
    observed = _series_stats(data_t)

    flat = artifact.flat_draws()
    idx = np.linspace(0, len(flat) - 1, n_replicates).astype(int)
    S, K = artifact.S, artifact.K
    Bobs = artifact.bm.values[data_t.age - 1]
    ship = data_t.ship

    rep_stats = {k: np.empty(n_replicates) for k in observed}
    for j, d in enumerate(idx):
        vec = flat[d]
        alpha = vec[:S]
        w = vec[S:S + S * K].reshape(S, K)
        sigma_y = vec[-1]
        mu = alpha[ship] + np.einsum("nk,nk->n", Bobs, w[ship])
        y_rep = mu + rng.normal(0.0, sigma_y, size=len(mu))
        stats = _series_stats(data_t.with_y(y_rep))
        for k, v in stats.items():
            rep_stats[k][j] = v

    p_values = {}
    for k, obs_val in observed.items():
        reps = rep_stats[k]
        if math.isnan(obs_val) or np.any(np.isnan(reps)):
            p_values[k] = float("nan")
            continue
        greater = float(np.sum(reps > obs_val))
        ties = float(np.sum(reps == obs_val))
        p_values[k] = (greater + 0.5 * ties) / n_replicates
    return PPCSummary(observed=observed, p_values=p_values,
                      n_replicates=n_replicates)


# ----------------------------------------------------------------------
# persistence


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def save_artifact(artifact: FitArtifact, directory) -> Path:
    """Write meta.json, data.csv and draws.csv under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    meta = {
        "format": "fleetspline-fit-v1",
        "seed": artifact.seed,
        "config": artifact.config,
        "fingerprint": artifact.fingerprint,
        "converged": artifact.converged,
        "warnings": artifact.warnings,
        "transform": {"lam": artifact.transform.lam,
                      "mean": artifact.transform.mean,
                      "sd": artifact.transform.sd},
        "knots": {"degree": artifact.kv.degree,
                  "positions": artifact.kv.knots.tolist()},
        "prefit": {"alpha_bar_0": artifact.prefit.alpha_bar_0,
                   "w_bar_0": artifact.prefit.w_bar_0.tolist(),
                   "intercept": artifact.prefit.intercept,
                   "averaged": artifact.prefit.averaged.tolist(),
                   "counts": artifact.prefit.counts.tolist()},
        "hyperparameters": {"mu_alpha_bar": artifact.hyper.mu_alpha_bar,
                            "mu_w_bar": artifact.hyper.mu_w_bar.tolist(),
                            "gamma_shape": artifact.hyper.gamma_shape,
                            "gamma_rate": artifact.hyper.gamma_rate,
                            "expo_rate": artifact.hyper.expo_rate},
        "diagnostics": {"rhat": artifact.diagnostics.rhat.tolist(),
                        "n_eff": artifact.diagnostics.n_eff.tolist(),
                        "e_bfmi": artifact.diagnostics.e_bfmi.tolist(),
                        "n_divergent":
                            artifact.diagnostics.n_divergent.tolist(),
                        "warnings": artifact.diagnostics.warnings},
        "dims": {"S": artifact.S, "E": artifact.E, "K": artifact.K,
                 "T": artifact.T,
                 "n_chains": int(artifact.draws.shape[0]),
                 "n_samples": int(artifact.draws.shape[1])},
        "param_names": artifact.param_names,
    }
    with open(directory / "meta.json", "w") as fh:
        json.dump(_jsonable(meta), fh, indent=1, sort_keys=True,
                  allow_nan=True)
        fh.write("\n")

    write_fleet_csv(artifact.data, directory / "data.csv")

    n_chains, n_samples, dim = artifact.draws.shape
    with open(directory / "draws.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain", "iteration", "energy", "divergent"]
                        + artifact.param_names)
        for c in range(n_chains):
            for i in range(n_samples):
                row = [c, i, format(artifact.energies[c, i], ".17g"),
                       int(artifact.divergent[c, i])]
                row += [format(v, ".17g") for v in artifact.draws[c, i]]
                writer.writerow(row)
    return directory


def load_artifact(directory) -> FitArtifact:
    """Rebuild a FitArtifact from disk, verifying the data fingerprint."""
    directory = Path(directory)
    with open(directory / "meta.json") as fh:
        meta = json.load(fh)
    data = load_fleet_csv(directory / "data.csv")
    if fingerprint(data) != meta["fingerprint"]:
        raise ValueError("stored data does not match the artifact fingerprint")

    transform = PowerTransform(**meta["transform"])
    kv = KnotVector(degree=meta["knots"]["degree"],
                    knots=np.asarray(meta["knots"]["positions"]))
    bm = basis_matrix(kv, np.arange(1, data.n_ages + 1, dtype=float))
    pre = PrefitResult(
        alpha_bar_0=meta["prefit"]["alpha_bar_0"],
        w_bar_0=np.asarray(meta["prefit"]["w_bar_0"]),
        intercept=meta["prefit"]["intercept"],
        averaged=np.asarray(meta["prefit"]["averaged"], dtype=float),
        counts=np.asarray(meta["prefit"]["counts"]))
    hyper = Hyperparameters(
        mu_alpha_bar=meta["hyperparameters"]["mu_alpha_bar"],
        mu_w_bar=np.asarray(meta["hyperparameters"]["mu_w_bar"]),
        gamma_shape=meta["hyperparameters"]["gamma_shape"],
        gamma_rate=meta["hyperparameters"]["gamma_rate"],
        expo_rate=meta["hyperparameters"]["expo_rate"])

    dims = meta["dims"]
    n_chains, n_samples = dims["n_chains"], dims["n_samples"]
    dim = len(meta["param_names"])
    draws = np.empty((n_chains, n_samples, dim))
    energies = np.empty((n_chains, n_samples))
    divergent = np.zeros((n_chains, n_samples), dtype=bool)
    with open(directory / "draws.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[4:] != meta["param_names"]:
            raise ValueError("draws.csv columns disagree with meta.json")
        for row in reader:
            c, i = int(row[0]), int(row[1])
            energies[c, i] = float(row[2])
            divergent[c, i] = bool(int(row[3]))
            draws[c, i] = [float(v) for v in row[4:]]

    diag = Diagnostics(
        rhat=np.asarray(meta["diagnostics"]["rhat"], dtype=float),
        n_eff=np.asarray(meta["diagnostics"]["n_eff"], dtype=float),
        e_bfmi=np.asarray(meta["diagnostics"]["e_bfmi"], dtype=float),
        n_divergent=np.asarray(meta["diagnostics"]["n_divergent"]),
        warnings=list(meta["diagnostics"]["warnings"]))

    return FitArtifact(
        data=data, transform=transform, kv=kv, bm=bm, prefit=pre,
        hyper=hyper, draws=draws, energies=energies, divergent=divergent,
        param_names=list(meta["param_names"]), diagnostics=diag,
        config=dict(meta["config"]), seed=meta["seed"],
        fingerprint=meta["fingerprint"], converged=meta["converged"],
        warnings=list(meta["warnings"]))
