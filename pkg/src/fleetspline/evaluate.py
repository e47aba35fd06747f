"""Accuracy evaluation: holdout CV, pooling baselines, and knot sweeps.

All error figures are RMSEs on the transformed-standardized scale, with the
transform always fitted on the fold's training rows only.  Two internal
baselines bracket the hierarchical model: independent per-ship spline fits
(no pooling) and a single global spline (complete pooling).  The shared
protocol holds out a fraction of each ship's observed rows, so a baseline's
accuracy on data-poor ships directly reflects how much pooling buys.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import BasisMatrix
from .forecast import archetype_center, ship_curve_draws, type_curve_draws
from .model import FleetData
from .transform import fit_transform
from .workflow import FitConfig, build_basis, fingerprint, fit

_RIDGE_WELL_DETERMINED = 1e-8
_RIDGE_UNDERDETERMINED = 1e-2


def rmse(pred, actual) -> float:
    """Root mean squared error of two equal-length vectors."""
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or pred.ndim != 1 or pred.size == 0:
        raise ValueError("pred and actual must be equal-length 1-D vectors")
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def stable_fold_seed(seed: int, label: str) -> int:
    """Deterministic per-fold seed independent of Python hash randomization."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**63 - 1)


@dataclass
class EvalReport:
    """RMSE breakdown plus baseline comparisons, all on the transformed scale."""

    per_ship_rmse: dict = field(default_factory=dict)
    per_type_rmse: dict = field(default_factory=dict)
    overall_rmse: float = float("nan")
    baseline_rmses: dict = field(default_factory=dict)
    baseline_per_ship_rmse: dict = field(default_factory=dict)
    per_ship_n_test: dict = field(default_factory=dict)
    scale: str = "transformed"
    n_test_rows: int = 0
    warnings: list = field(default_factory=list)

    def subset_rmse(self, ships, source: str = "hierarchical") -> float:
        """Pooled RMSE over a subset of ships (exact, via per-ship counts)."""
        table = (self.per_ship_rmse if source == "hierarchical"
                 else self.baseline_per_ship_rmse[source])
        num = den = 0.0
        for label in ships:
            if label not in table:
                continue
            n = self.per_ship_n_test[label]
            num += n * table[label] ** 2
            den += n
        return float(np.sqrt(num / den)) if den else float("nan")


def _pooled_rmse(residuals: list[np.ndarray]) -> float:
    if not residuals:
        return float("nan")
    stacked = np.concatenate(residuals)
    return float(np.sqrt(np.mean(stacked**2)))


# ----------------------------------------------------------------------
# least-squares spline baselines


def _design(bm: BasisMatrix, ages: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(len(ages)), bm.values[ages - 1]])


def _ridge_fit(X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    A = X.T @ X + lam * np.eye(X.shape[1])
    return np.linalg.solve(A, X.T @ y)


def no_pooling_curves(data: FleetData, bm: BasisMatrix) -> tuple[np.ndarray, list[str]]:
    """Independent per-ship spline fits -> (S, T) curves + underdetermined flags.

    Ships with fewer than K+2 observations fall back to a stronger ridge
    penalty and are flagged.
    """
    K = bm.n_basis
    S, T = data.n_ships, data.n_ages
    curves = np.empty((S, T))
    flagged = []
    full = _design(bm, np.arange(1, T + 1))
    for s in range(S):
        rows = data.ship == s
        X = _design(bm, data.age[rows])
        if rows.sum() >= K + 2:
            lam = _RIDGE_WELL_DETERMINED
        else:
            lam = _RIDGE_UNDERDETERMINED
            flagged.append(data.ship_labels[s])
        beta = _ridge_fit(X, data.y[rows], lam)
        curves[s] = full @ beta
    return curves, flagged


def complete_pooling_curve(data: FleetData, bm: BasisMatrix) -> np.ndarray:
    """One global spline fit over every observation -> length-T curve."""
    X = _design(bm, data.age)
    beta = _ridge_fit(X, data.y, _RIDGE_WELL_DETERMINED)
    return _design(bm, np.arange(1, data.n_ages + 1)) @ beta


# ----------------------------------------------------------------------
# shared holdout protocol


def holdout_split(data: FleetData, holdout_frac: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Boolean test mask over rows; every ship keeps at least one train row.

    Ships with a single observation contribute no test rows.
    """
    if not 0.0 < holdout_frac < 1.0:
        raise ValueError("holdout_frac must lie in (0, 1)")
    test = np.zeros(data.n_obs, dtype=bool)
    for s in range(data.n_ships):
        rows = np.flatnonzero(data.ship == s)
        n = len(rows)
        if n < 2:
            continue
        n_test = int(np.clip(round(holdout_frac * n), 1, n - 1))
        chosen = rng.choice(rows, size=n_test, replace=False)
        test[chosen] = True
    return test


def holdout_cv(data: FleetData, config: FitConfig | None = None,
               holdout_frac: float = 0.3, seed: int = 0) -> EvalReport:
    """Hierarchical model vs pooling baselines on one shared row holdout.

    Fits everything on the training rows (transform included), then scores
    predictions of the held-out rows.  The hierarchical prediction for a row
    is the posterior-mean curve of its ship at that age.
    """
    config = config or FitConfig()
    rng = np.random.default_rng(stable_fold_seed(seed, "holdout"))
    test_mask = holdout_split(data, holdout_frac, rng)
    if not np.any(test_mask):
        raise ValueError("holdout produced no test rows")
    train = data.select_rows(~test_mask)

    transform = fit_transform(train.y)
    art = fit(train, config)
    _, bm = build_basis(data.n_ages, config.n_interior, config.degree)
    train_t = train.with_y(transform.transform(train.y))

    y_test = transform.transform(data.y[test_mask])
    ship_test = data.ship[test_mask]
    age_test = data.age[test_mask]

    hier_curves = np.stack([ship_curve_draws(art, s).mean(axis=0)
                            for s in range(data.n_ships)])
    np_curves, flagged = no_pooling_curves(train_t, bm)
    cp_curve = complete_pooling_curve(train_t, bm)

    report = EvalReport(n_test_rows=int(test_mask.sum()))
    if flagged:
        report.warnings.append(
            f"underdetermined per-ship fits (ridge fallback): {flagged}")
    report.warnings.extend(art.warnings)

    per_ship_res = {}
    per_type_res = {}
    np_per_ship = {}
    cp_per_ship = {}
    all_res = {"hierarchical": [], "no_pooling": [], "complete_pooling": []}
    for s in range(data.n_ships):
        rows = ship_test == s
        if not np.any(rows):
            continue
        label = data.ship_labels[s]
        ages = age_test[rows]
        truth = y_test[rows]
        res_h = hier_curves[s][ages - 1] - truth
        res_np = np_curves[s][ages - 1] - truth
        res_cp = cp_curve[ages - 1] - truth
        per_ship_res[label] = res_h
        report.per_ship_n_test[label] = int(rows.sum())
        np_per_ship[label] = float(np.sqrt(np.mean(res_np**2)))
        cp_per_ship[label] = float(np.sqrt(np.mean(res_cp**2)))
        tlabel = data.type_labels[data.ship_to_type[s]]
        per_type_res.setdefault(tlabel, []).append(res_h)
        all_res["hierarchical"].append(res_h)
        all_res["no_pooling"].append(res_np)
        all_res["complete_pooling"].append(res_cp)

    report.per_ship_rmse = {lab: float(np.sqrt(np.mean(r**2)))
                            for lab, r in per_ship_res.items()}
    report.per_type_rmse = {lab: _pooled_rmse(rs)
                            for lab, rs in per_type_res.items()}
    report.overall_rmse = _pooled_rmse(all_res["hierarchical"])
    report.baseline_rmses = {
        "no_pooling": _pooled_rmse(all_res["no_pooling"]),
        "complete_pooling": _pooled_rmse(all_res["complete_pooling"]),
    }
    report.baseline_per_ship_rmse = {"no_pooling": np_per_ship,
                                     "complete_pooling": cp_per_ship}
    return report


def pooling_baselines(data: FleetData, config: FitConfig | None = None,
                      holdout_frac: float = 0.3, seed: int = 0) -> dict:
    """Baseline-name -> RMSE map from the shared holdout protocol."""
    return holdout_cv(data, config, holdout_frac, seed).baseline_rmses


# ----------------------------------------------------------------------
# leave-one-ship-out cross-validation


def loo_folds(data: FleetData) -> list[tuple[str, FleetData]]:
    """(held-out ship label, training panel) pairs, skipping ships whose
    type would lose its last member."""
    folds = []
    for s in range(data.n_ships):
        e = data.ship_to_type[s]
        if int(np.sum(data.ship_to_type == e)) < 2:
            continue
        folds.append((data.ship_labels[s],
                      data.without_ships([data.ship_labels[s]])))
    return folds


def loo_fold_score(data: FleetData, ship_label: str,
                   config: FitConfig) -> dict:
    """Refit without one ship and score its rows via the type-level curve.

    Also scores the two baselines: the global spline and the plain average
    of the type's remaining per-ship spline fits.
    """
    train = data.without_ships([ship_label])
    fold_cfg = dataclasses.replace(
        config,
        sampler=dataclasses.replace(
            config.sampler,
            seed=stable_fold_seed(config.sampler.seed, ship_label)))
    art = fit(train, fold_cfg)

    s = data.ship_index(ship_label)
    e = data.ship_to_type[s]
    tlabel = data.type_labels[e]
    rows = data.ship == s
    ages = data.age[rows]
    truth = art.transform.transform(data.y[rows])

    type_curve = type_curve_draws(art, tlabel).mean(axis=0)
    _, bm = build_basis(data.n_ages, config.n_interior, config.degree)
    train_t = train.with_y(art.transform.transform(train.y))
    np_curves, _ = no_pooling_curves(train_t, bm)
    members = np.flatnonzero(train.ship_to_type == e)
    np_type_curve = np_curves[members].mean(axis=0)
    cp_curve = complete_pooling_curve(train_t, bm)

    return {
        "ship": ship_label,
        "type": tlabel,
        "residuals": type_curve[ages - 1] - truth,
        "residuals_no_pooling": np_type_curve[ages - 1] - truth,
        "residuals_complete_pooling": cp_curve[ages - 1] - truth,
    }


def loo_ship_cv(data: FleetData, config: FitConfig | None = None) -> EvalReport:
    """Leave-one-ship-out: refit, predict the held-out ship from its type.

    Per-type rows pool the residuals of that type's held-out ships; the
    overall figure pools everything.
    """
    config = config or FitConfig()
    report = EvalReport()
    skipped = [data.ship_labels[s] for s in range(data.n_ships)
               if int(np.sum(data.ship_to_type == data.ship_to_type[s])) < 2]
    if skipped:
        report.warnings.append(
            f"skipped sole ships of their type: {skipped}")

    per_type = {}
    np_per_ship, cp_per_ship = {}, {}
    all_h, all_np, all_cp = [], [], []
    for label, _ in loo_folds(data):
        fold = loo_fold_score(data, label, config)
        r = fold["residuals"]
        report.per_ship_rmse[label] = float(np.sqrt(np.mean(r**2)))
        np_per_ship[label] = float(
            np.sqrt(np.mean(fold["residuals_no_pooling"] ** 2)))
        cp_per_ship[label] = float(
            np.sqrt(np.mean(fold["residuals_complete_pooling"] ** 2)))
        report.per_ship_n_test[label] = len(r)
        per_type.setdefault(fold["type"], []).append(r)
        all_h.append(r)
        all_np.append(fold["residuals_no_pooling"])
        all_cp.append(fold["residuals_complete_pooling"])
        report.n_test_rows += len(r)

    report.per_type_rmse = {t: _pooled_rmse(rs) for t, rs in per_type.items()}
    report.overall_rmse = _pooled_rmse(all_h)
    report.baseline_rmses = {"no_pooling": _pooled_rmse(all_np),
                             "complete_pooling": _pooled_rmse(all_cp)}
    report.baseline_per_ship_rmse = {"no_pooling": np_per_ship,
                                     "complete_pooling": cp_per_ship}
    return report


# ----------------------------------------------------------------------
# novel engine types


def new_type_eval(train_data: FleetData, test_series_by_new_type: dict,
                  config: FitConfig | None = None) -> EvalReport:
    """Score archetype-based forecasts of engine types absent from training.

    ``test_series_by_new_type`` maps a new type label to a list of
    ``(ages, rates)`` series (one per test ship).  The prediction for every
    series is the plug-in archetype curve; the complete-pooling global
    spline serves as the baseline.
    """
    overlap = set(test_series_by_new_type) & set(train_data.type_labels)
    if overlap:
        raise ValueError(f"test types overlap the training types: {sorted(overlap)}")
    config = config or FitConfig()
    report = EvalReport()
    if not test_series_by_new_type:
        return report

    art = fit(train_data, config)
    center = archetype_center(art)
    _, bm = build_basis(train_data.n_ages, config.n_interior, config.degree)
    train_t = train_data.with_y(art.transform.transform(train_data.y))
    cp_curve = complete_pooling_curve(train_t, bm)

    all_h, all_cp = [], []
    for tlabel, series_list in test_series_by_new_type.items():
        res_h, res_cp = [], []
        for ages, rates in series_list:
            ages = np.asarray(ages, dtype=int)
            if np.any(ages < 1) or np.any(ages > train_data.n_ages):
                raise ValueError(f"test ages outside 1..{train_data.n_ages}")
            truth = art.transform.transform(np.asarray(rates, dtype=float))
            res_h.append(center[ages - 1] - truth)
            res_cp.append(cp_curve[ages - 1] - truth)
        report.per_type_rmse[tlabel] = _pooled_rmse(res_h)
        all_h.extend(res_h)
        all_cp.extend(res_cp)
        report.n_test_rows += sum(len(r) for r in res_h)

    report.overall_rmse = _pooled_rmse(all_h)
    report.baseline_rmses = {"complete_pooling": _pooled_rmse(all_cp)}
    return report


# ----------------------------------------------------------------------
# knot sweep


def knot_sweep(data: FleetData, k_candidates, config: FitConfig | None = None,
               holdout_frac: float = 0.3, seed: int = 0):
    """Holdout CV RMSE per basis-size candidate.

    Returns (rows, best_k) where rows are (K, rmse) for every feasible
    candidate and ties resolve toward the smaller K.  Infeasible candidates
    (degree too high, or more coefficients than observed ages support) are
    skipped.
    """
    config = config or FitConfig()
    rows = []
    skipped = []
    observed_ages = len(np.unique(data.age))
    for k in sorted(set(int(k) for k in k_candidates)):
        n_interior = k - config.degree - 1
        if k < 1 or n_interior < 0 or observed_ages < k + 2:
            skipped.append(k)
            continue
        cfg_k = dataclasses.replace(
            config, n_interior=n_interior,
            sampler=dataclasses.replace(
                config.sampler,
                seed=stable_fold_seed(config.sampler.seed, f"K={k}")))
        report = holdout_cv(data, cfg_k, holdout_frac, seed)
        rows.append((k, report.overall_rmse))
    if skipped:
        import warnings as _warnings

        _warnings.warn(f"skipped infeasible knot candidates: {skipped}",
                       stacklevel=2)
    best_k = min(rows, key=lambda r: (r[1], r[0]))[0] if rows else None
    return rows, best_k


# ----------------------------------------------------------------------
# report emission


def write_report_csv(report: EvalReport, path) -> Path:
    """Long-format rows: scope,name,rmse."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scope", "name", "rmse"])
        writer.writerow(["overall", "hierarchical",
                         format(report.overall_rmse, ".17g")])
        for name, val in sorted(report.baseline_rmses.items()):
            writer.writerow(["baseline", name, format(val, ".17g")])
        for name, val in sorted(report.per_type_rmse.items()):
            writer.writerow(["type", name, format(val, ".17g")])
        for name, val in sorted(report.per_ship_rmse.items()):
            writer.writerow(["ship", name, format(val, ".17g")])
    return path


def format_report_table(report: EvalReport, data: FleetData | None = None) -> str:
    """Human-readable table: one row per engine type plus the mean row."""
    lines = []
    counts = {}
    if data is not None:
        for e, lab in enumerate(data.type_labels):
            counts[lab] = int(np.sum(np.isin(
                data.ship, np.flatnonzero(data.ship_to_type == e))))
    header = f"{'Engine type':<16}{'RMSE':>10}"
    lines.append(header)
    lines.append("-" * len(header))
    for lab in sorted(report.per_type_rmse):
        shown = f"{lab} ({counts[lab]})" if lab in counts else lab
        lines.append(f"{shown:<16}{report.per_type_rmse[lab]:>10.4f}")
    lines.append(f"{'overall':<16}{report.overall_rmse:>10.4f}")
    for name, val in sorted(report.baseline_rmses.items()):
        lines.append(f"{name:<16}{val:>10.4f}")
    return "\n".join(lines)
