"""Failure-rate curve forecasts from a fit artifact.

Every mode produces per-draw curves over the full age grid and summarizes
them pointwise (mean plus a central credible interval).  Original-scale
curves are obtained by inverse-transforming the per-draw values before
summarizing; summaries themselves are never inverse-transformed, since the
transform is nonlinear.

Modes
-----
existing ship        alpha_s + B w_s per posterior draw
new ship, known type alpha_bar_e + B w_bar_e (optionally re-drawing
                     ship-level parameters for a wider, hierarchical band)
new type             archetype plug-in curve alpha_bar_0 + B w_bar_0 with a
                     band from re-drawing type-level parameters
qualitative prior    new ship drawn around a chosen donor type's posterior
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import curve as basis_curve
from .workflow import FitArtifact

_MODE_SEED_OFFSET = {
    "existing_ship": 101,
    "new_ship_known_type": 211,
    "new_type": 307,
    "qualitative_prior": 401,
}


@dataclass(frozen=True)
class ForecastCurve:
    """Pointwise summary of per-draw failure-rate curves over ages 1..T."""

    ages: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    scale: str          # "transformed" | "original"
    layer: str          # "ship" | "type" | "archetype"
    source_mode: str

    def __post_init__(self):
        for name in ("ages", "mean", "lower", "upper"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.ages) == len(self.mean) == len(self.lower)
                == len(self.upper)):
            raise ValueError("curve components disagree in length")
        if np.any(self.lower > self.mean + 1e-12) or np.any(
                self.mean > self.upper + 1e-12):
            raise ValueError("curve bounds must bracket the mean")


def _rng_for(artifact: FitArtifact, mode: str, seed) -> np.random.Generator:
    if seed is None:
        seed = artifact.seed + _MODE_SEED_OFFSET[mode]
    return np.random.default_rng(seed)


def _summarize(draw_curves: np.ndarray, artifact: FitArtifact, *, level: float,
               scale: str, layer: str, mode: str,
               center_override: np.ndarray | None = None,
               band_curves: np.ndarray | None = None) -> ForecastCurve:
    """Pointwise mean and central interval of per-draw curves.

    ``band_curves``, when given, carries a widened set of draws for the
    interval (predictive bands with observation noise) while the mean stays
    on the noise-free curves.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("credible level must lie in (0, 1)")
    if scale not in ("transformed", "original"):
        raise ValueError(f"unknown scale {scale!r}")
    values = draw_curves
    band = band_curves if band_curves is not None else draw_curves
    center = center_override
    if scale == "original":
        values = artifact.transform.inverse(values)
        band = artifact.transform.inverse(band)
        center = None  # original-scale center comes from the draws themselves

    mean = values.mean(axis=0) if center is None else np.asarray(center)
    lo = (1.0 - level) / 2.0
    lower = np.quantile(band, lo, axis=0)
    upper = np.quantile(band, 1.0 - lo, axis=0)
    # a deterministic center is bracketed by construction up to Monte Carlo
    # wobble; fold it into the band so the invariant holds exactly
    lower = np.minimum(lower, mean)
    upper = np.maximum(upper, mean)
    return ForecastCurve(ages=artifact.bm.ages, mean=mean, lower=lower,
                         upper=upper, level=level, scale=scale, layer=layer,
                         source_mode=mode)


def ship_curve_draws(artifact: FitArtifact, ship) -> np.ndarray:
    """(n_draws, T) matrix of an existing ship's per-draw curves."""
    s = artifact.data.ship_index(ship)
    alpha = artifact.alpha_draws()[:, s]
    w = artifact.w_draws()[:, s, :]
    return alpha[:, None] + w @ artifact.bm.values.T


def type_curve_draws(artifact: FitArtifact, engine_type) -> np.ndarray:
    """(n_draws, T) matrix of a type's per-draw curves."""
    e = artifact.data.type_index(engine_type)
    ab = artifact.alpha_bar_draws()[:, e]
    wb = artifact.w_bar_draws()[:, e, :]
    return ab[:, None] + wb @ artifact.bm.values.T


def curve_for_ship(artifact: FitArtifact, ship, *, level: float = 0.9,
                   scale: str = "transformed", include_noise: bool = False,
                   seed=None) -> ForecastCurve:
    """Posterior curve of a fitted ship over every age 1..T.

    ``include_noise`` widens the band into a posterior predictive one by
    adding observation noise per draw and age.
    """
    values = ship_curve_draws(artifact, ship)
    band = None
    if include_noise:
        rng = _rng_for(artifact, "existing_ship", seed)
        sigma_y = artifact.sigma_draws("sigma_y")
        band = values + rng.normal(size=values.shape) * sigma_y[:, None]
    return _summarize(values, artifact, level=level, scale=scale,
                      layer="ship", mode="existing_ship", band_curves=band)


def curve_for_new_ship(artifact: FitArtifact, engine_type, *,
                       hierarchical: bool = False, level: float = 0.9,
                       scale: str = "transformed", seed=None) -> ForecastCurve:
    """Forecast for a new ship whose engine type is among the fitted types.

    The plug-in form uses the type-level posterior directly; the
    hierarchical form additionally re-draws ship-level parameters around the
    type, giving a wider band.
    """
    e = artifact.data.type_index(engine_type)
    ab = artifact.alpha_bar_draws()[:, e]
    wb = artifact.w_bar_draws()[:, e, :]
    layer = "type"
    if hierarchical:
        rng = _rng_for(artifact, "new_ship_known_type", seed)
        sa = artifact.sigma_draws("sigma_alpha")
        sw = artifact.sigma_draws("sigma_w")
        ab = ab + rng.normal(size=ab.shape) * sa
        wb = wb + rng.normal(size=wb.shape) * sw[:, None]
        layer = "ship"
    values = ab[:, None] + wb @ artifact.bm.values.T
    return _summarize(values, artifact, level=level, scale=scale,
                      layer=layer, mode="new_ship_known_type")


def archetype_center(artifact: FitArtifact) -> np.ndarray:
    """Plug-in archetype curve alpha_bar_0 + B w_bar_0 (transformed scale)."""
    return basis_curve(artifact.bm, artifact.prefit.alpha_bar_0,
                       artifact.prefit.w_bar_0)


def curve_for_new_type(artifact: FitArtifact, *, level: float = 0.9,
                       scale: str = "transformed", seed=None) -> ForecastCurve:
    """Forecast for a ship with an engine type absent from the training fleet.

    The center is the deterministic archetype plug-in curve; the band comes
    from re-drawing type-level parameters around it with the posterior
    scale draws.
    """
    rng = _rng_for(artifact, "new_type", seed)
    center = archetype_center(artifact)
    sab = artifact.sigma_draws("sigma_alpha_bar")
    swb = artifact.sigma_draws("sigma_w_bar")
    n = len(sab)
    ab = artifact.prefit.alpha_bar_0 + rng.normal(size=n) * sab
    wb = (artifact.prefit.w_bar_0[None, :]
          + rng.normal(size=(n, artifact.K)) * swb[:, None])
    values = ab[:, None] + wb @ artifact.bm.values.T
    return _summarize(values, artifact, level=level, scale=scale,
                      layer="archetype", mode="new_type",
                      center_override=center if scale == "transformed" else None)


def curve_with_qualitative_prior(artifact: FitArtifact, donor_type, *,
                                 level: float = 0.9,
                                 scale: str = "transformed",
                                 seed=None) -> ForecastCurve:
    """Forecast for a new ship using a donor type's posterior as its prior.

    Qualitative knowledge (same construction era, say) picks the donor; the
    new ship's parameters are drawn around that type's posterior with the
    ship-level scale draws.
    """
    e = artifact.data.type_index(donor_type)
    rng = _rng_for(artifact, "qualitative_prior", seed)
    ab = artifact.alpha_bar_draws()[:, e]
    wb = artifact.w_bar_draws()[:, e, :]
    sa = artifact.sigma_draws("sigma_alpha")
    sw = artifact.sigma_draws("sigma_w")
    alpha = ab + rng.normal(size=ab.shape) * sa
    w = wb + rng.normal(size=wb.shape) * sw[:, None]
    values = alpha[:, None] + w @ artifact.bm.values.T
    return _summarize(values, artifact, level=level, scale=scale,
                      layer="ship", mode="qualitative_prior")


def type_distance_table(artifact: FitArtifact) -> list[tuple[tuple[str, str], float]]:
    """Euclidean distances between posterior-mean type curves, ascending.

    Distances are taken on the transformed scale over the common age grid;
    all unordered type pairs appear once.
    """
    labels = artifact.data.type_labels
    if len(labels) < 2:
        raise ValueError("need at least 2 fitted types")
    curves = {lab: type_curve_draws(artifact, lab).mean(axis=0)
              for lab in labels}
    rows = []
    for i, a in enumerate(labels):
        for b in labels[i + 1:]:
            dist = float(np.linalg.norm(curves[a] - curves[b]))
            rows.append(((a, b), dist))
    rows.sort(key=lambda r: (r[1], r[0]))
    return rows


# ----------------------------------------------------------------------
# file emission


def write_curve(curve: ForecastCurve, basepath) -> tuple[Path, Path]:
    """Write ``<base>.csv`` (age,mean,lower,upper) plus a JSON sidecar."""
    basepath = Path(basepath)
    csv_path = basepath.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["age", "mean", "lower", "upper"])
        for i in range(len(curve.ages)):
            writer.writerow([
                int(curve.ages[i]),
                format(curve.mean[i], ".17g"),
                format(curve.lower[i], ".17g"),
                format(curve.upper[i], ".17g"),
            ])
    json_path = basepath.with_suffix(".json")
    with open(json_path, "w") as fh:
        json.dump({"mode": curve.source_mode, "layer": curve.layer,
                   "scale": curve.scale, "level": curve.level},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


def write_distance_table(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["type_a", "type_b", "distance"])
        for (a, b), dist in rows:
            writer.writerow([a, b, format(dist, ".17g")])
    return path
