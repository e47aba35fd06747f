"""Synthetic fleet generator with bathtub-shaped type curves.

Reproduces the structural features of real fleet failure data: a handful of
engine types with very different ship counts, per-ship observation windows
covering only part of the lifecycle, ship-level heterogeneity around the
type curve, and probabilistic censoring of early ages (warranty repairs
missing from the maintenance record).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .model import FleetData


@dataclass(frozen=True)
class BathtubParams:
    """Parameters of a·exp(-b·t) + c + d·max(0, t - t0)^2."""

    early_amplitude: float   # a
    early_decay: float       # b
    flat_level: float        # c
    wearout_rate: float      # d
    wearout_onset: float     # t0

    def __post_init__(self):
        for name in ("early_amplitude", "early_decay", "flat_level",
                     "wearout_rate", "wearout_onset"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def bathtub(t, params: BathtubParams):
    """Failure rate at age t: decaying early term, flat middle, quadratic tail."""
    t = np.asarray(t, dtype=float)
    out = (params.early_amplitude * np.exp(-params.early_decay * t)
           + params.flat_level
           + params.wearout_rate * np.maximum(0.0, t - params.wearout_onset) ** 2)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FleetScenario:
    """Knobs of the generator; defaults mirror the real fleet's shape."""

    ships_per_type: tuple[int, ...] = (6, 27, 43, 19, 4)
    lifecycle: int = 31
    type_curves: tuple[BathtubParams, ...] = ()
    ship_sd: float = 0.15
    noise_sd: float = 0.1
    warranty_censor_age: int = 5
    p_censor: float = 0.7
    window_lengths: tuple[int, int] = (4, 16)
    # optional per-type (lo, hi) age bands the observation windows fall in;
    # types built in different eras occupy different parts of the lifecycle
    type_age_bands: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if not self.type_curves:
            object.__setattr__(self, "type_curves",
                               default_type_curves(self.n_types))
        if len(self.type_curves) != self.n_types:
            raise ValueError("one bathtub curve per type required")
        if self.type_age_bands and len(self.type_age_bands) != self.n_types:
            raise ValueError("one age band per type required")
        if self.ship_sd < 0 or self.noise_sd < 0:
            raise ValueError("spread parameters must be non-negative")
        if not 0 <= self.p_censor <= 1:
            raise ValueError("p_censor must be a probability")
        if self.warranty_censor_age >= self.lifecycle:
            raise ValueError("warranty_censor_age must be below the lifecycle")
        lo, hi = self.window_lengths
        if not 1 <= lo <= hi <= self.lifecycle:
            raise ValueError("invalid observation window lengths")

    @property
    def n_types(self) -> int:
        return len(self.ships_per_type)

    @property
    def n_ships(self) -> int:
        return sum(self.ships_per_type)


def default_type_curves(n_types: int) -> tuple[BathtubParams, ...]:
    """Moderately heterogeneous bathtub curves, one per type."""
    base = [
        BathtubParams(1.2, 0.40, 0.50, 0.0045, 18.0),
        BathtubParams(1.6, 0.35, 0.62, 0.0030, 16.0),
        BathtubParams(1.0, 0.30, 0.44, 0.0060, 20.0),
        BathtubParams(1.4, 0.45, 0.55, 0.0040, 17.0),
        BathtubParams(0.8, 0.25, 0.38, 0.0055, 19.0),
    ]
    curves = [base[i % len(base)] for i in range(n_types)]
    return tuple(curves)


def default_scenario() -> FleetScenario:
    """1-archetype / 5-type / 99-ship fleet over a 31-year lifecycle."""
    return FleetScenario(
        type_age_bands=((8, 24), (12, 31), (14, 31), (1, 16), (1, 13)))


def generate(scenario: FleetScenario, seed: int) -> tuple[FleetData, dict]:
    """Draw one synthetic fleet panel plus its generating ground truth.

    Per ship: a contiguous observation window, an intercept offset and a
    mean-one multiplicative shape factor (both driven by ``ship_sd``),
    Gaussian observation noise, then warranty censoring of early ages.
    Rates are floored at zero; floor events are counted in the truth record.
    Ships left without observations after censoring are dropped (and listed
    in the truth record).
    """
    rng = np.random.default_rng(seed)
    T = scenario.lifecycle
    ages_grid = np.arange(1, T + 1, dtype=float)

    rows_age, rows_ship, rows_y = [], [], []
    ship_to_type, ship_labels = [], []
    truth_ships = []
    n_floored = 0
    dropped = []

    ship_no = 0
    for e, n_ships in enumerate(scenario.ships_per_type):
        params = scenario.type_curves[e]
        type_curve = bathtub(ages_grid, params)
        band_lo, band_hi = (scenario.type_age_bands[e]
                            if scenario.type_age_bands else (1, T))
        for _ in range(n_ships):
            ship_no += 1
            label = f"ship{ship_no:03d}"
            intercept_off = rng.normal(0.0, scenario.ship_sd)
            shape_factor = max(0.0, 1.0 + rng.normal(0.0, scenario.ship_sd))
            varying = type_curve - params.flat_level
            ship_curve = (shape_factor * varying + params.flat_level
                          + intercept_off)

            max_len = min(scenario.window_lengths[1], band_hi - band_lo + 1)
            min_len = min(scenario.window_lengths[0], max_len)
            length = int(rng.integers(min_len, max_len + 1))
            start = int(rng.integers(band_lo, band_hi - length + 2))
            window = np.arange(start, start + length)

            noise = rng.normal(0.0, scenario.noise_sd, size=length)
            y = ship_curve[window - 1] + noise
            n_floored += int(np.sum(y < 0))
            y = np.maximum(y, 0.0)

            censored = (window < scenario.warranty_censor_age) & (
                rng.uniform(size=length) < scenario.p_censor)
            window, y = window[~censored], y[~censored]

            if len(window) == 0:
                dropped.append(label)
                continue
            idx = len(ship_labels)
            ship_labels.append(label)
            ship_to_type.append(e)
            truth_ships.append({
                "ship": label,
                "type": f"type{e + 1}",
                "intercept_offset": intercept_off,
                "shape_factor": shape_factor,
                "curve": ship_curve.tolist(),
            })
            rows_age.extend(int(a) for a in window)
            rows_ship.extend([idx] * len(window))
            rows_y.extend(float(v) for v in y)

    if not rows_y:
        raise ValueError("scenario produced an empty dataset")

    data = FleetData(
        n_ages=T, age=rows_age, ship=rows_ship, ship_to_type=ship_to_type,
        y=rows_y, ship_labels=tuple(ship_labels),
        type_labels=tuple(f"type{e + 1}" for e in range(scenario.n_types)))

    truth = {
        "seed": seed,
        "scenario": asdict(scenario),
        "type_curves": {f"type{e + 1}": bathtub(ages_grid,
                                                scenario.type_curves[e]).tolist()
                        for e in range(scenario.n_types)},
        "ships": truth_ships,
        "n_floored": n_floored,
        "dropped_ships": dropped,
    }
    return data, truth
