"""Three-layer hierarchical generative model for fleet failure-rate curves.

Each ship carries an intercept and a vector of B-spline weights drawn around
its engine type's parameters; type parameters are drawn around archetype
means supplied as plug-in hyperparameters.  The model is exposed as an
unnormalized log-posterior (plus analytic gradient) over a single
unconstrained vector, with the five scale parameters log-transformed and the
corresponding Jacobian terms included.

Parameter layout of the unconstrained vector::

    [ alpha (S) | w (S*K, ship-major) | alpha_bar (E) | w_bar (E*K) |
      log sigma_alpha, log sigma_w, log sigma_alpha_bar, log sigma_w_bar,
      log sigma_y ]

An optional non-centered variant replaces the ship-level block with
standardized offsets; :meth:`HierarchicalModel.to_centered` maps such draws
back to the plain layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .basis import BasisMatrix

LOG_2PI = math.log(2.0 * math.pi)


def _frozen(values, dtype) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FleetData:
    """Validated observation panel: one row per (ship, age) failure rate.

    Ship and type indices are dense and 0-based; ages are integer years in
    1..n_ages.  ``y`` may hold raw or transformed responses depending on the
    pipeline stage.
    """

    n_ages: int
    age: np.ndarray = field(repr=False)
    ship: np.ndarray = field(repr=False)
    ship_to_type: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    ship_labels: tuple[str, ...] = ()
    type_labels: tuple[str, ...] = ()

    def __post_init__(self):
        age = _frozen(self.age, np.int64)
        ship = _frozen(self.ship, np.int64)
        s2e = _frozen(self.ship_to_type, np.int64)
        y = _frozen(self.y, float)
        object.__setattr__(self, "age", age)
        object.__setattr__(self, "ship", ship)
        object.__setattr__(self, "ship_to_type", s2e)
        object.__setattr__(self, "y", y)

        n = len(y)
        if not (len(age) == len(ship) == n):
            raise ValueError("age, ship and y must have equal length")
        if n == 0:
            raise ValueError("empty fleet data")
        if not np.all(np.isfinite(y)):
            raise ValueError("responses must be finite")
        if self.n_ages < 1:
            raise ValueError("n_ages must be positive")
        if np.any(age < 1) or np.any(age > self.n_ages):
            raise ValueError(f"ages must lie in 1..{self.n_ages}")
        S = len(s2e)
        if np.any(ship < 0) or np.any(ship >= S):
            raise ValueError("observation references an unknown ship index")
        counts = np.bincount(ship, minlength=S)
        if np.any(counts == 0):
            bad = np.flatnonzero(counts == 0)
            raise ValueError(f"ships without observations: {bad.tolist()}")
        E = self.n_types
        if E < 1 or np.any(s2e < 0) or np.any(s2e >= E):
            raise ValueError("ship_to_type references an unknown type index")

        if not self.ship_labels:
            object.__setattr__(
                self, "ship_labels",
                tuple(f"ship{i + 1:03d}" for i in range(S)))
        if not self.type_labels:
            object.__setattr__(
                self, "type_labels",
                tuple(f"type{i + 1}" for i in range(E)))
        if len(self.ship_labels) != S:
            raise ValueError("one label per ship required")
        if len(self.type_labels) != E:
            raise ValueError("one label per type required")

    @property
    def n_obs(self) -> int:
        return len(self.y)

    @property
    def n_ships(self) -> int:
        return len(self.ship_to_type)

    @property
    def n_types(self) -> int:
        if self.type_labels:
            return len(self.type_labels)
        return int(self.ship_to_type.max()) + 1

    def ship_index(self, ship) -> int:
        if isinstance(ship, str):
            try:
                return self.ship_labels.index(ship)
            except ValueError:
                raise KeyError(f"unknown ship {ship!r}") from None
        idx = int(ship)
        if not 0 <= idx < self.n_ships:
            raise IndexError(f"ship index {idx} out of range 0..{self.n_ships - 1}")
        return idx

    def type_index(self, engine_type) -> int:
        if isinstance(engine_type, str):
            try:
                return self.type_labels.index(engine_type)
            except ValueError:
                raise KeyError(f"unknown engine type {engine_type!r}") from None
        idx = int(engine_type)
        if not 0 <= idx < self.n_types:
            raise IndexError(f"type index {idx} out of range 0..{self.n_types - 1}")
        return idx

    def with_y(self, y) -> "FleetData":
        """Copy of the panel with a replacement response vector."""
        return FleetData(n_ages=self.n_ages, age=self.age, ship=self.ship,
                         ship_to_type=self.ship_to_type, y=y,
                         ship_labels=self.ship_labels,
                         type_labels=self.type_labels)

    def select_rows(self, mask) -> "FleetData":
        """Row subset; every ship must retain at least one observation."""
        mask = np.asarray(mask, dtype=bool)
        return FleetData(n_ages=self.n_ages, age=self.age[mask],
                         ship=self.ship[mask], ship_to_type=self.ship_to_type,
                         y=self.y[mask], ship_labels=self.ship_labels,
                         type_labels=self.type_labels)

    def without_ships(self, ships) -> "FleetData":
        """Drop whole ships (by label or index) and reindex the remainder."""
        drop = {self.ship_index(s) for s in ships}
        keep = [s for s in range(self.n_ships) if s not in drop]
        if not keep:
            raise ValueError("cannot drop every ship")
        remap = {old: new for new, old in enumerate(keep)}
        row_keep = np.isin(self.ship, keep)
        new_ship = np.array([remap[s] for s in self.ship[row_keep]],
                            dtype=np.int64)
        return FleetData(
            n_ages=self.n_ages, age=self.age[row_keep], ship=new_ship,
            ship_to_type=self.ship_to_type[keep], y=self.y[row_keep],
            ship_labels=tuple(self.ship_labels[s] for s in keep),
            type_labels=self.type_labels)


@dataclass
class ParameterVector:
    """One point in (constrained) parameter space."""

    alpha: np.ndarray          # (S,)
    w: np.ndarray              # (S, K)
    alpha_bar: np.ndarray      # (E,)
    w_bar: np.ndarray          # (E, K)
    sigma_alpha: float
    sigma_w: float
    sigma_alpha_bar: float
    sigma_w_bar: float
    sigma_y: float

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        self.alpha_bar = np.asarray(self.alpha_bar, dtype=float)
        self.w_bar = np.asarray(self.w_bar, dtype=float)
        for name in ("sigma_alpha", "sigma_w", "sigma_alpha_bar",
                     "sigma_w_bar", "sigma_y"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([self.sigma_alpha, self.sigma_w,
                         self.sigma_alpha_bar, self.sigma_w_bar,
                         self.sigma_y])


@dataclass(frozen=True)
class Hyperparameters:
    """Plug-in archetype means and fixed prior constants for the scales."""

    mu_alpha_bar: float
    mu_w_bar: np.ndarray
    gamma_shape: float = 10.0
    gamma_rate: float = 10.0
    expo_rate: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mu_w_bar",
                           _frozen(self.mu_w_bar, float))
        for name in ("gamma_shape", "gamma_rate", "expo_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


class HierarchicalModel:
    """Differentiable unnormalized log-posterior over the unconstrained vector.

    Precomputes the observation basis rows and the sparse aggregation
    operators used by the gradient, so repeated evaluations inside the
    sampler stay cheap.  Instances are read-only after construction and safe
    to evaluate concurrently.
    """

    SIGMA_NAMES = ("sigma_alpha", "sigma_w", "sigma_alpha_bar",
                   "sigma_w_bar", "sigma_y")

    def __init__(self, data: FleetData, bm: BasisMatrix,
                 hp: Hyperparameters, centered: bool = True):
        expected_ages = np.arange(1, data.n_ages + 1, dtype=float)
        if bm.n_ages != data.n_ages or not np.array_equal(bm.ages,
                                                          expected_ages):
            raise ValueError("basis must be tabulated on the age grid 1..T")
        if len(hp.mu_w_bar) != bm.n_basis:
            raise ValueError("mu_w_bar length must equal the basis size")
        self.data = data
        self.bm = bm
        self.hp = hp
        self.centered = centered
        self.S = data.n_ships
        self.E = data.n_types
        self.K = bm.n_basis
        self.N = data.n_obs
        self.T = data.n_ages

        self._Bobs = bm.values[data.age - 1]                    # (N, K)
        self._ship = data.ship
        self._s2e = data.ship_to_type
        self._y = data.y
        n, S, E = self.N, self.S, self.E
        ones_n = np.ones(n)
        self._P = sparse.csr_array(
            (ones_n, (data.ship, np.arange(n))), shape=(S, n))
        self._Q = sparse.csr_array(
            (np.ones(S), (self._s2e, np.arange(S))), shape=(E, S))

        S1, K = self.S, self.K
        self._i_alpha = slice(0, S1)
        self._i_w = slice(S1, S1 + S1 * K)
        self._i_ab = slice(S1 + S1 * K, S1 + S1 * K + E)
        self._i_wb = slice(S1 + S1 * K + E, S1 + S1 * K + E + E * K)
        self._i_log = slice(S1 + S1 * K + E + E * K, self.dim)

    @property
    def dim(self) -> int:
        return self.S * (self.K + 1) + self.E * (self.K + 1) + 5

    # ------------------------------------------------------------------
    # packing

    def pack(self, pv: ParameterVector) -> np.ndarray:
        """Flatten a ParameterVector into unconstrained coordinates."""
        if pv.alpha.shape != (self.S,) or pv.w.shape != (self.S, self.K):
            raise ValueError("ship-level blocks have wrong shape")
        if pv.alpha_bar.shape != (self.E,) or pv.w_bar.shape != (self.E, self.K):
            raise ValueError("type-level blocks have wrong shape")
        vec = np.empty(self.dim)
        vec[self._i_alpha] = pv.alpha
        vec[self._i_w] = pv.w.ravel()
        vec[self._i_ab] = pv.alpha_bar
        vec[self._i_wb] = pv.w_bar.ravel()
        vec[self._i_log] = np.log(pv.sigmas)
        return vec

    def unpack(self, vec: np.ndarray) -> ParameterVector:
        """Inverse of :meth:`pack` (expects the centered layout)."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}")
        sig = np.exp(vec[self._i_log])
        return ParameterVector(
            alpha=vec[self._i_alpha].copy(),
            w=vec[self._i_w].reshape(self.S, self.K).copy(),
            alpha_bar=vec[self._i_ab].copy(),
            w_bar=vec[self._i_wb].reshape(self.E, self.K).copy(),
            sigma_alpha=sig[0], sigma_w=sig[1], sigma_alpha_bar=sig[2],
            sigma_w_bar=sig[3], sigma_y=sig[4])

    def param_names(self) -> list[str]:
        names = [f"alpha[{s + 1}]" for s in range(self.S)]
        names += [f"w[{s + 1},{k + 1}]" for s in range(self.S)
                  for k in range(self.K)]
        names += [f"alpha_bar[{e + 1}]" for e in range(self.E)]
        names += [f"w_bar[{e + 1},{k + 1}]" for e in range(self.E)
                  for k in range(self.K)]
        names += list(self.SIGMA_NAMES)
        return names

    def to_centered(self, vec: np.ndarray) -> np.ndarray:
        """Map sampler coordinates to the plain (centered) layout.

        Non-centered coordinates hold standardized offsets at both the ship
        and type level; the type level is reconstructed first since ships
        hang off it.
        """
        if self.centered:
            return np.asarray(vec, dtype=float).copy()
        vec = np.asarray(vec, dtype=float)
        out = vec.copy()
        sa, sw, sab, swb = np.exp(vec[self._i_log][[0, 1, 2, 3]])
        ab = self.hp.mu_alpha_bar + sab * vec[self._i_ab]
        wb = (self.hp.mu_w_bar[None, :]
              + swb * vec[self._i_wb].reshape(self.E, self.K))
        z_a = vec[self._i_alpha]
        z_w = vec[self._i_w].reshape(self.S, self.K)
        out[self._i_ab] = ab
        out[self._i_wb] = wb.ravel()
        out[self._i_alpha] = ab[self._s2e] + sa * z_a
        out[self._i_w] = (wb[self._s2e] + sw * z_w).ravel()
        return out

    # ------------------------------------------------------------------
    # densities

    def _gamma_logpdf(self, s: float) -> float:
        a, b = self.hp.gamma_shape, self.hp.gamma_rate
        return a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(s) - b * s

    def _expo_logpdf(self, s: float) -> float:
        r = self.hp.expo_rate
        return math.log(r) - r * s

    def log_posterior(self, vec: np.ndarray) -> float:
        value, _ = self._evaluate(vec, want_grad=False)
        return value

    def grad_log_posterior(self, vec: np.ndarray) -> np.ndarray:
        _, grad = self._evaluate(vec, want_grad=True)
        return grad

    def logp_and_grad(self, vec: np.ndarray) -> tuple[float, np.ndarray]:
        return self._evaluate(vec, want_grad=True)

    def _evaluate(self, vec, want_grad: bool):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}")
        S, E, K, N = self.S, self.E, self.K, self.N
        hp = self.hp

        u = vec[self._i_log]
        if np.any(np.abs(u) > 300.0) or not np.all(np.isfinite(vec)):
            return -np.inf, (np.full(self.dim, np.nan) if want_grad else None)
        sa, sw, sab, swb, sy = np.exp(u)

        if self.centered:
            alpha = vec[self._i_alpha]
            w = vec[self._i_w].reshape(S, K)
            ab = vec[self._i_ab]
            wb = vec[self._i_wb].reshape(E, K)
        else:
            # standardized offsets at both levels; types reconstructed first
            z_a = vec[self._i_alpha]
            z_w = vec[self._i_w].reshape(S, K)
            zeta_a = vec[self._i_ab]
            zeta_w = vec[self._i_wb].reshape(E, K)
            ab = hp.mu_alpha_bar + sab * zeta_a
            wb = hp.mu_w_bar[None, :] + swb * zeta_w
            alpha = ab[self._s2e] + sa * z_a
            w = wb[self._s2e] + sw * z_w

        mu = alpha[self._ship] + np.einsum("nk,nk->n", self._Bobs,
                                           w[self._ship])
        r = self._y - mu
        rss_y = float(r @ r)
        lp = -N * math.log(sy) - 0.5 * rss_y / sy**2 - 0.5 * N * LOG_2PI

        if self.centered:
            da = alpha - ab[self._s2e]
            dw = w - wb[self._s2e]
            rss_a = float(da @ da)
            rss_w = float(np.sum(dw * dw))
            dab = ab - hp.mu_alpha_bar
            dwb = wb - hp.mu_w_bar[None, :]
            rss_ab = float(dab @ dab)
            rss_wb = float(np.sum(dwb * dwb))
            lp += -S * math.log(sa) - 0.5 * rss_a / sa**2 - 0.5 * S * LOG_2PI
            lp += (-S * K * math.log(sw) - 0.5 * rss_w / sw**2
                   - 0.5 * S * K * LOG_2PI)
            lp += (-E * math.log(sab) - 0.5 * rss_ab / sab**2
                   - 0.5 * E * LOG_2PI)
            lp += (-E * K * math.log(swb) - 0.5 * rss_wb / swb**2
                   - 0.5 * E * K * LOG_2PI)
        else:
            lp += -0.5 * float(z_a @ z_a) - 0.5 * S * LOG_2PI
            lp += -0.5 * float(np.sum(z_w * z_w)) - 0.5 * S * K * LOG_2PI
            lp += -0.5 * float(zeta_a @ zeta_a) - 0.5 * E * LOG_2PI
            lp += -0.5 * float(np.sum(zeta_w * zeta_w)) - 0.5 * E * K * LOG_2PI

        lp += self._gamma_logpdf(sa) + self._gamma_logpdf(sw)
        lp += (self._expo_logpdf(sab) + self._expo_logpdf(swb)
               + self._expo_logpdf(sy))
        lp += float(np.sum(u))  # Jacobian of the log-scale transform

        if not np.isfinite(lp):
            return -np.inf, (np.full(self.dim, np.nan) if want_grad else None)
        if not want_grad:
            return lp, None

        grad = np.empty(self.dim)
        g_mu = r / sy**2
        g_alpha_data = self._P @ g_mu                       # (S,)
        g_w_data = self._P @ (g_mu[:, None] * self._Bobs)   # (S, K)

        a_sh, b_rt = hp.gamma_shape, hp.gamma_rate
        if self.centered:
            grad[self._i_alpha] = g_alpha_data - da / sa**2
            grad[self._i_w] = (g_w_data - dw / sw**2).ravel()
            grad[self._i_ab] = (self._Q @ da) / sa**2 - dab / sab**2
            grad[self._i_wb] = ((self._Q @ dw) / sw**2
                                - dwb / swb**2).ravel()
            g_u_sa = -S + rss_a / sa**2 + (a_sh - 1.0) - b_rt * sa + 1.0
            g_u_sw = -S * K + rss_w / sw**2 + (a_sh - 1.0) - b_rt * sw + 1.0
            g_u_sab = -E + rss_ab / sab**2 - hp.expo_rate * sab + 1.0
            g_u_swb = -E * K + rss_wb / swb**2 - hp.expo_rate * swb + 1.0
        else:
            g_ab_data = self._Q @ g_alpha_data              # (E,)
            g_wb_data = self._Q @ g_w_data                  # (E, K)
            grad[self._i_alpha] = sa * g_alpha_data - z_a
            grad[self._i_w] = (sw * g_w_data - z_w).ravel()
            grad[self._i_ab] = sab * g_ab_data - zeta_a
            grad[self._i_wb] = (swb * g_wb_data - zeta_w).ravel()
            g_u_sa = (sa * float(z_a @ g_alpha_data)
                      + (a_sh - 1.0) - b_rt * sa + 1.0)
            g_u_sw = (sw * float(np.sum(z_w * g_w_data))
                      + (a_sh - 1.0) - b_rt * sw + 1.0)
            g_u_sab = (sab * float(zeta_a @ g_ab_data)
                       - hp.expo_rate * sab + 1.0)
            g_u_swb = (swb * float(np.sum(zeta_w * g_wb_data))
                       - hp.expo_rate * swb + 1.0)

        g_u_sy = -N + rss_y / sy**2 - hp.expo_rate * sy + 1.0
        grad[self._i_log] = [g_u_sa, g_u_sw, g_u_sab, g_u_swb, g_u_sy]
        return lp, grad

    def log_likelihood_per_obs(self, pv: ParameterVector) -> np.ndarray:
        """Per-observation Gaussian log-density at the fitted means."""
        mu = (pv.alpha[self._ship]
              + np.einsum("nk,nk->n", self._Bobs, pv.w[self._ship]))
        r = self._y - mu
        sy = pv.sigma_y
        return -0.5 * LOG_2PI - math.log(sy) - 0.5 * (r / sy) ** 2


# ----------------------------------------------------------------------
# free-function surface mirroring the model operations

def pack(pv: ParameterVector, data: FleetData, bm: BasisMatrix,
         hp: Hyperparameters) -> np.ndarray:
    return HierarchicalModel(data, bm, hp).pack(pv)


def unpack(vec: np.ndarray, data: FleetData, bm: BasisMatrix,
           hp: Hyperparameters) -> ParameterVector:
    return HierarchicalModel(data, bm, hp).unpack(vec)


def log_posterior(vec: np.ndarray, data: FleetData, bm: BasisMatrix,
                  hp: Hyperparameters) -> float:
    return HierarchicalModel(data, bm, hp).log_posterior(vec)


def grad_log_posterior(vec: np.ndarray, data: FleetData, bm: BasisMatrix,
                       hp: Hyperparameters) -> np.ndarray:
    return HierarchicalModel(data, bm, hp).grad_log_posterior(vec)


def log_likelihood_per_obs(pv: ParameterVector, data: FleetData,
                           bm: BasisMatrix) -> np.ndarray:
    hp = Hyperparameters(mu_alpha_bar=0.0, mu_w_bar=np.zeros(bm.n_basis))
    return HierarchicalModel(data, bm, hp).log_likelihood_per_obs(pv)
