"""Good/bad classification of the holes of a rescaled realization.

At scale ``eps`` a point ``z`` with ``eps z`` in the physical window ``W``
carries the placed ball ``B_{s rho_z}(eps z)``, ``s = eps^(d/(d-2))``. With

    r_eps = ((s max rho)^(1/d) min 1) max eps^alpha,    eta = eps r_eps

the bad indices are

* ``J_b``: ``2 s rho_z >= eta`` (large holes),
* ``K_b``: nearest neighbour of ``z`` (in unscaled units) closer than ``2 r_eps``,
* ``I~_b``: the rest whose ball ``B_eta(eps z)`` meets some ``B_{2 s rho}(eps z1)``, ``z1`` in ``J_b``,

and the good ones are everything else in the window. A good hole gets the
cell radius

    d_z = min(eps, 1/2 min_{z1 != z} |eps z - eps z1|, dist(eps z, D_b))

where ``D_b`` is the union of ``B_{2 s rho}(eps z1)`` over bad ``z1`` (the
distance to an empty set is infinite). Nearest neighbours run over the
whole realization, not only the points in ``W``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError
from .geometry import Box
from .mpp import MppRealization, nearest_neighbor_distances

__all__ = [
    "GoodBadDecomposition",
    "good_bad_decompose",
    "check_invariants",
    "decomposition_diagnostics",
    "DIAGNOSTIC_COLUMNS",
]

# relative inflation of search radii so that KD-tree candidate sets are supersets
_SLACK = 1e-9


@dataclass
class GoodBadDecomposition:
    """Index sets (into the realization's point arrays) and cell radii.

    ``d`` and ``U_radius`` are aligned with ``I_g``; ``placed_radius`` is
    ``s * rho_z * radius_factor_z`` for every point of the realization.
    """

    epsilon: float
    alpha: float
    M: float
    dim: int
    scale: float
    r_eps: float
    eta_eps: float
    window: Box
    in_window: np.ndarray
    J_b: np.ndarray
    K_b: np.ndarray
    I_tilde_b: np.ndarray
    I_b: np.ndarray
    I_g: np.ndarray
    d: np.ndarray
    I_gM: np.ndarray
    placed_radius: np.ndarray
    centers: np.ndarray

    @property
    def U_radius(self) -> np.ndarray:
        return self.d

    def d_of(self, z: int) -> float:
        """Cell radius ``d_z`` of good index ``z``."""
        pos = np.searchsorted(self.I_g, z)
        if pos >= len(self.I_g) or self.I_g[pos] != z:
            raise DomainError(f"point {z} is not good")
        return float(self.d[pos])

    def summary(self):
        return {
            "epsilon": self.epsilon, "alpha": self.alpha, "M": self.M, "r_eps": self.r_eps,
            "eta_eps": self.eta_eps, "n_window": int(len(self.in_window)), "n_J_b": int(len(self.J_b)),
            "n_K_b": int(len(self.K_b)), "n_I_tilde_b": int(len(self.I_tilde_b)), "n_I_b": int(len(self.I_b)),
            "n_I_g": int(len(self.I_g)), "n_I_gM": int(len(self.I_gM)),
        }

    def to_json(self):
        out = self.summary()
        out["window"] = self.window.to_json()
        for name in ("in_window", "J_b", "K_b", "I_tilde_b", "I_b", "I_g", "I_gM"):
            out[name] = [int(v) for v in getattr(self, name)]
        out["d"] = [float(v) for v in self.d]
        return out


def _check_params(epsilon, alpha, M, d):
    if d < 3:
        raise DomainError(f"the decomposition needs d >= 3, got {d}")
    if not 0 < epsilon <= 1:
        raise DomainError(f"epsilon must lie in ]0, 1], got {epsilon!r}")
    if not 0 < alpha < d / (d - 2):
        raise DomainError(f"alpha must lie in ]0, {d / (d - 2):g}[, got {alpha!r}")
    if not M > 1:
        raise DomainError(f"M must exceed 1, got {M!r}")


def good_bad_decompose(real: MppRealization, epsilon: float, alpha: float = 1.0, M: float = 10.0,
                       window: Optional[Box] = None, radius_factor=None) -> GoodBadDecomposition:
    """Classify the holes of ``real`` at scale ``epsilon``.

    Parameters
    ----------
    real
        Realization in unscaled coordinates.
    epsilon, alpha, M
        Scale, exponent of the floor ``eps^alpha`` of ``r_eps``, truncation
        parameter of ``I_gM``.
    window
        Physical window ``W``; defaults to ``epsilon * real.window``.
    radius_factor
        Optional per-point (or scalar) multiplier of ``rho``, used for a
        modulated perforation ``V(eps z)``.
    """
    d = real.dim
    _check_params(epsilon, alpha, M, d)
    window = real.window.scaled(epsilon) if window is None else window
    s = epsilon ** (d / (d - 2))
    factor = np.broadcast_to(np.asarray(1.0 if radius_factor is None else radius_factor, dtype=float), (len(real),))
    if np.any(factor <= 0):
        raise DomainError("radius factors must be positive")
    rho = real.rho * factor
    centers = epsilon * real.positions
    placed = s * rho
    n = len(real)
    inw = window.contains(centers) if n else np.zeros(0, dtype=bool)

    rho_max = float(rho[inw].max()) if inw.any() else 0.0
    r_eps = max(min((s * rho_max) ** (1.0 / d), 1.0), epsilon ** alpha)
    eta = epsilon * r_eps
    nn = nearest_neighbor_distances(real.positions)

    J = inw & (2.0 * placed >= eta)
    K = inw & (nn < 2.0 * r_eps) & ~J
    cand = inw & ~J & ~K
    It = np.zeros(n, dtype=bool)
    j_idx = np.flatnonzero(J)
    c_idx = np.flatnonzero(cand)
    if len(j_idx) and len(c_idx):
        tree = cKDTree(centers[j_idx])
        reach = (eta + 2.0 * placed[j_idx].max()) * (1 + _SLACK)
        for ci, hits in zip(c_idx, tree.query_ball_point(centers[c_idx], reach)):
            if hits:
                jj = j_idx[hits]
                dist = np.linalg.norm(centers[jj] - centers[ci], axis=-1)
                # closed balls B_eta and B_{2 s rho} meet iff the distance is at most the sum of radii
                if np.any(dist <= eta + 2.0 * placed[jj]):
                    It[ci] = True
    bad = J | K | It
    good = inw & ~bad

    g_idx = np.flatnonzero(good)
    dz = np.minimum(epsilon, 0.5 * epsilon * nn[g_idx])
    b_idx = np.flatnonzero(bad)
    if len(b_idx) and len(g_idx):
        tree = cKDTree(centers[b_idx])
        big = 2.0 * placed[b_idx].max()
        reach = (epsilon + big) * (1 + _SLACK)
        for k, hits in enumerate(tree.query_ball_point(centers[g_idx], reach)):
            if hits:
                bb = b_idx[hits]
                gap = np.linalg.norm(centers[bb] - centers[g_idx[k]], axis=-1) - 2.0 * placed[bb]
                dz[k] = min(dz[k], max(float(gap.min()), 0.0))
    gM = g_idx[dz >= epsilon / M]
    return GoodBadDecomposition(
        epsilon=float(epsilon), alpha=float(alpha), M=float(M), dim=d, scale=s, r_eps=float(r_eps),
        eta_eps=float(eta), window=window, in_window=np.flatnonzero(inw), J_b=j_idx, K_b=np.flatnonzero(K),
        I_tilde_b=np.flatnonzero(It), I_b=b_idx, I_g=g_idx, d=np.asarray(dz, dtype=float), I_gM=gM,
        placed_radius=placed, centers=centers,
    )


def check_invariants(dec: GoodBadDecomposition) -> dict[str, bool]:
    """Exact checks of the structural guarantees of a decomposition.

    * ``partition``: ``I_g`` and ``I_b`` split the in-window points.
    * ``disjoint``: closed good balls ``B_{s rho}(eps z)`` are pairwise disjoint.
    * ``separation``: ``dist(H_g, D_b) >= eta / 2``.
    * ``d_bounds``: ``2 s rho_z <= d_z <= eps`` for every good ``z``.
    """
    inw = set(dec.in_window.tolist())
    good = set(dec.I_g.tolist())
    bad = set(dec.I_b.tolist())
    union = set(dec.J_b.tolist()) | set(dec.K_b.tolist()) | set(dec.I_tilde_b.tolist())
    partition = (good | bad) == inw and not (good & bad) and union == bad

    c = dec.centers
    rad = dec.placed_radius
    g = dec.I_g
    disjoint = True
    if len(g) > 1:
        tree = cKDTree(c[g])
        pairs = tree.query_pairs(2.0 * rad[g].max() * (1 + _SLACK) + 1e-300, output_type="ndarray")
        if len(pairs):
            a, b = g[pairs[:, 0]], g[pairs[:, 1]]
            dist = np.linalg.norm(c[a] - c[b], axis=-1)
            disjoint = bool(np.all(dist > rad[a] + rad[b]))

    separation = True
    b = dec.I_b
    if len(g) and len(b):
        tree = cKDTree(c[b])
        reach = (0.5 * dec.eta_eps + rad[g].max() + 2.0 * rad[b].max()) * (1 + _SLACK)
        for k, hits in enumerate(tree.query_ball_point(c[g], reach)):
            if hits:
                bb = b[hits]
                gap = np.linalg.norm(c[bb] - c[g[k]], axis=-1) - rad[g[k]] - 2.0 * rad[bb]
                if np.any(gap < 0.5 * dec.eta_eps):
                    separation = False
                    break

    d_bounds = bool(np.all(2.0 * rad[g] <= dec.d) and np.all(dec.d <= dec.epsilon)) if len(g) else True
    return {"partition": bool(partition), "disjoint": disjoint, "separation": separation, "d_bounds": d_bounds}


DIAGNOSTIC_COLUMNS = ("epsilon", "r_eps", "eps_d_n_bad", "eps_d_n_thinned_not_gM", "partition", "disjoint",
                      "separation", "d_bounds")


def decomposition_diagnostics(real: MppRealization, epsilons: Sequence[float], alpha: float = 1.0,
                              M: float = 10.0, window: Optional[Box] = None) -> list[dict]:
    """One row per ``eps``: ``r_eps``, ``eps^d #I_b``, ``eps^d #(T^{2/M} cap eps^-1 W minus I_gM)`` and the invariant checks.

    ``window`` is the physical window ``W``; by default the realization's
    window scaled by the smallest ``eps``, so every row sees the same ``W``
    and every ``eps^-1 W`` lies inside the sampled window.
    """
    eps_list = [float(e) for e in epsilons]
    if not eps_list:
        return []
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise DomainError("epsilons must be strictly decreasing")
    window = real.window.scaled(eps_list[-1]) if window is None else window
    far = nearest_neighbor_distances(real.positions) >= 2.0 / M
    rows = []
    for eps in eps_list:
        dec = good_bad_decompose(real, eps, alpha, M, window=window)
        d = dec.dim
        in_w = np.zeros(len(real), dtype=bool)
        in_w[dec.in_window] = True
        in_gm = np.zeros(len(real), dtype=bool)
        in_gm[dec.I_gM] = True
        row = {
            "epsilon": eps,
            "r_eps": dec.r_eps,
            "eps_d_n_bad": eps**d * len(dec.I_b),
            "eps_d_n_thinned_not_gM": eps**d * int(np.count_nonzero(far & in_w & ~in_gm)),
        }
        row.update(check_invariants(dec))
        rows.append(row)
    return rows
