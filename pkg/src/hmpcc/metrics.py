"""Coverage quality metrics and batch aggregation.

Metrics are evaluated centrally on a world-anchored midpoint grid over the
workspace.  The fast paths use the nearest-robot formulation; the partition
formulations are kept as independent cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Environment, polygon_grid_points, unlimited_voronoi_partition


class MetricsGrid:
    """Precomputed density samples over the workspace for repeated evaluation."""

    def __init__(self, env: Environment, density, grid_res: float):
        self.env = env
        self.grid_res = grid_res
        self.points = polygon_grid_points(env.polygon, grid_res)
        self.phi = np.asarray(density(self.points), dtype=float)
        self.cell_weight = grid_res * grid_res
        self.total_mass = self.cell_weight * float(np.sum(self.phi))

    def _min_sq_dist(self, positions):
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        d = self.points[:, None, :] - pos[None, :, :]
        return np.min(np.einsum("nkj,nkj->nk", d, d), axis=1)

    def coverage_H(self, positions) -> float:
        """Unlimited coverage function: -integral of min_i |q-p_i|^2 phi."""
        return -self.cell_weight * float(self._min_sq_dist(positions) @ self.phi)

    def coverage_Hr(self, positions, r: float) -> float:
        """Range-saturated coverage: squared distances capped at r^2."""
        sat = np.minimum(self._min_sq_dist(positions), r * r)
        return -self.cell_weight * float(sat @ self.phi)

    def coverage_E(self, positions, r: float) -> float:
        """Fraction of density mass within sensing radius of some robot."""
        if self.total_mass <= 0.0:
            return 0.0
        covered = self._min_sq_dist(positions) <= r * r
        return self.cell_weight * float(self.phi[covered].sum()) / self.total_mass


def coverage_H(positions, env, density, grid_res: float) -> float:
    return MetricsGrid(env, density, grid_res).coverage_H(positions)


def coverage_Hr(positions, env, density, r: float, grid_res: float) -> float:
    return MetricsGrid(env, density, grid_res).coverage_Hr(positions, r)


def coverage_E(positions, env, density, r: float, grid_res: float) -> float:
    return MetricsGrid(env, density, grid_res).coverage_E(positions, r)


def coverage_H_partition(positions, env, density, grid_res: float) -> float:
    """Cross-check formulation: sum of per-cell quadratures over the bounded
    Voronoi partition (should match :func:`coverage_H` on the same grid)."""
    total = 0.0
    for cell in unlimited_voronoi_partition(positions, env):
        pts = polygon_grid_points(cell.polygon, grid_res)
        if len(pts) == 0:
            continue
        phi = np.asarray(density(pts), dtype=float)
        d2 = np.einsum("ij,ij->i", pts - cell.site, pts - cell.site)
        total -= grid_res * grid_res * float(d2 @ phi)
    return total


def coverage_Hr_partition(positions, env, density, r: float, grid_res: float) -> float:
    """Cross-check: per-cell quadrature with the saturated integrand."""
    total = 0.0
    for cell in unlimited_voronoi_partition(positions, env):
        pts = polygon_grid_points(cell.polygon, grid_res)
        if len(pts) == 0:
            continue
        phi = np.asarray(density(pts), dtype=float)
        d2 = np.minimum(np.einsum("ij,ij->i", pts - cell.site, pts - cell.site), r * r)
        total -= grid_res * grid_res * float(d2 @ phi)
    return total


@dataclass
class AggregateSummary:
    times: np.ndarray
    mean_H: np.ndarray
    std_H: np.ndarray
    mean_Hr: np.ndarray
    std_Hr: np.ndarray
    mean_E: np.ndarray
    std_E: np.ndarray
    success_rate: float
    n_runs: int
    n_success: int
    final_E: float | None       # mean over successful runs; None if < min_success
    final_H: float | None
    final_E_std: float | None
    final_H_std: float | None


def aggregate(runs, min_success: int = 3) -> AggregateSummary:
    """Per-step mean/std curves plus success rate and final-value statistics.

    Final metric values follow the evaluation convention of reporting them only
    when at least ``min_success`` runs finished without a failure event.
    """
    if not runs:
        raise ValueError("need at least one run")
    times = np.asarray(runs[0].times)
    H = np.stack([np.asarray(r.metric_H) for r in runs])
    Hr = np.stack([np.asarray(r.metric_Hr) for r in runs])
    E = np.stack([np.asarray(r.metric_E) for r in runs])
    ok = np.array([r.outcome.kind == "success" for r in runs])
    n_success = int(ok.sum())
    final_E = final_H = final_E_std = final_H_std = None
    if n_success >= min_success:
        final_E = float(np.mean(E[ok, -1]))
        final_H = float(np.mean(H[ok, -1]))
        final_E_std = float(np.std(E[ok, -1], ddof=1)) if n_success > 1 else 0.0
        final_H_std = float(np.std(H[ok, -1], ddof=1)) if n_success > 1 else 0.0
    ddof = 1 if len(runs) > 1 else 0
    return AggregateSummary(
        times=times,
        mean_H=H.mean(axis=0), std_H=H.std(axis=0, ddof=ddof),
        mean_Hr=Hr.mean(axis=0), std_Hr=Hr.std(axis=0, ddof=ddof),
        mean_E=E.mean(axis=0), std_E=E.std(axis=0, ddof=ddof),
        success_rate=float(ok.mean()), n_runs=len(runs), n_success=n_success,
        final_E=final_E, final_H=final_H, final_E_std=final_E_std, final_H_std=final_H_std)
