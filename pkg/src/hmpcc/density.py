"""Gaussian-mixture likelihood map over the workspace.

The mixture is deliberately unnormalized: coverage effectiveness divides by
the total mass over the workspace, so only relative weights matter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GaussianComponent:
    weight: float
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(2)
        self.covariance = np.asarray(self.covariance, dtype=float).reshape(2, 2)
        if self.weight < 0:
            raise ValueError(f"component weight must be >= 0, got {self.weight}")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        eigvals = np.linalg.eigvalsh(self.covariance)
        if np.any(eigvals <= 0):
            raise ValueError(f"covariance must be positive definite, eigenvalues {eigvals}")


class GaussianMixture:
    """Weighted sum of 2-D Gaussian pdfs; callable on (2,) or (N, 2) points."""

    def __init__(self, components):
        components = list(components)
        if not components:
            raise ValueError("mixture needs at least one component")
        self.components = components
        self._weights = np.array([c.weight for c in components])
        self._means = np.stack([c.mean for c in components])
        self._inv_covs = np.stack([np.linalg.inv(c.covariance) for c in components])
        dets = np.array([np.linalg.det(c.covariance) for c in components])
        self._norms = self._weights / (2.0 * np.pi * np.sqrt(dets))

    def __call__(self, points: np.ndarray) -> np.ndarray | float:
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        diff = pts[:, None, :] - self._means[None, :, :]  # (N, C, 2)
        quad = np.einsum("ncij,ncj->nci", self._inv_covs[None], diff)
        quad = np.einsum("nci,nci->nc", diff, quad)
        vals = (self._norms[None, :] * np.exp(-0.5 * quad)).sum(axis=1)
        return float(vals[0]) if single else vals


def random_gmm(seed: int, k: int, bounds, sigma_range=(0.5, 1.5),
               weight_range=(0.5, 1.0)) -> GaussianMixture:
    """Seeded mixture with isotropic components.

    Means are uniform in the rectangle ``bounds = (xmin, xmax, ymin, ymax)``,
    standard deviations uniform in ``sigma_range``, weights in ``weight_range``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    xmin, xmax, ymin, ymax = bounds
    rng = np.random.default_rng(seed)
    comps = []
    for _ in range(k):
        mean = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        sigma = rng.uniform(*sigma_range)
        weight = rng.uniform(*weight_range)
        comps.append(GaussianComponent(weight, mean, sigma ** 2 * np.eye(2)))
    return GaussianMixture(comps)
