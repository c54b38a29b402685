"""scikit-learn style wrapper around the residue pipeline.

``ResidueEstimator`` treats a list of scenarios as the samples. ``fit`` runs
the pipeline on each one; ``score`` compares the residue sums with expected
totals (the scenarios' own global integrals by default) and returns the
negated mean absolute error, so larger is better as scikit-learn expects.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .invariant import by_name
from .residue import assemble_report
from .transgression import QuadratureSpec

__all__ = ["ResidueEstimator"]


class ResidueEstimator(BaseEstimator):
    """Residues of a characteristic form for a batch of scenarios.

    Parameters
    ----------
    phi : str
        Name of the invariant polynomial, for example ``"c1"`` or ``"c2"``.
    quad_nodes : int
        Gauss-Legendre nodes for the transgression integral.
    eps : sequence of float or None
        Sphere radii; ``None`` uses each scenario's own list.
    tol : float
        Relative spread under which the per-radius values count as a plateau.
    """

    def __init__(self, phi: str = "c1", quad_nodes: int = 48, eps: Sequence[float] | None = None,
                 tol: float = 1e-2):
        self.phi = phi
        self.quad_nodes = quad_nodes
        self.eps = eps
        self.tol = tol

    def _run(self, scenario):
        phi = by_name(self.phi, scenario.F.rank)
        rep = assemble_report(scenario, phi, eps_list=self.eps, quadrature=QuadratureSpec(self.quad_nodes),
                              tol=self.tol)
        rep.details.pop("_transgression", None)
        rep.details.pop("_identity", None)
        return rep

    def fit(self, X, y=None):
        """Run the pipeline on every scenario in ``X``.

        Sets ``reports_``, ``residues_`` (one array per scenario),
        ``residue_sums_`` and ``lhs_``.
        """
        scenarios = list(X)
        if not scenarios:
            raise ValueError("fit needs at least one scenario")
        self.reports_ = [self._run(sc) for sc in scenarios]
        self.residues_ = [np.array([r.residue for r in rep.residues]) for rep in self.reports_]
        self.residue_sums_ = np.array([rep.residue_sum for rep in self.reports_])
        self.lhs_ = np.array([rep.lhs for rep in self.reports_])
        self.n_scenarios_ = len(scenarios)
        return self

    def predict(self, X):
        """Residue sums of the scenarios in ``X``."""
        return np.array([self._run(sc).residue_sum for sc in X])

    def score(self, X, y=None):
        """Negated mean absolute gap between residue sums and ``y``.

        Without ``y`` the gap is the global balance of each scenario, that is
        its integral of ``phi`` minus its residue sum.
        """
        reports = [self._run(sc) for sc in X]
        sums = np.array([rep.residue_sum for rep in reports])
        target = np.array([rep.lhs for rep in reports]) if y is None else np.asarray(y, dtype=float)
        if target.shape != sums.shape:
            raise ValueError("y must have one value per scenario")
        return -float(np.mean(np.abs(sums - target)))
