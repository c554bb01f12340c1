"""Conformal deformation state for g = e^{-2u} g0.

The deformed Schouten data in the g0-orthonormal frame is

    W(u) = Hess u + du (x) du - (|grad u|^2 / 2) g0 + S_{g0},

and sigma_k(g) = e^{2ku} sigma_k(W(u)). Everything downstream (volume,
geometric mean r_k, the scale-normalized sigma_k integral, Harnack bound,
cone checks) lives here. Field-scale sigma evaluations use the power-sum
route in fieldalg; the eigenvalue route in symfun is kept as the
independent cross-check in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fieldalg
from .errors import ConeViolationError, ConfigurationError
from .symfun import ConeLabel


@dataclass(frozen=True)
class ConeReport:
    """Worst-node summary of the pointwise Gamma_k+ test."""

    label: ConeLabel
    node: tuple or None
    value: float or None
    n_violations: int


def assemble_W(geom, u):
    """W(u) in the orthonormal frame, (..., n, n) over the grid."""
    u = np.asarray(u, dtype=float)
    n = geom.grid.ndim
    jet = geom.scalar_jet(u)
    hess = geom.covariant_hessian(u, jet=jet)
    grad, norm2 = geom.gradient_and_norm(u, parts=jet[0])
    w = hess + grad[..., :, None] * grad[..., None, :]
    w = w - 0.5 * norm2[..., None, None] * np.eye(n)
    return w + geom.schouten0


class ConformalState:
    """u plus lazily cached derived fields, invalidated on every update."""

    def __init__(self, geom, u, k):
        n = geom.grid.ndim
        if not 1 <= k <= n:
            raise ConfigurationError(f"curvature order k={k} outside 1..{n}")
        self.geometry = geom
        self.k = k
        self._cache = {}
        self.update_u(u)

    def update_u(self, u):
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)):
            raise ConfigurationError("conformal factor contains non-finite values")
        self.u = np.ascontiguousarray(np.broadcast_to(u, self.geometry.grid.shape),
                                      dtype=float)
        self._cache.clear()

    # ------------------------------------------------------------ assembly

    def _assembled(self):
        if "w" not in self._cache:
            geom = self.geometry
            jet = geom.scalar_jet(self.u)
            hess = geom.covariant_hessian(self.u, jet=jet)
            grad, norm2 = geom.gradient_and_norm(self.u, parts=jet[0])
            n = geom.grid.ndim
            w = hess + grad[..., :, None] * grad[..., None, :]
            w = w - 0.5 * norm2[..., None, None] * np.eye(n)
            w = w + geom.schouten0
            self._cache.update(w=w, grad=grad, norm2=norm2)
        return self._cache["w"]

    def w_field(self):
        return self._assembled()

    def grad_norm2(self):
        self._assembled()
        return self._cache["norm2"]

    def sigma_w_table(self):
        """Elementary symmetric functions e_0..e_k of W, (..., k+1)."""
        if "etable" not in self._cache:
            self._cache["etable"] = fieldalg.sigma_batch(self._assembled(), self.k)
        return self._cache["etable"]

    # ---------------------------------------------------------- cone tests

    def cone_report(self):
        etable = self.sigma_w_table()
        worst = fieldalg.worst_violation(etable, self.k)
        if worst is None:
            return ConeReport(ConeLabel(k=self.k, inside=True), None, None, 0)
        j, node, value = worst
        n_bad = int(np.size(self.u) - np.count_nonzero(
            fieldalg.cone_mask(etable, self.k)))
        return ConeReport(ConeLabel(k=self.k, inside=False, first_failing_j=j),
                          node, value, n_bad)

    def require_admissible(self):
        report = self.cone_report()
        if not report.label.inside:
            raise ConeViolationError(
                f"W(u) left the Gamma_{self.k}+ cone: sigma_"
                f"{report.label.first_failing_j} = {report.value:.6g} at node "
                f"{report.node} ({report.n_violations} nodes violating)",
                label=report.label, node=report.node)
        return report

    # ------------------------------------------------------- sigma of g

    def log_sigma_field(self):
        """log sigma_k(g) = 2k u + log sigma_k(W); requires admissibility."""
        if "log_sigma" not in self._cache:
            self.require_admissible()
            ek = self.sigma_w_table()[..., self.k]
            self._cache["log_sigma"] = 2.0 * self.k * self.u + np.log(ek)
        return self._cache["log_sigma"]

    def sigma_field(self):
        return np.exp(self.log_sigma_field())

    def min_sigma(self):
        return float(np.min(self.sigma_field()))

    def newton_field(self):
        """T_{k-1}(W), the gradient of sigma_k at W; drives CFL bounds."""
        if "newton" not in self._cache:
            etable = self.sigma_w_table()
            self._cache["newton"] = fieldalg.newton_transform_batch(
                self._assembled(), etable, self.k - 1)
        return self._cache["newton"]

    # ------------------------------------------------------- global scalars

    def conformal_weight(self):
        """Density of dvol(g) against dvol(g0): e^{-n u}."""
        if "weight" not in self._cache:
            n = self.geometry.grid.ndim
            self._cache["weight"] = np.exp(-float(n) * self.u)
        return self._cache["weight"]

    def volume(self):
        return self.geometry.integrate(np.ones((1,) * self.geometry.grid.ndim),
                                       weight=self.conformal_weight())

    def r_k(self):
        """Geometric mean of sigma_k(g) under dvol(g)."""
        log_sigma = self.log_sigma_field()
        weight = self.conformal_weight()
        mean = self.geometry.integrate(log_sigma, weight=weight) / self.volume()
        return float(np.exp(mean))

    def F_k(self):
        """Scale-normalized integral vol^{-(n-2k)/n} * int sigma_k dvol(g)."""
        n = self.geometry.grid.ndim
        total = self.geometry.integrate(self.sigma_field(),
                                        weight=self.conformal_weight())
        return self.volume() ** (-(n - 2.0 * self.k) / n) * total

    def harnack_quantity(self):
        """sup |grad u|_{g0}; equals sup |grad v|/v for v = e^u."""
        return float(np.sqrt(np.max(self.grad_norm2())))
