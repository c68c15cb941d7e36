"""Problem definitions: system, endpoint cost, endpoint set and initial guess."""

from dataclasses import dataclass, field

import numpy as np

from .dynamics import Control, integrate


@dataclass(eq=False)
class ProblemDef:
    """Minimize ``cost(q(0), q(T))`` subject to ``(q(0), q(T))`` in ``endpoint_set``.

    ``start`` and ``guess`` form the initial pair; ``oracle`` holds any
    known-solution data shipped with a catalog entry.
    """

    system: object
    cost: object
    endpoint_set: object
    start: object
    guess: Control
    tol: float = 1e-9
    residual_tol: float = 1e-6
    seed: int = 0
    name: str = "problem"
    oracle: dict = field(default_factory=dict)

    @property
    def horizon(self):
        return self.system.horizon

    @property
    def grid(self):
        return self.guess.grid

    def simulate(self, u=None, tol=None):
        return integrate(self.system, self.start, self.guess if u is None else u, tol or self.tol)

    def cost_of(self, u):
        traj = self.simulate(u)
        return self.cost.value(traj.start, traj.end)

    def feasibility(self, traj):
        """Distance of the endpoint pair to ``S`` in the set's chart."""
        chart = self.endpoint_set.chart or traj.pieces[0].chart
        x0 = traj.start.moved(chart).coords if traj.start.chart != chart else traj.start.coords
        xT = traj.end.moved(chart).coords if traj.end.chart != chart else traj.end.coords
        return self.endpoint_set.distance(np.asarray(x0), np.asarray(xT))
