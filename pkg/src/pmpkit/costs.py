"""Endpoint costs ``l(q0, qT)`` with their differentials."""

import numpy as np

from .geometry import CotangentVector, ManifoldPoint


class EndpointCost:
    """Base class: subclasses implement ``_value`` and ``_grad`` in ``self.chart``."""

    chart = None

    def _coords(self, q):
        if self.chart is None or q.chart == self.chart:
            return np.asarray(q.coords, float)
        return q.manifold.transition(q.chart, self.chart, q.coords)

    def _points(self, q0, qT):
        return self._coords(q0), self._coords(qT)

    def value(self, q0, qT):
        return float(self._value(*self._points(q0, qT)))

    def __call__(self, q0, qT):
        return self.value(q0, qT)

    def differential(self, q0, qT):
        """``(d_{q0} l, d_{qT} l)`` as covectors in the cost chart."""
        x0, xT = self._points(q0, qT)
        g0, gT = self._grad(x0, xT)
        chart = self.chart or q0.chart
        m = q0.manifold
        return (CotangentVector(ManifoldPoint(m, chart, x0), g0),
                CotangentVector(ManifoldPoint(m, self.chart or qT.chart, xT), gT))

    def _grad(self, x0, xT):
        # central differences when no analytic gradient is provided
        step = 1e-7
        g = []
        for x, other, first in ((x0, xT, True), (xT, x0, False)):
            d = np.zeros_like(x)
            for i in range(x.size):
                e = np.zeros_like(x)
                e[i] = step
                hi = self._value(x + e, other) if first else self._value(other, x + e)
                lo = self._value(x - e, other) if first else self._value(other, x - e)
                d[i] = (hi - lo) / (2 * step)
            g.append(d)
        return g[0], g[1]

    def describe(self):
        return type(self).__name__


class ZeroCost(EndpointCost):
    def _value(self, x0, xT):
        return 0.0

    def _grad(self, x0, xT):
        return np.zeros_like(x0), np.zeros_like(xT)


class LinearCost(EndpointCost):
    """``c0 . x0 + cT . xT`` in a chart."""

    def __init__(self, c0, cT, chart=None):
        self.c0 = np.asarray(c0, float)
        self.cT = np.asarray(cT, float)
        self.chart = chart

    def _value(self, x0, xT):
        return self.c0 @ x0 + self.cT @ xT

    def _grad(self, x0, xT):
        return self.c0.copy(), self.cT.copy()

    def describe(self):
        return f"linear c0={self.c0.tolist()} cT={self.cT.tolist()}"


class QuadraticCost(EndpointCost):
    """``w/2 |xT - goal|^2`` in a chart."""

    def __init__(self, goal, weight=1.0, chart=None):
        self.goal = np.asarray(goal, float)
        self.weight = float(weight)
        self.chart = chart

    def _value(self, x0, xT):
        d = xT - self.goal
        return 0.5 * self.weight * d @ d

    def _grad(self, x0, xT):
        return np.zeros_like(x0), self.weight * (xT - self.goal)

    def describe(self):
        return f"quadratic goal={self.goal.tolist()} weight={self.weight}"


class AmbientLinearCost(EndpointCost):
    """``sign * <embed(qT), target>`` for manifolds with an ambient evaluator."""

    def __init__(self, manifold, target, sign=-1.0, chart=None):
        self.manifold = manifold
        self.target = np.asarray(target, float)
        self.sign = float(sign)
        self.chart = chart or manifold.charts[0]

    def _value(self, x0, xT):
        return self.sign * self.manifold.to_ambient(self.chart, xT) @ self.target

    def _grad(self, x0, xT):
        if hasattr(self.manifold, "inverse_jacobian"):
            J = self.manifold.inverse_jacobian(self.chart, xT)
            return np.zeros_like(x0), self.sign * J.T @ self.target
        return super()._grad(x0, xT)

    def describe(self):
        return f"ambient linear target={self.target.tolist()} sign={self.sign:g}"


class FunctionCost(EndpointCost):
    """Cost from a coordinate function ``f(x0, xT)`` and optional gradient."""

    def __init__(self, f, grad=None, chart=None):
        self.f = f
        self.grad = grad
        self.chart = chart

    def _value(self, x0, xT):
        return self.f(x0, xT)

    def _grad(self, x0, xT):
        if self.grad is None:
            return super()._grad(x0, xT)
        g0, gT = self.grad(x0, xT)
        return np.asarray(g0, float), np.asarray(gT, float)


def reduced_cost(cost, rs):
    """Cost and gradient as functions of reduced endpoint coordinates.

    The Lagrangian chart is a translation on the tube, so gradients in base
    coordinates are gradients in reduced coordinates once pulled back to the
    base chart.
    """
    T = rs.horizon
    base = rs.lchart.base_chart

    def value(x0, xT):
        return cost.value(rs.from_reduced(0.0, x0), rs.from_reduced(T, xT))

    def grad(x0, xT):
        q0, qT = rs.from_reduced(0.0, x0), rs.from_reduced(T, xT)
        d0, dT = cost.differential(q0, qT)
        out = []
        for d in (d0, dT):
            if d.base.chart != base:
                J = d.base.manifold.transition_jacobian(base, d.base.chart,
                                                        d.base.manifold.transition(d.base.chart, base, d.base.coords))
                out.append(J.T @ d.components)
            else:
                out.append(np.array(d.components))
        return out[0], out[1]

    return value, grad
