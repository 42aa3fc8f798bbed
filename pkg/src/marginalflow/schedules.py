"""Time schedules with analytic derivatives.

A schedule maps a scalar time to a scalar, vector or matrix value. The
piecewise-polynomial kinds are thin wrappers around
:class:`scipy.interpolate.PPoly`, so derivatives are exact.
"""

import numpy as np
from scipy.interpolate import CubicSpline, PPoly

from .errors import ConfigError, ConstructionError


class Schedule:
    """Value/derivative pair ``t -> (f(t), f'(t))``.

    Use the classmethods rather than the constructor.
    """

    def __init__(self, value_fn, deriv_fn, shape, description):
        self._value = value_fn
        self._deriv = deriv_fn
        self.shape = tuple(shape)
        self.description = description

    def __call__(self, t):
        return self.value(t)

    def value(self, t):
        return np.asarray(self._value(float(t)), dtype=float).reshape(self.shape)

    def deriv(self, t):
        return np.asarray(self._deriv(float(t)), dtype=float).reshape(self.shape)

    def __repr__(self):
        return f"Schedule({self.description}, shape={self.shape})"

    @classmethod
    def constant(cls, value):
        value = np.array(value, dtype=float)
        zero = np.zeros_like(value)
        return cls(lambda t: value, lambda t: zero, value.shape,
                   {"kind": "constant", "value": value.tolist()})

    @classmethod
    def polynomial(cls, coeffs):
        """Global polynomial ``sum_k coeffs[k] * t**k`` (ascending powers)."""
        coeffs = np.array(coeffs, dtype=float)
        if coeffs.ndim == 0 or coeffs.shape[0] == 0:
            raise ConstructionError("polynomial schedule needs at least one coefficient")
        shape = coeffs.shape[1:]
        # PPoly wants descending powers, one interval; extrapolation covers all t
        flat = coeffs.reshape(coeffs.shape[0], -1)[::-1]
        pp = PPoly(flat[:, None, :], np.array([0.0, 1.0]), extrapolate=True)
        dpp = pp.derivative() if coeffs.shape[0] > 1 else None
        zero = np.zeros(shape)
        deriv = (lambda t: dpp(t)) if dpp is not None else (lambda t: zero)
        return cls(lambda t: pp(t), deriv, shape,
                   {"kind": "poly", "coeffs": coeffs.tolist()})

    @classmethod
    def spline(cls, knots, values):
        """Cubic spline through ``(knots[i], values[i])`` (not-a-knot ends)."""
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots.ndim != 1 or len(knots) < 2 or np.any(np.diff(knots) <= 0):
            raise ConstructionError("spline knots must be strictly increasing, len >= 2")
        if values.shape[0] != len(knots):
            raise ConstructionError("spline values must match knots")
        shape = values.shape[1:]
        cs = CubicSpline(knots, values.reshape(len(knots), -1), axis=0, extrapolate=True)
        dcs = cs.derivative()
        return cls(lambda t: cs(t), lambda t: dcs(t), shape,
                   {"kind": "spline", "knots": knots.tolist(), "values": values.tolist()})

    @classmethod
    def power(cls, scale=1.0, exponent=1.0, shift=0.0):
        """Scalar ``scale * (t + shift) ** exponent``.

        Not polynomial in general (e.g. ``sqrt(t)``); evaluation where the base
        is non-positive and the exponent is fractional yields nan, which the
        density layer rejects.
        """
        a, p, b = float(scale), float(exponent), float(shift)

        def value(t):
            return a * (t + b) ** p if t + b > 0 or p == int(p) else np.nan

        def deriv(t):
            return a * p * (t + b) ** (p - 1) if t + b > 0 or p == int(p) else np.nan

        return cls(value, deriv, (),
                   {"kind": "power", "scale": a, "exponent": p, "shift": b})

    @classmethod
    def from_callables(cls, value_fn, deriv_fn, shape=()):
        return cls(value_fn, deriv_fn, shape, {"kind": "callable"})

    @classmethod
    def from_config(cls, cfg, shape=None):
        """Build from a config object or a bare constant value."""
        if not isinstance(cfg, dict):
            sched = cls.constant(cfg)
        else:
            kind = cfg.get("kind", "constant")
            try:
                if kind == "constant":
                    sched = cls.constant(cfg["value"])
                elif kind == "poly":
                    sched = cls.polynomial(cfg["coeffs"])
                elif kind == "spline":
                    sched = cls.spline(cfg["knots"], cfg["values"])
                elif kind == "power":
                    sched = cls.power(cfg.get("scale", 1.0), cfg.get("exponent", 1.0),
                                      cfg.get("shift", 0.0))
                else:
                    raise ConfigError(f"unknown schedule kind {kind!r}", field="kind")
            except KeyError as exc:
                raise ConfigError(f"schedule of kind {kind!r} is missing {exc}",
                                  field=str(exc.args[0]), code="CONFIG_MISSING") from None
        if shape is not None and sched.shape != tuple(shape):
            raise ConfigError(f"schedule has shape {sched.shape}, expected {tuple(shape)}")
        return sched
