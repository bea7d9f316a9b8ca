"""
scikit-learn style facade over the two optimization problems.

``fit`` solves for the intensities (there is no training data: the target
field is part of the configuration, so ``X`` and ``y`` are ignored).
``transform`` maps times to interpolated intensities, ``predict`` maps rows
``(t, x, y)`` to the Kelvin force.  Hyper-parameters follow the usual
``get_params``/``set_params`` protocol.
"""

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import pipeline
from .config import load_preset
from .field import kelvin_force


class _ForceDesigner(BaseEstimator):
    _problem_key = None

    def _config(self):
        cfg = load_preset(self.preset)
        opts = dataclasses.replace(cfg.optimizer, tol=self.tol, max_iters=self.max_iters,
                                   memory=self.memory)
        cfg.optimizer = opts
        cfg.warm_start = self.warm_start
        spec = dict(getattr(cfg, self._problem_key))
        for k, v in self._overrides().items():
            if v is not None:
                spec[k] = np.broadcast_to(v, spec[k].shape).copy() if isinstance(spec[k], np.ndarray) else v
        setattr(cfg, self._problem_key, spec)
        return cfg

    def _set_fitted(self, res):
        self.intensities_ = res.path.values.copy()
        self.grid_ = res.path.grid.copy()
        self.cost_ = res.report.cost
        self.n_iter_ = res.report.iterations
        self.converged_ = res.report.converged
        self.residual_ = res.report.residual
        self.report_ = res.report
        self.dipoles_ = res.problem.dipoles

    def transform(self, X):
        """Intensities at the parameters in the first column of ``X``: ``(n, n_p)``."""
        check_is_fitted(self, "intensities_")
        X = check_array(X, ensure_2d=False).reshape(len(X), -1)
        p = X[:, 0]
        if np.any(p < self.grid_[0] - 1e-12) or np.any(p > self.grid_[-1] + 1e-12):
            raise ValueError("parameters outside the optimized horizon")
        return np.stack([np.interp(p, self.grid_, self.intensities_[:, j])
                         for j in range(self.intensities_.shape[1])], axis=1)

    def predict(self, X):
        """Kelvin force at rows ``(param, x, y)``: ``(n, 2)``."""
        X = check_array(X)
        if X.shape[1] != 3:
            raise ValueError(f"expected rows (param, x, y), got {X.shape[1]} columns")
        alpha = self.transform(X[:, :1])
        return np.stack([kelvin_force(self.dipoles_, x, a) for x, a in zip(X[:, 1:], alpha)])


class FixedTimeForceDesigner(_ForceDesigner):
    """Intensities whose force tracks the preset's target over ``[0, T]``."""

    _problem_key = "problem1"

    def __init__(self, preset="paper_p1_f1", n_steps=None, lam=None, lower=None, upper=None,
                 warm_start="algorithm", tol=1e-5, max_iters=50000, memory=10):
        self.preset = preset
        self.n_steps = n_steps
        self.lam = lam
        self.lower = lower
        self.upper = upper
        self.warm_start = warm_start
        self.tol = tol
        self.max_iters = max_iters
        self.memory = memory

    def _overrides(self):
        return dict(N=self.n_steps, lam=self.lam, lower=self.lower, upper=self.upper)

    def fit(self, X=None, y=None):
        cfg = self._config()
        res = pipeline.solve_p1(cfg)
        self._set_fitted(res)
        self.parts_ = res.problem.parts(res.path)
        return self


class MinimumTimeForceDesigner(_ForceDesigner):
    """Intensities and speed profile for the arc-length minimum-time problem."""

    _problem_key = "problem2"

    def __init__(self, preset="paper_p2", n_steps=None, lam=None, eta=None, beta=None,
                 warm_start="algorithm", tol=1e-5, max_iters=50000, memory=10):
        self.preset = preset
        self.n_steps = n_steps
        self.lam = lam
        self.eta = eta
        self.beta = beta
        self.warm_start = warm_start
        self.tol = tol
        self.max_iters = max_iters
        self.memory = memory

    def _overrides(self):
        return dict(M=self.n_steps, lam=self.lam, eta=self.eta, beta=self.beta)

    def fit(self, X=None, y=None):
        cfg = self._config()
        res = pipeline.solve_p2(cfg)
        self._set_fitted(res)
        self.speed_ = res.path.speed.copy()
        self.final_time_ = res.report.final_time
        self.node_times_ = res.report.node_times
        self.parts_ = res.problem.parts(res.path)
        return self
