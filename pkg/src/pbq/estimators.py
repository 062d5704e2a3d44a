"""Estimator-style wrapper: fit on calibration activations, transform weights.

Keeps the split familiar from the wider ecosystem: hyperparameters in
__init__ verbatim (so get_params/set_params work), state learned in fit
with a trailing underscore, validation up front. fit consumes activation
samples while transform consumes a weight matrix, so there is deliberately
no fit_transform.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .config import QuantConfig
from .hessian import HessianState, accumulate, finalize
from .pbgptq import QuantReport, pbgptq_quantize, rtn_quantize
from .pbmatrix import PBMatrix, dequantize
from .tensorio import check_matrix

METHODS = ("rtn", "pbgptq")


class PartiallyBinarizedQuantizer(BaseEstimator):
    """Quantize weight matrices to signs plus a small high-precision set.

    Parameters mirror QuantConfig; method selects between independent
    rounding ("rtn") and column-compensated quantization ("pbgptq", the
    default, which requires fit).

    >>> q = PartiallyBinarizedQuantizer(salient_fraction=0.1).fit(X)
    >>> w_hat = q.transform(W)   # dense reconstruction
    >>> pb = q.quantize(W)       # compressed form
    """

    def __init__(
        self,
        method: str = "pbgptq",
        salient_fraction: float = 0.1,
        criterion: str = "magnitude",
        granularity: str = "element",
        group_size: int = 0,
        salient_bits: int = 8,
        damping_fraction: float = 0.01,
    ):
        self.method = method
        self.salient_fraction = salient_fraction
        self.criterion = criterion
        self.granularity = granularity
        self.group_size = group_size
        self.salient_bits = salient_bits
        self.damping_fraction = damping_fraction

    def _config(self) -> QuantConfig:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        return QuantConfig(
            salient_fraction=self.salient_fraction,
            criterion=self.criterion,
            granularity=self.granularity,
            group_size=self.group_size,
            salient_bits=self.salient_bits,
            damping_fraction=self.damping_fraction,
        )

    def fit(self, X, y=None):
        """Start a fresh calibration Hessian from activation samples.

        X: (n_samples, n_features), rows are samples, as everywhere in the
        estimator API; internally features index weight columns.
        """
        self._config()
        X = check_matrix(X, "X")
        self.state_ = HessianState(X.shape[1], self.damping_fraction)
        accumulate(self.state_, X.T)
        self.n_features_in_ = X.shape[1]
        return self

    def partial_fit(self, X, y=None):
        """Fold more activation samples into the calibration Hessian."""
        X = check_matrix(X, "X")
        if not hasattr(self, "state_"):
            return self.fit(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, fit saw {self.n_features_in_}"
            )
        accumulate(self.state_, X.T)
        return self

    def _require_fit(self, purpose: str):
        if not hasattr(self, "state_"):
            raise RuntimeError(f"{purpose} requires fit on calibration activations")

    def quantize(self, W) -> PBMatrix:
        """Compress a (n_outputs, n_features) weight matrix."""
        config = self._config()
        W = check_matrix(W, "W")
        if hasattr(self, "state_") and W.shape[1] != self.n_features_in_:
            raise ValueError(
                f"W has {W.shape[1]} columns, fit saw {self.n_features_in_} features"
            )
        if self.method == "pbgptq":
            self._require_fit("method='pbgptq'")
            pb, self.report_ = pbgptq_quantize(W, self.state_, config)
            return pb
        hinv = None
        if config.criterion == "hessian":
            self._require_fit("criterion='hessian'")
            hinv, _ = finalize(self.state_)
        return rtn_quantize(W, config, hinv)

    def transform(self, W) -> np.ndarray:
        """Quantize and return the dense reconstruction of W."""
        return dequantize(self.quantize(W))
