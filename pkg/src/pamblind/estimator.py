"""scikit-learn style wrapper around blind and supervised equalizer training."""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .evaluation import AlignmentFailed, DIVERGED_BER, align, measure_ber
from .networks import make_equalizer, make_estimator
from .rng import child_seed
from .training import MODES, TrainingConfig, hard_decide, train


def _samples(X):
    X = np.asarray(getattr(X, "values", X), dtype=np.float64)
    if X.ndim == 2 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 1:
        raise ValueError("X must be a 1-D sequence of 2-sps received samples (or an (n, 1) column)")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite samples")
    return X


class BlindEqualizer(TransformerMixin, BaseEstimator):
    """Equalizer trained from received samples alone (``mode="blind"``) or against known symbols.

    ``fit(X)`` learns from the normalized 2-sps received sequence ``X``;
    in supervised mode ``y`` holds the transmitted symbols. ``transform``
    returns soft symbol estimates, ``predict`` hard PAM4 decisions. Both
    start at symbol ``symbol_offset_`` of the input.
    """

    def __init__(self, topology="cnn-small", channel_estimator="netest", mode="blind",
                 iterations=7600, beta0=0.2, a_beta=1.5, n_beta=500, lr0=2e-3, a_lr=0.7,
                 n_lr=1000, grad_mode="straight-through", random_state=0):
        self.topology = topology
        self.channel_estimator = channel_estimator
        self.mode = mode
        self.iterations = iterations
        self.beta0 = beta0
        self.a_beta = a_beta
        self.n_beta = n_beta
        self.lr0 = lr0
        self.a_lr = a_lr
        self.n_lr = n_lr
        self.grad_mode = grad_mode
        self.random_state = random_state

    def _config(self):
        return TrainingConfig(beta0=self.beta0, a_beta=self.a_beta, n_beta=self.n_beta, lr0=self.lr0,
                              a_lr=self.a_lr, n_lr=self.n_lr, iterations=self.iterations,
                              grad_mode=self.grad_mode)

    def fit(self, X, y=None, monitor=None):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "blind" and y is not None:
            raise ValueError("blind mode learns without reference symbols; pass y=None")
        samples = _samples(X)
        seed = int(self.random_state or 0)
        eq = make_equalizer(self.topology, seed=child_seed(seed, f"init:{self.topology}", 0))
        est = None
        if self.mode == "blind":
            est = make_estimator(self.channel_estimator, seed=child_seed(seed, "init-est", 0))
        _, _, tel = train(samples, self.mode, eq, est, self._config(),
                          x_true=None if y is None else np.asarray(y, dtype=np.float64), monitor=monitor)
        self.equalizer_ = eq
        self.estimator_ = est
        self.telemetry_ = tel
        self.symbol_offset_ = eq.symbol_offset
        self.n_params_ = eq.n_params
        return self

    def transform(self, X):
        check_is_fitted(self, "equalizer_")
        return self.equalizer_.equalize(_samples(X))[0]

    def predict(self, X):
        return hard_decide(self.transform(X))

    def score(self, X, y):
        """1 - BER against the transmitted symbols ``y`` after delay/polarity alignment."""
        soft = self.transform(X)
        ref = np.asarray(y, dtype=np.float64)[self.symbol_offset_:self.symbol_offset_ + soft.size]
        try:
            al = align(soft, ref)
        except AlignmentFailed:
            return 1.0 - DIVERGED_BER
        return 1.0 - measure_ber(soft, ref, al)
