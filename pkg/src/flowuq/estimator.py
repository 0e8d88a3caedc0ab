"""Scikit-learn style front door for the whole pipeline.

``FlowMatcher`` is a generative estimator in the mold of
``sklearn.mixture.GaussianMixture``: ``fit(X, y)`` trains the velocity model
on the rows of ``X`` (labels enable classifier-free conditioning) and
``sample`` draws new points, optionally with uncertainty maps and scores.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .guidance import GuidanceConfig
from .model import VelocityModel
from .paths import AffinePath
from .pipeline import generate, samples_array, scores_array
from .sample import SamplerConfig
from .train import TrainConfig, train
from .uq import HutchinsonJVP, MonteCarloCov, UqConfig, ZeroCov
from .validation import check_labels, check_matrix


def _cov_option(name, probes):
    options = {
        "zero": lambda: ZeroCov(),
        "jvp": lambda: HutchinsonJVP(probes=probes),
        "mc": lambda: MonteCarloCov(samples=probes),
    }
    if name not in options:
        raise ValueError(f"cov must be one of {sorted(options)}, got {name!r}")
    return options[name]()


class FlowMatcher(BaseEstimator):
    """Flow-matching generative model with heteroscedastic uncertainty.

    Parameters mirror the training and sampling configuration; all are plain
    values so the estimator clones and grid-searches like any other
    scikit-learn estimator.

    Attributes set by :meth:`fit`: ``model_`` (trained network),
    ``ema_model_`` (EMA copy used for sampling), ``loss_history_``,
    ``classes_`` (when ``y`` was given) and ``n_features_in_``.
    """

    def __init__(
        self,
        hidden=(64, 64, 64),
        activation="silu",
        time_features=8,
        cond_embed_dim=8,
        train_steps=6000,
        batch_size=64,
        learning_rate=1e-3,
        beta=1.0,
        use_correction=True,
        pretrain_fraction=0.7,
        label_dropout=0.1,
        ema_decay=0.999,
        sampler_steps=50,
        sampler_method="heun",
        cov="jvp",
        cov_probes=1,
        uq_cadence=1,
        score_top_fraction=0.1,
        random_state=0,
    ):
        self.hidden = hidden
        self.activation = activation
        self.time_features = time_features
        self.cond_embed_dim = cond_embed_dim
        self.train_steps = train_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta = beta
        self.use_correction = use_correction
        self.pretrain_fraction = pretrain_fraction
        self.label_dropout = label_dropout
        self.ema_decay = ema_decay
        self.sampler_steps = sampler_steps
        self.sampler_method = sampler_method
        self.cov = cov
        self.cov_probes = cov_probes
        self.uq_cadence = uq_cadence
        self.score_top_fraction = score_top_fraction
        self.random_state = random_state

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this FlowMatcher is not fitted; call fit first")

    @property
    def path_(self):
        return AffinePath("linear")

    def fit(self, X, y=None):
        """Train the velocity model on the rows of X.

        Passing ``y`` enables class-conditional generation with
        classifier-free label dropout.
        """
        X = check_matrix(X)
        self.n_features_in_ = X.shape[1]
        labels = None
        n_classes = 0
        if y is not None:
            labels, self.classes_ = check_labels(y, X.shape[0])
            n_classes = len(self.classes_)
        elif hasattr(self, "classes_"):
            del self.classes_
        model = VelocityModel(
            self.n_features_in_,
            hidden=tuple(self.hidden),
            activation=self.activation,
            time_features=self.time_features,
            n_classes=n_classes,
            cond_embed_dim=self.cond_embed_dim,
            seed=self.random_state,
        )
        config = TrainConfig(
            batch_size=self.batch_size,
            beta=self.beta,
            learning_rate=self.learning_rate,
            steps=self.train_steps,
            ema_decay=self.ema_decay,
            use_correction=self.use_correction,
            label_dropout=self.label_dropout,
            seed=self.random_state,
            pretrain_fraction=self.pretrain_fraction,
        )
        result = train(model, (X, labels), config, path=self.path_)
        self.model_ = result.model
        self.ema_model_ = result.ema_model
        self.loss_history_ = result.history
        return self

    def _uq_config(self):
        return UqConfig(
            cov=_cov_option(self.cov, self.cov_probes), cadence=self.uq_cadence
        )

    def _encode_cond(self, cond):
        if cond is None or isinstance(cond, str) or not hasattr(self, "classes_"):
            return cond
        arr = np.asarray(cond)
        classes = self.classes_.tolist()
        if arr.ndim == 0:
            return classes.index(arr.item())
        return np.asarray([classes.index(v) for v in arr.tolist()], dtype=np.int64)

    def sample(self, n_samples, cond=None, return_uncertainty=False,
               guidance: GuidanceConfig | None = None, seed=None, n_threads=None):
        """Draw samples from the fitted flow (using the EMA weights).

        With ``return_uncertainty`` the propagated per-element uncertainty
        maps and scalar scores are returned alongside the samples.
        """
        self._require_fitted()
        sampler_cfg = SamplerConfig(steps=self.sampler_steps, method=self.sampler_method)
        result = generate(
            self.ema_model_,
            self.path_,
            n_samples,
            sampler_cfg=sampler_cfg,
            uq_cfg=self._uq_config() if return_uncertainty else None,
            guidance_cfg=guidance,
            cond=self._encode_cond(cond),
            seed=self.random_state if seed is None else seed,
            n_threads=n_threads,
            score_top_fraction=self.score_top_fraction,
        )
        X = samples_array(result.records)
        if not return_uncertainty:
            return X
        maps = np.stack([r.uncertainty for r in result.records])
        return X, maps, scores_array(result.records)

    def velocity(self, X, t, cond=None):
        """Predicted (mean, variance) of the velocity field at time t."""
        self._require_fitted()
        X = check_matrix(X, dim=self.n_features_in_)
        out = self.ema_model_.forward(X, t, self._encode_cond(cond))
        return out.mean, out.var
