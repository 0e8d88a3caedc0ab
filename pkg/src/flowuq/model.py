"""Velocity network predicting a mean field and element-wise variance.

The network is an MLP over [x, time features, condition embedding] with two
linear heads: one for the mean velocity and one for log sigma.  Forward-mode
Jacobian-vector products (w.r.t. x) and reverse-mode gradients (w.r.t.
parameters and w.r.t. x) are implemented layer by layer in closed form; no
autodiff framework is used, so the differentiation contracts stay explicit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, UnknownClassError

LOG_SIGMA_MIN = -10.0
LOG_SIGMA_MAX = 5.0

CHECKPOINT_VERSION = 1


def _sigmoid(z):
    # piecewise form avoids overflow in exp for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _silu(z):
    return z * _sigmoid(z)


def _silu_prime(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def _tanh(z):
    return np.tanh(z)


def _tanh_prime(z):
    return 1.0 - np.tanh(z) ** 2


ACTIVATIONS = {"silu": (_silu, _silu_prime), "tanh": (_tanh, _tanh_prime)}


@dataclass(frozen=True)
class ModelOutput:
    """Predicted mean velocity and strictly positive element-wise variance."""

    mean: np.ndarray
    var: np.ndarray


@dataclass
class _Cache:
    """Intermediate values recorded by a forward pass, for reverse mode."""

    z0: np.ndarray  # assembled input, (B, in_dim)
    pre: list  # pre-activations per trunk layer
    act: list  # activations per trunk layer (act[0] is z0)
    logsig_raw: np.ndarray  # log-sigma head output before clamping
    var: np.ndarray
    cond_idx: np.ndarray | None
    squeeze: bool


class VelocityModel:
    """MLP velocity field with a mean head and a log-sigma head.

    Heads are zero-initialized so a fresh model predicts mean 0 and
    variance 1 everywhere.  Conditional models carry an embedding table
    with one extra, distinguished null row (index ``n_classes``), which is
    zero-initialized; passing ``cond=None`` selects it.
    """

    def __init__(
        self,
        dim,
        hidden=(64, 64, 64),
        activation="silu",
        time_features=8,
        n_classes=0,
        cond_embed_dim=8,
        seed=0,
    ):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if time_features % 2 != 0 or time_features <= 0:
            raise ValueError("time_features must be a positive even count")
        self.dim = int(dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self.time_features = int(time_features)
        self.n_classes = int(n_classes)
        self.cond_embed_dim = int(cond_embed_dim) if n_classes > 0 else 0
        self.seed = int(seed)

        self._act, self._act_prime = ACTIVATIONS[activation]
        self.in_dim = self.dim + self.time_features + self.cond_embed_dim
        rng = np.random.default_rng(seed)

        self.trunk_w = []
        self.trunk_b = []
        fan_in = self.in_dim
        for width in self.hidden:
            self.trunk_w.append(rng.standard_normal((fan_in, width)) / np.sqrt(fan_in))
            self.trunk_b.append(np.zeros(width))
            fan_in = width
        self.mean_w = np.zeros((fan_in, self.dim))
        self.mean_b = np.zeros(self.dim)
        self.logsig_w = np.zeros((fan_in, self.dim))
        self.logsig_b = np.zeros(self.dim)
        if self.n_classes > 0:
            self.cond_table = rng.standard_normal((self.n_classes + 1, self.cond_embed_dim)) * 0.1
            self.cond_table[self.n_classes] = 0.0  # null row
        else:
            self.cond_table = None

    # -- parameter bookkeeping -------------------------------------------

    def _param_arrays(self):
        arrays = []
        for w, b in zip(self.trunk_w, self.trunk_b):
            arrays.extend([w, b])
        arrays.extend([self.mean_w, self.mean_b, self.logsig_w, self.logsig_b])
        if self.cond_table is not None:
            arrays.append(self.cond_table)
        return arrays

    @property
    def n_parameters(self):
        return sum(a.size for a in self._param_arrays())

    def get_flat(self):
        """All parameters as one vector, in declared order."""
        return np.concatenate([a.ravel() for a in self._param_arrays()])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_parameters,):
            raise ValueError(f"expected {self.n_parameters} parameters, got {flat.shape}")
        offset = 0
        for a in self._param_arrays():
            a[...] = flat[offset : offset + a.size].reshape(a.shape)
            offset += a.size

    def copy(self):
        clone = VelocityModel(
            self.dim,
            hidden=self.hidden,
            activation=self.activation,
            time_features=self.time_features,
            n_classes=self.n_classes,
            cond_embed_dim=self.cond_embed_dim or 8,
            seed=self.seed,
        )
        clone.set_flat(self.get_flat())
        return clone

    # -- input assembly ---------------------------------------------------

    @property
    def null_class(self):
        """Index of the null-condition embedding row."""
        return self.n_classes if self.n_classes > 0 else None

    def _time_embed(self, t, batch):
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 0:
            t = np.full(batch, float(t))
        if t.shape != (batch,):
            raise ValueError(f"t must be scalar or shape ({batch},), got {t.shape}")
        if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
            raise ValueError("t must be finite and in [0, 1]")
        freqs = 2.0 ** np.arange(self.time_features // 2)
        angle = 2.0 * np.pi * t[:, None] * freqs[None, :]
        return np.concatenate([np.sin(angle), np.cos(angle)], axis=1)

    def _cond_indices(self, cond, batch):
        if self.n_classes == 0:
            if cond is not None:
                raise UnknownClassError("model is unconditional; cond must be None")
            return None
        if cond is None:
            return np.full(batch, self.n_classes, dtype=np.int64)
        idx = np.asarray(cond)
        if idx.ndim == 0:
            idx = np.full(batch, int(idx), dtype=np.int64)
        idx = idx.astype(np.int64)
        if idx.shape != (batch,):
            raise ValueError(f"cond must be scalar or shape ({batch},)")
        if np.any(idx < 0) or np.any(idx > self.n_classes):
            raise UnknownClassError(
                f"class ids must lie in [0, {self.n_classes}] (={self.n_classes} is the null row)"
            )
        return idx

    def _assemble(self, x, t, cond):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"x must have trailing dimension {self.dim}, got {x.shape}")
        if np.any(~np.isfinite(x)):
            raise NonFiniteError("model input contains NaN or inf")
        batch = x.shape[0]
        parts = [x, self._time_embed(t, batch)]
        cond_idx = self._cond_indices(cond, batch)
        if cond_idx is not None:
            parts.append(self.cond_table[cond_idx])
        return np.concatenate(parts, axis=1), cond_idx, squeeze

    # -- forward / reverse / tangent passes -------------------------------

    def forward(self, x, t, cond=None, want_cache=False):
        """Evaluate mean and variance at (x, t, cond).

        ``x`` may be a single vector or a (B, dim) batch; ``t`` a scalar or
        per-row array.  Deterministic for fixed parameters and inputs.
        """
        z0, cond_idx, squeeze = self._assemble(x, t, cond)
        act = [z0]
        pre = []
        a = z0
        for w, b in zip(self.trunk_w, self.trunk_b):
            z = a @ w + b
            pre.append(z)
            a = self._act(z)
            act.append(a)
        mean = a @ self.mean_w + self.mean_b
        logsig_raw = a @ self.logsig_w + self.logsig_b
        logsig = np.clip(logsig_raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX)
        var = np.exp(2.0 * logsig)
        out_mean, out_var = (mean[0], var[0]) if squeeze else (mean, var)
        output = ModelOutput(mean=out_mean, var=out_var)
        if want_cache:
            return output, _Cache(z0, pre, act, logsig_raw, var, cond_idx, squeeze)
        return output

    def jvp_mean(self, x, t, cond, v):
        """Jacobian-vector product of the mean head w.r.t. x.

        Computed by forward-mode tangent propagation through every layer;
        the tangent enters only through the x block of the input.
        """
        z0, _, squeeze = self._assemble(x, t, cond)
        v = np.asarray(v, dtype=np.float64)
        if squeeze:
            v = v[None, :]
        if v.shape != (z0.shape[0], self.dim):
            raise ValueError(f"tangent must match x shape, got {v.shape}")
        dz = np.zeros_like(z0)
        dz[:, : self.dim] = v
        a, da = z0, dz
        for w, b in zip(self.trunk_w, self.trunk_b):
            z = a @ w + b
            da = self._act_prime(z) * (da @ w)
            a = self._act(z)
        jv = da @ self.mean_w
        return jv[0] if squeeze else jv

    def backward(self, cache: _Cache, d_mean=None, d_logsig=None, want_input_grad=False):
        """Reverse pass from head adjoints to parameter (and input) gradients.

        ``d_mean`` is the adjoint on the mean output and ``d_logsig`` the
        adjoint on the clamped log-sigma; the clamp gates the latter.
        Returns ``(grads, x_grad)`` where ``grads`` aligns with
        :meth:`get_flat` and ``x_grad`` is None unless requested.
        """
        batch = cache.z0.shape[0]
        a_last = cache.act[-1]
        if d_mean is None:
            d_mean = np.zeros((batch, self.dim))
        else:
            d_mean = np.asarray(d_mean, dtype=np.float64)
            if cache.squeeze and d_mean.ndim == 1:
                d_mean = d_mean[None, :]
        if d_logsig is None:
            d_logsig = np.zeros((batch, self.dim))
        else:
            d_logsig = np.asarray(d_logsig, dtype=np.float64)
            if cache.squeeze and d_logsig.ndim == 1:
                d_logsig = d_logsig[None, :]
        clamp_open = (cache.logsig_raw > LOG_SIGMA_MIN) & (cache.logsig_raw < LOG_SIGMA_MAX)
        d_raw = d_logsig * clamp_open

        g_mean_w = a_last.T @ d_mean
        g_mean_b = d_mean.sum(axis=0)
        g_logsig_w = a_last.T @ d_raw
        g_logsig_b = d_raw.sum(axis=0)

        d_a = d_mean @ self.mean_w.T + d_raw @ self.logsig_w.T
        g_trunk = []
        for layer in range(len(self.trunk_w) - 1, -1, -1):
            d_z = self._act_prime(cache.pre[layer]) * d_a
            g_w = cache.act[layer].T @ d_z
            g_b = d_z.sum(axis=0)
            g_trunk.append((g_w, g_b))
            d_a = d_z @ self.trunk_w[layer].T
        g_trunk.reverse()

        pieces = []
        for g_w, g_b in g_trunk:
            pieces.extend([g_w.ravel(), g_b.ravel()])
        pieces.extend(
            [g_mean_w.ravel(), g_mean_b.ravel(), g_logsig_w.ravel(), g_logsig_b.ravel()]
        )
        if self.cond_table is not None:
            g_table = np.zeros_like(self.cond_table)
            emb_grad = d_a[:, self.dim + self.time_features :]
            np.add.at(g_table, cache.cond_idx, emb_grad)
            pieces.append(g_table.ravel())
        grads = np.concatenate(pieces)

        x_grad = None
        if want_input_grad:
            x_grad = d_a[:, : self.dim]
            if cache.squeeze:
                x_grad = x_grad[0]
        return grads, x_grad

    def var_input_grad(self, x, t, cond, d_var):
        """Gradient w.r.t. x of sum(d_var * var), through the variance head only."""
        _, cache = self.forward(x, t, cond, want_cache=True)
        d_var = np.asarray(d_var, dtype=np.float64)
        if cache.squeeze and d_var.ndim == 1:
            d_var = d_var[None, :]
        d_logsig = d_var * 2.0 * cache.var  # d var / d logsig = 2 var
        _, x_grad = self.backward(cache, d_mean=None, d_logsig=d_logsig, want_input_grad=True)
        return x_grad

    # -- checkpointing -----------------------------------------------------

    def save(self, path):
        """Write a checkpoint that round-trips bit-exactly."""
        meta = {
            "version": CHECKPOINT_VERSION,
            "dim": self.dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "time_features": self.time_features,
            "n_classes": self.n_classes,
            "cond_embed_dim": self.cond_embed_dim,
            "seed": self.seed,
        }
        np.savez(path, meta=json.dumps(meta), flat=self.get_flat())

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as payload:
            meta = json.loads(str(payload["meta"]))
            flat = payload["flat"]
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        model = cls(
            meta["dim"],
            hidden=tuple(meta["hidden"]),
            activation=meta["activation"],
            time_features=meta["time_features"],
            n_classes=meta["n_classes"],
            cond_embed_dim=meta["cond_embed_dim"] or 8,
            seed=meta["seed"],
        )
        model.set_flat(flat)
        return model
