"""Small tanh MLPs used for force fields and velocity predictors."""

import hashlib
import json

import numpy as np

from ..core import make_rng
from ..errors import DimensionError, IntegrityError
from . import tape as T

CHECKPOINT_FORMAT = "hamflow.mlp/1"


def time_features(t, n, n_freq, scale=1.0):
    """``[sin(2^k s t), cos(2^k s t)]_{k<K}`` followed by raw ``t``; shape ``(n, 2K+1)``.

    ``t`` may be a scalar, an ``(n,)`` array or a tape ``Var`` of shape ``(n,)``.
    """
    freqs = scale * 2.0 ** np.arange(n_freq)
    if isinstance(t, T.Var):
        tc = T.reshape(t, (n, 1))
    else:
        tc = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)).reshape(n, 1)
    arg = T.mul(tc, freqs[None, :])
    return T.concat([T.sin(arg), T.cos(arg), tc], axis=1)


class Mlp:
    """Fully connected network ``R^d (x time features) -> R^d_out`` with tanh hidden layers.

    Weights are stored as ``(fan_in, fan_out)`` so that ``h @ W + b`` maps a
    batch of row vectors. ``n_freq > 0`` makes the network time-conditioned.
    """

    activation = "tanh"

    def __init__(self, weights, biases, d_in, n_freq=0, time_scale=1.0):
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        self.d_in = int(d_in)
        self.n_freq = int(n_freq)
        self.time_scale = float(time_scale)
        expected = self.d_in + (2 * self.n_freq + 1 if self.n_freq else 0)
        if self.weights[0].shape[0] != expected:
            raise DimensionError(f"first layer expects {self.weights[0].shape[0]} inputs, embedding gives {expected}")

    @classmethod
    def create(cls, d, hidden=(64, 64), d_out=None, n_freq=0, time_scale=1.0, seed=0):
        """Xavier-uniform hidden layers, zero output layer (so the network starts at 0)."""
        rng = make_rng(seed)
        d_out = d if d_out is None else d_out
        d_first = d + (2 * n_freq + 1 if n_freq else 0)
        sizes = [d_first, *hidden, d_out]
        weights, biases = [], []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            if i == len(sizes) - 2:
                weights.append(np.zeros((a, b)))
            else:
                lim = np.sqrt(6.0 / (a + b))
                weights.append(rng.uniform(-lim, lim, size=(a, b)))
            biases.append(np.zeros(b))
        return cls(weights, biases, d, n_freq, time_scale)

    @property
    def time_conditioned(self):
        return self.n_freq > 0

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def d_out(self):
        return self.weights[-1].shape[1]

    def params(self):
        """Parameter arrays in the fixed order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def num_params(self):
        return sum(p.size for p in self.params())

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, flat):
        i = 0
        for p in self.params():
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def copy(self):
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   self.d_in, self.n_freq, self.time_scale)

    def _inputs(self, x, t):
        xv = T.value_of(x)
        if xv.ndim != 2 or xv.shape[1] != self.d_in:
            raise DimensionError(f"network input must be (n, {self.d_in}), got {xv.shape}")
        if self.time_conditioned:
            if t is None:
                raise DimensionError("time-conditioned network needs t")
            return T.concat([x, time_features(t, xv.shape[0], self.n_freq, self.time_scale)], axis=1)
        if t is not None:
            raise DimensionError("network is not time-conditioned; t must be omitted")
        return x

    def forward(self, x, t=None, params=None):
        """Evaluate on a batch ``x`` of shape ``(n, d)``.

        ``params`` (e.g. from ``tape.bind(net)``) overrides the stored weights;
        with tape variables anywhere in the inputs the computation is recorded.
        """
        p = self.params() if params is None else params
        h = self._inputs(x, t)
        n_layers = len(self.weights)
        for i in range(n_layers):
            h = T.add(T.matmul(h, p[2 * i]), p[2 * i + 1])
            if i < n_layers - 1:
                h = T.tanh(h)
        return h

    __call__ = forward

    def jvp(self, x, t=None, dx=None, dt=None):
        """Forward-mode directional derivative ``D_x f . dx + d_t f . dt`` (numpy only)."""
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]
        dx = np.zeros_like(x) if dx is None else np.asarray(dx, dtype=np.float64)
        h = x
        dh = dx
        if self.time_conditioned:
            tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)).reshape(n, 1)
            dtt = np.broadcast_to(np.asarray(0.0 if dt is None else dt, dtype=np.float64), (n,)).reshape(n, 1)
            freqs = self.time_scale * 2.0 ** np.arange(self.n_freq)[None]
            arg = tt * freqs
            h = np.concatenate([x, np.sin(arg), np.cos(arg), tt], axis=1)
            dh = np.concatenate([dx, np.cos(arg) * freqs * dtt, -np.sin(arg) * freqs * dtt, dtt], axis=1)
        n_layers = len(self.weights)
        for i in range(n_layers):
            h = h @ self.weights[i] + self.biases[i]
            dh = dh @ self.weights[i]
            if i < n_layers - 1:
                h = np.tanh(h)
                dh = dh * (1.0 - h * h)
        return h, dh

    def divergence(self, x, t=None):
        """Exact divergence of a square network via ``d`` forward passes."""
        x = np.asarray(x, dtype=np.float64)
        div = np.zeros(x.shape[0])
        for j in range(self.d_in):
            e = np.zeros_like(x)
            e[:, j] = 1.0
            _, dh = self.jvp(x, t, dx=e)
            div += dh[:, j]
        return div

    # ------------------------------------------------------------ checkpoints

    def to_dict(self, config_hash=None):
        payload = {
            "layers": self.layer_sizes,
            "d_in": self.d_in,
            "activation": self.activation,
            "time_embedding": {"frequencies": self.n_freq, "base": 2, "raw_time": bool(self.n_freq),
                               "scale": self.time_scale},
            "weights": [w.ravel(order="C").tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        return {"format": CHECKPOINT_FORMAT, "config_hash": config_hash,
                "payload_sha256": _payload_hash(payload), **payload}

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != CHECKPOINT_FORMAT:
            raise IntegrityError(f"unknown checkpoint format {data.get('format')!r}")
        payload = {k: data[k] for k in ("layers", "d_in", "activation", "time_embedding", "weights", "biases")
                   if k in data}
        if len(payload) != 6 or _payload_hash(payload) != data.get("payload_sha256"):
            raise IntegrityError("checkpoint payload hash mismatch (file corrupted or edited)")
        sizes = payload["layers"]
        weights = [np.array(w, dtype=np.float64).reshape(a, b)
                   for w, a, b in zip(payload["weights"], sizes[:-1], sizes[1:])]
        biases = [np.array(b, dtype=np.float64) for b in payload["biases"]]
        emb = payload["time_embedding"]
        return cls(weights, biases, payload["d_in"], emb["frequencies"], emb.get("scale", 1.0))

    def save(self, path, config_hash=None):
        with open(path, "w") as fh:
            json.dump(self.to_dict(config_hash), fh)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"checkpoint is not valid JSON: {exc}") from None
        return cls.from_dict(data)


def _payload_hash(payload):
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def mlp_forward(net, x, t=None):
    return net.forward(x, t)
