"""Fully connected ReLU networks with hand-written backpropagation and ADAM."""
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch


@dataclass
class MlpParams:
    """Weights are stored ``(fan_in, fan_out)`` so a layer computes ``h @ W + b``."""

    weights: list
    biases: list

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_hidden_layers(self):
        return len(self.weights) - 1

    @property
    def n_features(self):
        """Width of the feature map including the appended bias column."""
        return self.weights[-1].shape[0] + 1

    def flatten(self):
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def unflatten(self, vec):
        """New params with the structure of ``self`` filled from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64)
        weights, biases = [], []
        i = 0
        for W, b in zip(self.weights, self.biases):
            weights.append(vec[i : i + W.size].reshape(W.shape))
            i += W.size
            biases.append(vec[i : i + b.size].reshape(b.shape))
            i += b.size
        if i != vec.size:
            raise DimensionMismatch(f"expected {i} values, got {vec.size}")
        return MlpParams(weights, biases)

    @property
    def size(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def weight_mask(self):
        """Flat boolean mask selecting weights (True) versus biases (False)."""
        return np.concatenate(
            [
                np.concatenate([np.ones(W.size, bool), np.zeros(b.size, bool)])
                for W, b in zip(self.weights, self.biases)
            ]
        )

    def feature_mask(self):
        """Flat boolean mask of parameters that feed the feature map (all but the output layer)."""
        mask = np.ones(self.size, bool)
        mask[self.size - self.weights[-1].size - self.biases[-1].size :] = False
        return mask

    def copy(self):
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def to_json(self):
        return {
            "layer_sizes": self.layer_sizes,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            [np.asarray(W, dtype=np.float64) for W in obj["weights"]],
            [np.asarray(b, dtype=np.float64) for b in obj["biases"]],
        )


def init_params(layer_sizes, seed):
    """Weights ~ N(0, 1/fan_in), zero biases."""
    if len(layer_sizes) < 2 or any(int(s) < 1 for s in layer_sizes):
        raise ValueError(f"invalid layer sizes {layer_sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _check_input(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if params.layer_sizes[0] == 1 else x.reshape(1, -1)
    if x.shape[1] != params.layer_sizes[0]:
        raise DimensionMismatch(f"input has {x.shape[1]} columns, network expects {params.layer_sizes[0]}")
    return x


def _hidden_forward(params, x, masks=None):
    """Run the hidden layers; returns final post-activation and the per-layer cache."""
    h = x
    cache = []
    for layer, (W, b) in enumerate(zip(params.weights[:-1], params.biases[:-1])):
        z = h @ W + b
        a = np.maximum(z, 0.0)
        if masks is not None:
            a = a * masks[layer]
        cache.append((h, z))
        h = a
    return h, cache


def forward_features(params, x, masks=None):
    """Last-hidden-layer post-activations with a trailing column of ones, shape ``(n, N_L + 1)``."""
    x = _check_input(params, x)
    h, _ = _hidden_forward(params, x, masks)
    return np.hstack([h, np.ones((h.shape[0], 1))])


def forward_output(params, x, masks=None):
    x = _check_input(params, x)
    h, _ = _hidden_forward(params, x, masks)
    return h @ params.weights[-1][:, 0] + params.biases[-1][0]


def grad(params, x, upstream, wrt="output", masks=None):
    """Reverse-mode gradient of a scalar objective w.r.t. every parameter.

    ``upstream`` is either d(objective)/d(outputs), shape ``(n,)``, or
    d(objective)/d(features), shape ``(n, N_L + 1)``, selected by ``wrt``.
    With ``wrt="features"`` the output layer receives zero gradient.
    The ReLU derivative at exactly zero is taken as zero.
    """
    x = _check_input(params, x)
    h, cache = _hidden_forward(params, x, masks)
    upstream = np.asarray(upstream, dtype=np.float64)
    n = x.shape[0]
    gW = [np.zeros_like(W) for W in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]

    if wrt == "output":
        u = upstream.reshape(-1)
        if u.shape[0] != n:
            raise DimensionMismatch(f"upstream has {u.shape[0]} entries for {n} outputs")
        gW[-1] = (h.T @ u).reshape(-1, 1)
        gb[-1] = np.array([u.sum()])
        dh = np.outer(u, params.weights[-1][:, 0])
    elif wrt == "features":
        if upstream.shape != (n, params.n_features):
            raise DimensionMismatch(
                f"upstream shape {upstream.shape} does not match features ({n}, {params.n_features})"
            )
        dh = upstream[:, :-1]
    else:
        raise ValueError(f"wrt must be 'output' or 'features', got {wrt!r}")

    for layer in range(len(cache) - 1, -1, -1):
        h_in, z = cache[layer]
        dz = dh * (z > 0.0)
        if masks is not None:
            dz = dz * masks[layer]
        gW[layer] = h_in.T @ dz
        gb[layer] = dz.sum(axis=0)
        if layer > 0:
            dh = dz @ params.weights[layer].T
    return MlpParams(gW, gb)


@dataclass
class AdamState:
    lr: object = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)


def adam_step(state, params, grads):
    """One bias-corrected ADAM descent step.

    ``params``/``grads`` are flat arrays or ``MlpParams``. ``state.lr`` may be
    a scalar or a per-coordinate array. Returns ``(new_params, new_state)``;
    the inputs are not modified.
    """
    structured = isinstance(params, MlpParams)
    p = params.flatten() if structured else np.asarray(params, dtype=np.float64)
    g = grads.flatten() if isinstance(grads, MlpParams) else np.asarray(grads, dtype=np.float64)
    if p.shape != g.shape:
        raise DimensionMismatch(f"params {p.shape} and grads {g.shape} differ")
    m = np.zeros_like(p) if state.m is None else state.m
    v = np.zeros_like(p) if state.v is None else state.v
    if m.shape != p.shape:
        raise DimensionMismatch(f"ADAM moments {m.shape} do not match params {p.shape}")
    t = state.t + 1
    m = state.beta1 * m + (1.0 - state.beta1) * g
    v = state.beta2 * v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    p_new = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = replace(state, t=t, m=m, v=v)
    return (params.unflatten(p_new) if structured else p_new), new_state
