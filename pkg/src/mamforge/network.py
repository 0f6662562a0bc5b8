"""Feed-forward scalar network with analytic first and second order passes.

The model is a standard fully-connected net with tanh hidden units and a
linear scalar output.  tanh keeps the map twice continuously
differentiable, which the virial-stress and force-training paths rely
on.

Besides the usual value / input-gradient / parameter-gradient passes,
:meth:`MLP.param_gradient` also differentiates *directional derivatives*
of the output with respect to the parameters (forward-over-reverse
sweep).  That mixed second-order pass is what makes force-matching
losses trainable with exact gradients: the force residuals enter as
input-space tangent vectors.
"""

from __future__ import annotations

import numpy as np


def glorot_init(layer_sizes: list[int], rng: np.random.Generator) -> tuple[list, list]:
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return weights, biases


class MLP:
    """Scalar-output multilayer perceptron.

    ``layer_sizes`` includes the input width and ends with 1.  Weight
    matrices are stored (n_out, n_in); rows act on the previous layer.
    """

    def __init__(self, layer_sizes, weights=None, biases=None, seed: int = 0):
        layer_sizes = [int(w) for w in layer_sizes]
        if len(layer_sizes) < 2 or layer_sizes[-1] != 1:
            raise ValueError("need at least input and one scalar output layer")
        if min(layer_sizes) < 1:
            raise ValueError("layer widths must be >= 1")
        self.layer_sizes = layer_sizes
        if weights is None:
            self.weights, self.biases = glorot_init(layer_sizes, np.random.default_rng(seed))
        else:
            self.weights = [np.array(w, dtype=float) for w in weights]
            self.biases = [np.array(b, dtype=float) for b in biases]
            shapes = [(o, i) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])]
            if [w.shape for w in self.weights] != shapes:
                raise ValueError("weight shapes do not match layer sizes")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def _forward_full(self, x):
        a = [np.atleast_2d(np.asarray(x, dtype=float))]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a.append(np.tanh(a[-1] @ w.T + b))
        # elementwise product + per-row reduction instead of a (B, k) @ (k, 1)
        # matmul: BLAS gemv rounding can depend on the row position in the
        # batch, which would break exact permutation invariance of summed
        # atomic energies
        y = (a[-1] * self.weights[-1][0]).sum(axis=1) + self.biases[-1][0]
        return y, a

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Network values for a batch of input rows."""
        return self._forward_full(x)[0]

    def input_gradient(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values and d(value)/d(input) rows for a batch."""
        y, a = self._forward_full(x)
        r = np.broadcast_to(self.weights[-1], (len(y), self.layer_sizes[-2])).copy()
        for w, act in zip(self.weights[-2::-1], a[-1:0:-1]):
            r = (r * (1.0 - act**2)) @ w
        return y, r

    def param_gradient(self, x, cot_value=None, input_tangent=None):
        """Parameter gradient of a mixed scalar objective.

        Differentiates ``S = sum_b cot_value[b] * y_b
        + sum_b input_tangent[b] . grad_x y_b`` with respect to every
        weight and bias.  Either cotangent may be ``None`` (treated as
        zero).  Returns ``(values, grads)`` with ``grads`` aligned with
        :meth:`parameters`.
        """
        y, a = self._forward_full(x)
        batch = len(y)
        n_hidden = len(self.weights) - 1
        w_out = self.weights[-1]

        t_a = None
        if input_tangent is not None:
            t_a = [np.atleast_2d(np.asarray(input_tangent, dtype=float))]
            for w, act in zip(self.weights[:-1], a[1:]):
                t_a.append((1.0 - act**2) * (t_a[-1] @ w.T))

        grads_w = [np.zeros_like(w) for w in self.weights]
        grads_b = [np.zeros_like(b) for b in self.biases]

        # output layer: y = a[-1] @ W^T + b,  s = t_a[-1] @ W^T
        if cot_value is not None:
            cot_value = np.asarray(cot_value, dtype=float)
            grads_w[-1] += cot_value[None, :] @ a[-1]
            grads_b[-1] += cot_value.sum(keepdims=True)
            r_a = cot_value[:, None] * w_out
        else:
            r_a = np.zeros((batch, self.layer_sizes[-2]))
        if t_a is not None:
            grads_w[-1] += t_a[-1].sum(axis=0, keepdims=True)
            r_ta = np.broadcast_to(w_out, (batch, self.layer_sizes[-2])).copy()
        else:
            r_ta = None

        for l in range(n_hidden - 1, -1, -1):
            act = a[l + 1]
            dact = 1.0 - act**2
            r_z = r_a * dact
            if r_ta is not None:
                r_z += r_ta * (-2.0 * act * dact) * (t_a[l] @ self.weights[l].T)
                r_tz = r_ta * dact
                grads_w[l] += r_tz.T @ t_a[l]
            grads_w[l] += r_z.T @ a[l]
            grads_b[l] += r_z.sum(axis=0)
            r_a = r_z @ self.weights[l]
            if r_ta is not None:
                r_ta = r_tz @ self.weights[l]

        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads.extend((gw, gb))
        return y, grads

    def to_dict(self) -> dict:
        return {
            "layer_sizes": self.layer_sizes,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLP":
        sizes = d["layer_sizes"]
        shapes = [(o, i) for i, o in zip(sizes[:-1], sizes[1:])]
        weights = [np.array(w).reshape(shape) for w, shape in zip(d["weights"], shapes)]
        return cls(sizes, weights=weights, biases=d["biases"])
