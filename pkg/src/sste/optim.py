"""Adam with lazy per-row state for embedding-style parameters.

Moment estimates and step counters live per row and advance only when a row
actually receives a gradient, so rarely-touched rows keep correct bias
correction instead of being decayed by every global step.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class SparseAdam:
    """Per-row adaptive moment optimizer over a named parameter dict.

    Each parameter is a live numpy array updated in place. ``update`` takes
    the unique rows touched by a batch and their summed gradients; pass
    ``rows=None`` for scalar (0-d) parameters.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        learning_rate: float,
        beta1: float = ADAM_BETA1,
        beta2: float = ADAM_BETA2,
        eps: float = ADAM_EPS,
    ):
        if learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        self.params = dict(params)
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = {name: np.zeros_like(p) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p) for name, p in self.params.items()}
        self._t = {
            name: np.zeros(p.shape[0] if p.ndim else (), dtype=np.int64)
            for name, p in self.params.items()
        }

    def update(self, name: str, rows: np.ndarray | None, grad: np.ndarray) -> None:
        param = self.params[name]
        m, v, t = self._m[name], self._v[name], self._t[name]
        if rows is None:
            t += 1
            m[...] = self.beta1 * m + (1.0 - self.beta1) * grad
            v[...] = self.beta2 * v + (1.0 - self.beta2) * grad * grad
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            param[...] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            return
        t[rows] += 1
        steps = t[rows].astype(np.float64)
        m[rows] = self.beta1 * m[rows] + (1.0 - self.beta1) * grad
        v[rows] = self.beta2 * v[rows] + (1.0 - self.beta2) * grad * grad
        c1 = 1.0 - self.beta1 ** steps
        c2 = 1.0 - self.beta2 ** steps
        if param.ndim == 2:
            c1 = c1[:, None]
            c2 = c2[:, None]
        param[rows] -= self.lr * (m[rows] / c1) / (np.sqrt(v[rows] / c2) + self.eps)
