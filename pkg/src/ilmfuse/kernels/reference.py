"""Pure-numpy reference implementations of the numeric kernels.

This backend is always available and is the ground truth the compiled
extension is checked against.  Model math runs in float32 (matching the
stored weight precision); probability/log-probability outputs are float64
so that long score accumulations downstream do not lose precision.
"""

import numpy as np
from scipy.special import expit

BACKEND_NAME = "reference"


def affine(w: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    return w @ x + b


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z -= z.max()
    return z - np.log(np.exp(z).sum())


def log_sum_exp(values: np.ndarray) -> float:
    z = np.asarray(values, dtype=np.float64)
    m = z.max()
    if not np.isfinite(m):
        # All inputs -inf: the sum is 0 in linear space.
        return float(m)
    return float(m + np.log(np.exp(z - m).sum()))


def lstm_cell(
    x: np.ndarray,
    h: np.ndarray,
    c: np.ndarray,
    w_x: np.ndarray,
    w_h: np.ndarray,
    b: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM cell step with fused gate blocks ordered (i, f, g, o)."""
    n = h.shape[0]
    gates = w_x @ x + w_h @ h + b
    i = expit(gates[:n])
    f = expit(gates[n : 2 * n])
    g = np.tanh(gates[2 * n : 3 * n])
    o = expit(gates[3 * n :])
    c_new = (f * c + i * g).astype(np.float32)
    h_new = (o * np.tanh(c_new)).astype(np.float32)
    return h_new, c_new


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float) -> np.ndarray:
    z = x.astype(np.float64)
    mu = z.mean()
    var = z.var()
    out = (z - mu) / np.sqrt(var + eps)
    return (out * gamma + beta).astype(np.float32)
