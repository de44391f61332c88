"""Dense numeric kernels behind the model modules.

Two interchangeable backends implement the low-level ops: a Cython
extension (``ilmfuse.kernels._fast``) and a pure-numpy reference
(``ilmfuse.kernels.reference``).  The extension is preferred when it
imported successfully; set ``ILMFUSE_BACKEND=reference`` (or ``fast``)
to force a choice.  ``backend_name()`` reports which one is active.

All kernels are pure functions over immutable arrays: no global state,
deterministic outputs, safe to call from parallel workers.

Conventions
-----------
* Weights and activations are float32; probability and log-probability
  vectors are returned as float64 for stable score accumulation.
* Fused LSTM gate blocks are ordered (input, forget, cell, output).
* No forget-gate bias offset is applied at inference; exporters bake any
  training-time offset into the stored bias.
"""

import os
from dataclasses import dataclass

import numpy as np

from ilmfuse.errors import DimensionError, NumericError

from . import reference as _reference

try:
    from . import _fast
except ImportError:  # extension not built; reference backend still works
    _fast = None

_env = os.environ.get("ILMFUSE_BACKEND", "").strip().lower()
if _env == "reference":
    _impl = _reference
elif _env == "fast":
    if _fast is None:
        raise ImportError("ILMFUSE_BACKEND=fast but the compiled extension is unavailable")
    _impl = _fast
elif _env == "":
    _impl = _fast if _fast is not None else _reference
else:
    raise ImportError(f"unknown ILMFUSE_BACKEND value: {_env!r}")

LN_EPS = 1e-5


def backend_name() -> str:
    """Name of the active kernel backend ('fast' or 'reference')."""
    return _impl.BACKEND_NAME


def available_backends() -> dict:
    """Map of backend name to implementing module, for tests and benchmarks."""
    out = {"reference": _reference}
    if _fast is not None:
        out["fast"] = _fast
    return out


def _as_f32_vector(x, name: str) -> np.ndarray:
    a = np.ascontiguousarray(x, dtype=np.float32)
    if a.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {a.shape}")
    return a


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax of a 1-D logit vector.

    Returns a float64 probability vector that is positive and sums to 1.
    Raises DimensionError on empty input and NumericError on NaN/Inf.
    """
    a = _as_f32_vector(logits, "logits")
    if a.size == 0:
        raise DimensionError("softmax of an empty vector")
    if not np.all(np.isfinite(a)):
        raise NumericError("softmax input contains NaN or Inf")
    return _impl.softmax(a)


def log_softmax(logits) -> np.ndarray:
    """Log of softmax(), computed directly in the log domain (float64)."""
    a = _as_f32_vector(logits, "logits")
    if a.size == 0:
        raise DimensionError("log_softmax of an empty vector")
    if not np.all(np.isfinite(a)):
        raise NumericError("log_softmax input contains NaN or Inf")
    return _impl.log_softmax(a)


def log_sum_exp(values) -> float:
    """log(sum(exp(values))) with max shift; values may be any float dtype."""
    a = np.ascontiguousarray(values, dtype=np.float64)
    if a.ndim != 1:
        raise DimensionError(f"log_sum_exp input must be 1-D, got shape {a.shape}")
    if a.size == 0:
        raise DimensionError("log_sum_exp of an empty vector")
    return float(_impl.log_sum_exp(a))


def affine(x, w, b) -> np.ndarray:
    """w @ x + b for a 2-D float32 weight matrix and 1-D vectors."""
    xa = _as_f32_vector(x, "x")
    ba = _as_f32_vector(b, "b")
    wa = np.ascontiguousarray(w, dtype=np.float32)
    if wa.ndim != 2:
        raise DimensionError(f"weight matrix must be 2-D, got shape {wa.shape}")
    if wa.shape != (ba.size, xa.size):
        raise DimensionError(
            f"affine shape mismatch: W {wa.shape}, x ({xa.size},), b ({ba.size},)"
        )
    return _impl.affine(wa, xa, ba)


def layer_norm(x, gamma, beta, eps: float = LN_EPS) -> np.ndarray:
    """Layer normalization over the full vector, with learned scale/shift."""
    xa = _as_f32_vector(x, "x")
    ga = _as_f32_vector(gamma, "gamma")
    ba = _as_f32_vector(beta, "beta")
    if not (xa.size == ga.size == ba.size):
        raise DimensionError(
            f"layer_norm size mismatch: x {xa.size}, gamma {ga.size}, beta {ba.size}"
        )
    return _impl.layer_norm(xa, ga, ba, eps)


@dataclass(frozen=True)
class LstmCellParams:
    """Fused LSTM cell weights: gate blocks stacked (i, f, g, o) along rows.

    w_x: (4H, D) input weights, w_h: (4H, H) recurrent weights, b: (4H,).
    """

    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        w_x = np.ascontiguousarray(self.w_x, dtype=np.float32)
        w_h = np.ascontiguousarray(self.w_h, dtype=np.float32)
        b = np.ascontiguousarray(self.b, dtype=np.float32)
        object.__setattr__(self, "w_x", w_x)
        object.__setattr__(self, "w_h", w_h)
        object.__setattr__(self, "b", b)
        if w_x.ndim != 2 or w_h.ndim != 2 or b.ndim != 1:
            raise DimensionError("LSTM params must be (w_x 2-D, w_h 2-D, b 1-D)")
        rows = w_x.shape[0]
        if rows % 4 != 0:
            raise DimensionError(f"fused gate rows {rows} not divisible by 4")
        n = rows // 4
        if w_h.shape != (rows, n) or b.shape != (rows,):
            raise DimensionError(
                f"gate blocks disagree: w_x {w_x.shape}, w_h {w_h.shape}, b {b.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.w_x.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.w_x.shape[1]


@dataclass(frozen=True)
class LstmState:
    """Hidden and cell vectors of one LSTM layer."""

    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int) -> "LstmState":
        return cls(np.zeros(hidden_size, np.float32), np.zeros(hidden_size, np.float32))


def lstm_cell_step(x, state: LstmState, params: LstmCellParams) -> tuple[np.ndarray, LstmState]:
    """Advance one LSTM cell; returns (output vector h', new state)."""
    xa = _as_f32_vector(x, "x")
    if xa.size != params.input_size:
        raise DimensionError(
            f"lstm input size {xa.size} does not match params input size {params.input_size}"
        )
    if state.h.shape[0] != params.hidden_size:
        raise DimensionError(
            f"lstm state size {state.h.shape[0]} does not match hidden size {params.hidden_size}"
        )
    h, c = _impl.lstm_cell(xa, state.h, state.c, params.w_x, params.w_h, params.b)
    return h, LstmState(h, c)


def lstm_stack_step(
    x, states: tuple[LstmState, ...], layers: tuple[LstmCellParams, ...]
) -> tuple[np.ndarray, tuple[LstmState, ...]]:
    """Advance a stack of LSTM layers one step; input feeds layer 0."""
    if len(states) != len(layers):
        raise DimensionError(f"{len(states)} states for {len(layers)} layers")
    out = x
    new_states = []
    for state, params in zip(states, layers):
        out, new = lstm_cell_step(out, state, params)
        new_states.append(new)
    return out, tuple(new_states)


def zero_stack_states(layers) -> tuple[LstmState, ...]:
    return tuple(LstmState.zeros(p.hidden_size) for p in layers)


def lstm_stack_forward(sequence, layers, bidirectional: bool = False, projections=None):
    """Run an LSTM stack over a full sequence from zero initial state.

    sequence: (T, D) array or list of vectors.  For the unidirectional case
    ``layers`` is a list of LstmCellParams.  For the bidirectional case it is
    a list of (forward, backward) pairs and ``projections`` a matching list
    of (W, b) applied to the per-frame concatenation of both directions.
    Returns a (T, out_dim) float32 array.
    """
    seq = np.ascontiguousarray(sequence, dtype=np.float32)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise DimensionError(f"sequence must be (T>=1, D), got shape {seq.shape}")
    if len(layers) == 0:
        raise DimensionError("at least one layer is required")

    if not bidirectional:
        out = seq
        for params in layers:
            state = LstmState.zeros(params.hidden_size)
            rows = []
            for t in range(out.shape[0]):
                h, state = lstm_cell_step(out[t], state, params)
                rows.append(h)
            out = np.stack(rows)
        return out

    if projections is None or len(projections) != len(layers):
        raise DimensionError("bidirectional stack needs one projection per layer")
    out = seq
    for (fwd, bwd), (pw, pb) in zip(layers, projections):
        fwd_rows = []
        state = LstmState.zeros(fwd.hidden_size)
        for t in range(out.shape[0]):
            h, state = lstm_cell_step(out[t], state, fwd)
            fwd_rows.append(h)
        bwd_rows = []
        state = LstmState.zeros(bwd.hidden_size)
        for t in range(out.shape[0] - 1, -1, -1):
            h, state = lstm_cell_step(out[t], state, bwd)
            bwd_rows.append(h)
        bwd_rows.reverse()
        out = np.stack(
            [affine(np.concatenate([f, r]), pw, pb) for f, r in zip(fwd_rows, bwd_rows)]
        )
    return out
