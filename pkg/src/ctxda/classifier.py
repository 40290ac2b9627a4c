"""Classification heads over utterance vectors.

Two models: a context recurrent network that reads the window of utterance
vectors ending at the current utterance,

    h_t = sigmoid(w_rec h_{t-1} + w_in s_t + bias),   h_0 = 0
    p   = softmax(w_out h_T)                          (no output bias)

with the hidden state reset to zero at the start of every window, and a
single-hidden-layer tanh MLP baseline that sees one utterance vector.
Gradients are hand-derived backpropagation (through time, for the RNN) and
finite-difference checked in the tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from ctxda import container
from ctxda.numkernel import DTYPE, Rng, require_finite, softmax

CLF_MAGIC = b"CTXDA-CLF1"

RNN_FIELDS = ("w_rec", "w_in", "bias", "w_out")
MLP_FIELDS = ("w_hidden", "b_hidden", "w_out", "b_out")


@dataclass
class ContextRNNParams:
    w_rec: np.ndarray   # (d_h, d_h)
    w_in: np.ndarray    # (d_h, d_in)
    bias: np.ndarray    # (d_h,)
    w_out: np.ndarray   # (n_classes, d_h)

    @property
    def d_h(self) -> int:
        return self.w_rec.shape[0]

    @property
    def d_in(self) -> int:
        return self.w_in.shape[1]

    @property
    def n_classes(self) -> int:
        return self.w_out.shape[0]

    def to_list(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in RNN_FIELDS]

    @classmethod
    def from_list(cls, arrays) -> "ContextRNNParams":
        return cls(**dict(zip(RNN_FIELDS, arrays)))

    def astype(self, dtype) -> "ContextRNNParams":
        return ContextRNNParams.from_list(
            [np.asarray(a, dtype=dtype).copy() for a in self.to_list()])

    def copy(self) -> "ContextRNNParams":
        return ContextRNNParams.from_list([a.copy() for a in self.to_list()])


def init_context_rnn(d_h: int, d_in: int, n_classes: int, seed) -> ContextRNNParams:
    rng = seed if isinstance(seed, Rng) else Rng(seed)

    def uf(rows, cols, fan_in):
        s = 1.0 / math.sqrt(fan_in)
        return rng.uniform_array((rows, cols), -s, s, dtype=DTYPE)

    return ContextRNNParams(
        w_rec=uf(d_h, d_h, d_h),
        w_in=uf(d_h, d_in, d_in),
        bias=np.zeros(d_h, dtype=DTYPE),
        w_out=uf(n_classes, d_h, d_h),
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _check_window(params: ContextRNNParams, window_vectors) -> np.ndarray:
    X = np.asarray(window_vectors)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("window must be a non-empty (T, d_in) array")
    if X.shape[1] != params.d_in:
        raise ValueError(f"window vectors have dim {X.shape[1]}, model expects {params.d_in}")
    require_finite("window vectors", X)
    return X


def rnn_forward(params: ContextRNNParams, window_vectors):
    """Hidden trajectory and class distribution for one window.

    The state is re-initialized to zero at the start of the window; the
    distribution is read at the final (current) utterance.
    """
    X = _check_window(params, window_vectors)
    T = X.shape[0]
    H = np.empty((T, params.d_h), dtype=X.dtype)
    h = np.zeros(params.d_h, dtype=X.dtype)
    for t in range(T):
        h = _sigmoid(params.w_rec @ h + params.w_in @ X[t] + params.bias)
        H[t] = h
    probs = softmax(params.w_out @ h)
    return H, probs


def rnn_backward(params: ContextRNNParams, window_vectors, target_label: int):
    """Exact BPTT gradients of the window cross-entropy.

    Returns (grads, loss, probs) with grads ordered as RNN_FIELDS:
    recurrent matrix, input matrix, bias, output matrix.
    """
    X = _check_window(params, window_vectors)
    if not 0 <= target_label < params.n_classes:
        raise IndexError(f"target {target_label} out of range")
    H, probs = rnn_forward(params, X)
    T = X.shape[0]
    dlogits = probs.copy()
    dlogits[target_label] -= 1.0
    g_w_out = np.outer(dlogits, H[-1])
    g_w_rec = np.zeros_like(params.w_rec)
    g_w_in = np.zeros_like(params.w_in)
    g_bias = np.zeros_like(params.bias)
    dh = params.w_out.T @ dlogits
    for t in range(T - 1, -1, -1):
        h = H[t]
        da = dh * h * (1.0 - h)
        h_prev = H[t - 1] if t > 0 else np.zeros_like(h)
        g_w_rec += np.outer(da, h_prev)
        g_w_in += np.outer(da, X[t])
        g_bias += da
        dh = params.w_rec.T @ da
    pt = probs[target_label]
    if pt < 1e-12:
        pt = probs.dtype.type(1e-12)
    loss = -np.log(pt)
    return [g_w_rec, g_w_in, g_bias, g_w_out], loss, probs


def rnn_forward_batch(params: ContextRNNParams, X: np.ndarray):
    """Batched forward over windows of equal length, X of shape (B, T, d_in)."""
    B, T, _ = X.shape
    H = np.empty((T, B, params.d_h), dtype=X.dtype)
    h = np.zeros((B, params.d_h), dtype=X.dtype)
    for t in range(T):
        h = _sigmoid(h @ params.w_rec.T + X[:, t] @ params.w_in.T + params.bias)
        H[t] = h
    logits = h @ params.w_out.T
    return H, softmax(logits)


def rnn_loss_and_grads(params: ContextRNNParams, X: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy over a batch of equal-length windows, plus gradients."""
    B, T, _ = X.shape
    H, probs = rnn_forward_batch(params, X)
    picked = np.maximum(probs[np.arange(B), targets], 1e-12)
    loss = float(-np.log(picked).mean())
    dlogits = probs.copy()
    dlogits[np.arange(B), targets] -= 1.0
    dlogits /= B
    g_w_out = dlogits.T @ H[-1]
    dh = dlogits @ params.w_out
    g_w_rec = np.zeros_like(params.w_rec)
    g_w_in = np.zeros_like(params.w_in)
    g_bias = np.zeros_like(params.bias)
    for t in range(T - 1, -1, -1):
        h = H[t]
        da = dh * h * (1.0 - h)
        h_prev = H[t - 1] if t > 0 else np.zeros_like(h)
        g_w_rec += da.T @ h_prev
        g_w_in += da.T @ X[:, t]
        g_bias += da.sum(axis=0)
        dh = da @ params.w_rec
    return loss, [g_w_rec, g_w_in, g_bias, g_w_out]


def rnn_batch_loss(params: ContextRNNParams, X: np.ndarray, targets: np.ndarray) -> float:
    B = X.shape[0]
    _, probs = rnn_forward_batch(params, X)
    picked = np.maximum(probs[np.arange(B), targets], 1e-12)
    return float(-np.log(picked).mean())


def predict(params: ContextRNNParams, window_vectors) -> int:
    """Argmax class for one window; ties break toward the lowest index."""
    _, probs = rnn_forward(params, window_vectors)
    return int(np.argmax(probs))


def predict_batch(params: ContextRNNParams, X: np.ndarray) -> np.ndarray:
    _, probs = rnn_forward_batch(params, X)
    return np.argmax(probs, axis=1)


@dataclass
class MLPParams:
    w_hidden: np.ndarray   # (d_hidden, d_in)
    b_hidden: np.ndarray   # (d_hidden,)
    w_out: np.ndarray      # (n_classes, d_hidden)
    b_out: np.ndarray      # (n_classes,)

    def to_list(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in MLP_FIELDS]

    @classmethod
    def from_list(cls, arrays) -> "MLPParams":
        return cls(**dict(zip(MLP_FIELDS, arrays)))

    def astype(self, dtype) -> "MLPParams":
        return MLPParams.from_list([np.asarray(a, dtype=dtype).copy() for a in self.to_list()])


def init_mlp(d_hidden: int, d_in: int, n_classes: int, seed) -> MLPParams:
    rng = seed if isinstance(seed, Rng) else Rng(seed)

    def uf(rows, cols, fan_in):
        s = 1.0 / math.sqrt(fan_in)
        return rng.uniform_array((rows, cols), -s, s, dtype=DTYPE)

    return MLPParams(
        w_hidden=uf(d_hidden, d_in, d_in),
        b_hidden=np.zeros(d_hidden, dtype=DTYPE),
        w_out=uf(n_classes, d_hidden, d_hidden),
        b_out=np.zeros(n_classes, dtype=DTYPE),
    )


def mlp_forward(params: MLPParams, vector) -> np.ndarray:
    v = require_finite("input vector", np.asarray(vector))
    if v.shape != (params.w_hidden.shape[1],):
        raise ValueError(f"vector dim {v.shape} does not match model {params.w_hidden.shape[1]}")
    hidden = np.tanh(params.w_hidden @ v + params.b_hidden)
    return softmax(params.w_out @ hidden + params.b_out)


def mlp_backward(params: MLPParams, vector, target_label: int):
    """Gradients of the single-vector cross-entropy, ordered as MLP_FIELDS."""
    v = np.asarray(vector)
    hidden = np.tanh(params.w_hidden @ v + params.b_hidden)
    probs = softmax(params.w_out @ hidden + params.b_out)
    if not 0 <= target_label < probs.shape[0]:
        raise IndexError(f"target {target_label} out of range")
    dlogits = probs.copy()
    dlogits[target_label] -= 1.0
    g_w_out = np.outer(dlogits, hidden)
    g_b_out = dlogits
    dhidden = params.w_out.T @ dlogits
    dz = dhidden * (1.0 - hidden * hidden)
    g_w_hidden = np.outer(dz, v)
    g_b_hidden = dz
    pt = probs[target_label]
    if pt < 1e-12:
        pt = probs.dtype.type(1e-12)
    loss = -np.log(pt)
    return [g_w_hidden, g_b_hidden, g_w_out, g_b_out], loss, probs


def save_classifier(path, params: ContextRNNParams, labels, meta: dict) -> None:
    """Self-describing model file: JSON config header plus weight sections.

    `meta` must carry mode, context_size, speaker and d_in so inference can
    rebuild windows without the training configuration.
    """
    header = dict(meta)
    header["labels"] = list(labels)
    header["d_h"] = params.d_h
    header["d_in"] = params.d_in
    for required in ("mode", "context_size", "speaker"):
        if required not in header:
            raise ValueError(f"classifier meta is missing {required!r}")
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CLF_MAGIC)
        container.write_u32(fh, len(blob))
        fh.write(blob)
        for name in RNN_FIELDS:
            container.write_section(fh, name, getattr(params, name))


def load_classifier(path) -> tuple[ContextRNNParams, list[str], dict]:
    with open(path, "rb") as fh:
        container.check_magic(fh, CLF_MAGIC)
        blob_len = container.read_u32(fh)
        try:
            header = json.loads(container.read_exact(fh, blob_len).decode("utf-8"))
        except ValueError as err:
            raise container.ModelFormatError(f"bad classifier header: {err}") from err
        sections = container.read_all_sections(fh)
    missing = [name for name in RNN_FIELDS if name not in sections]
    if missing:
        raise container.ModelFormatError(f"missing sections: {missing}")
    params = ContextRNNParams(
        w_rec=sections["w_rec"],
        w_in=sections["w_in"],
        bias=sections["bias"].reshape(-1),
        w_out=sections["w_out"],
    )
    labels = list(header.pop("labels"))
    if params.n_classes != len(labels):
        raise container.ModelFormatError(
            f"{params.n_classes} output rows but {len(labels)} labels")
    if params.d_h != header.get("d_h") or params.d_in != header.get("d_in"):
        raise container.ModelFormatError("header dims disagree with weight sections")
    return params, labels, header
