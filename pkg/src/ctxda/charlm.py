"""Byte-level multiplicative LSTM language model.

The recurrence routes the previous hidden state through an input-dependent
multiplicative intermediate before any gate sees it. With x the byte
embedding and h, c the previous hidden and cell vectors:

    m = (Wmx x) * (Wmh h)
    i = sigmoid(Wix x + Wim m + bi)
    f = sigmoid(Wfx x + Wfm m + bf)
    o = sigmoid(Wox x + Wom m + bo)
    g = tanh(Wcx x + Wcm m + bc)
    c' = f * c + i * g
    h' = o * tanh(c')

Next-byte logits are w_out @ h' with no bias. Gradients are hand-written
backpropagation through time, checked against central finite differences
in the test suite. The model vocabulary is the 256 byte values, so any
UTF-8 text is consumable without a tokenizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ctxda import container
from ctxda.numkernel import DTYPE, AdamState, Rng, adam_step, clip_global_norm, require_finite

VOCAB = 256
LM_MAGIC = b"CTXDA-LM1"

PARAM_FIELDS = (
    "embed",
    "w_mx", "w_mh",
    "w_ix", "w_im", "b_i",
    "w_fx", "w_fm", "b_f",
    "w_ox", "w_om", "b_o",
    "w_cx", "w_cm", "b_c",
    "w_out",
)


@dataclass
class CharLMParams:
    embed: np.ndarray   # (256, e) byte embedding table
    w_mx: np.ndarray    # (d, e)
    w_mh: np.ndarray    # (d, d)
    w_ix: np.ndarray    # (d, e)
    w_im: np.ndarray    # (d, d)
    b_i: np.ndarray     # (d,)
    w_fx: np.ndarray
    w_fm: np.ndarray
    b_f: np.ndarray
    w_ox: np.ndarray
    w_om: np.ndarray
    b_o: np.ndarray
    w_cx: np.ndarray
    w_cm: np.ndarray
    b_c: np.ndarray
    w_out: np.ndarray   # (256, d) output projection, bias-free

    @property
    def d_lm(self) -> int:
        return self.w_mh.shape[0]

    @property
    def e(self) -> int:
        return self.embed.shape[1]

    def to_list(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in PARAM_FIELDS]

    @classmethod
    def from_list(cls, arrays) -> "CharLMParams":
        return cls(**dict(zip(PARAM_FIELDS, arrays)))

    def astype(self, dtype) -> "CharLMParams":
        return CharLMParams.from_list([np.asarray(a, dtype=dtype).copy() for a in self.to_list()])

    def copy(self) -> "CharLMParams":
        return CharLMParams.from_list([a.copy() for a in self.to_list()])

    def validate(self) -> None:
        d, e = self.d_lm, self.e
        expect = {
            "embed": (VOCAB, e),
            "w_mx": (d, e), "w_mh": (d, d),
            "w_ix": (d, e), "w_im": (d, d), "b_i": (d,),
            "w_fx": (d, e), "w_fm": (d, d), "b_f": (d,),
            "w_ox": (d, e), "w_om": (d, d), "b_o": (d,),
            "w_cx": (d, e), "w_cm": (d, d), "b_c": (d,),
            "w_out": (VOCAB, d),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")


@dataclass
class LMState:
    h: np.ndarray
    c: np.ndarray


def zero_state(d_lm: int, dtype=DTYPE) -> LMState:
    return LMState(np.zeros(d_lm, dtype=dtype), np.zeros(d_lm, dtype=dtype))


def init_char_lm(d_lm: int, e: int, seed) -> CharLMParams:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)); forget bias +1."""
    rng = seed if isinstance(seed, Rng) else Rng(seed)

    def uf(rows, cols, fan_in):
        s = 1.0 / math.sqrt(fan_in)
        return rng.uniform_array((rows, cols), -s, s, dtype=DTYPE)

    d = d_lm
    params = CharLMParams(
        embed=uf(VOCAB, e, e),
        w_mx=uf(d, e, e), w_mh=uf(d, d, d),
        w_ix=uf(d, e, e), w_im=uf(d, d, d), b_i=np.zeros(d, dtype=DTYPE),
        w_fx=uf(d, e, e), w_fm=uf(d, d, d), b_f=np.ones(d, dtype=DTYPE),
        w_ox=uf(d, e, e), w_om=uf(d, d, d), b_o=np.zeros(d, dtype=DTYPE),
        w_cx=uf(d, e, e), w_cm=uf(d, d, d), b_c=np.zeros(d, dtype=DTYPE),
        w_out=uf(VOCAB, d, d),
    )
    params.validate()
    return params


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def mlstm_step(params: CharLMParams, state: LMState, byte: int) -> LMState:
    """Advance the recurrence by one byte; returns the new state."""
    if not 0 <= int(byte) < VOCAB:
        raise ValueError(f"byte {byte} out of range 0..255")
    require_finite("state.h", state.h)
    require_finite("state.c", state.c)
    x = params.embed[int(byte)]
    m = (params.w_mx @ x) * (params.w_mh @ state.h)
    i = _sigmoid(params.w_ix @ x + params.w_im @ m + params.b_i)
    f = _sigmoid(params.w_fx @ x + params.w_fm @ m + params.b_f)
    o = _sigmoid(params.w_ox @ x + params.w_om @ m + params.b_o)
    g = np.tanh(params.w_cx @ x + params.w_cm @ m + params.b_c)
    c = f * state.c + i * g
    h = o * np.tanh(c)
    return LMState(h, c)


def _as_byte_array(sequence) -> np.ndarray:
    if isinstance(sequence, (bytes, bytearray)):
        return np.frombuffer(bytes(sequence), dtype=np.uint8)
    arr = np.asarray(sequence)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError("byte sequence values must lie in 0..255")
    return arr.astype(np.uint8)


class _Trace:
    """Per-step tensors kept from the forward pass for BPTT."""

    __slots__ = ("x", "u", "v", "m", "i", "f", "o", "g", "c", "tc", "h", "h_prev", "c_prev")


def _forward(params: CharLMParams, inputs: np.ndarray):
    """Run the recurrence over inputs of shape (B, T); returns traces and H.

    H is stacked hidden states with shape (T, B, d). State starts at zero.
    """
    B, T = inputs.shape
    d = params.d_lm
    dtype = params.w_mh.dtype
    x_all = params.embed[inputs]               # (B, T, e)
    h = np.zeros((B, d), dtype=dtype)
    c = np.zeros((B, d), dtype=dtype)
    traces: list[_Trace] = []
    H = np.empty((T, B, d), dtype=dtype)
    for t in range(T):
        tr = _Trace()
        x = x_all[:, t]
        tr.x = x
        tr.h_prev = h
        tr.c_prev = c
        tr.u = x @ params.w_mx.T
        tr.v = h @ params.w_mh.T
        tr.m = tr.u * tr.v
        tr.i = _sigmoid(x @ params.w_ix.T + tr.m @ params.w_im.T + params.b_i)
        tr.f = _sigmoid(x @ params.w_fx.T + tr.m @ params.w_fm.T + params.b_f)
        tr.o = _sigmoid(x @ params.w_ox.T + tr.m @ params.w_om.T + params.b_o)
        tr.g = np.tanh(x @ params.w_cx.T + tr.m @ params.w_cm.T + params.b_c)
        c = tr.f * c + tr.i * tr.g
        tr.c = c
        tr.tc = np.tanh(c)
        h = tr.o * tr.tc
        tr.h = h
        traces.append(tr)
        H[t] = h
    return traces, H


def _loss_from_hidden(params: CharLMParams, H: np.ndarray, targets: np.ndarray,
                      want_grad: bool):
    """Mean next-byte cross-entropy from stacked hidden states.

    targets has shape (B, T) aligned with H's time axis. Returns
    (loss, d_H, g_w_out); the gradients are None when want_grad is false.
    """
    T, B, d = H.shape
    flat = H.reshape(T * B, d)
    logits = flat @ params.w_out.T
    logits -= logits.max(axis=1, keepdims=True)
    np.exp(logits, out=logits)
    probs = logits
    probs /= probs.sum(axis=1, keepdims=True)
    tgt = targets.T.reshape(-1)
    picked = np.maximum(probs[np.arange(T * B), tgt], 1e-12)
    # reduce in at least float64; keep wider dtypes (gradient checking) as-is
    if picked.dtype == np.float32:
        picked = picked.astype(np.float64)
    loss = -np.log(picked).mean()
    if not want_grad:
        return loss, None, None
    dlogits = probs
    dlogits[np.arange(T * B), tgt] -= 1.0
    dlogits /= T * B
    g_w_out = dlogits.T @ flat
    d_H = (dlogits @ params.w_out).reshape(T, B, d)
    return loss, d_H, g_w_out


def _backward(params: CharLMParams, inputs: np.ndarray, traces, d_H, g_w_out):
    """BPTT through the traces; returns gradients in PARAM_FIELDS order."""
    B, T = inputs.shape
    dtype = params.w_mh.dtype
    grads = {name: np.zeros_like(getattr(params, name)) for name in PARAM_FIELDS}
    grads["w_out"] = g_w_out
    d_X = np.empty((B, T, params.e), dtype=dtype)
    dh_next = np.zeros((B, params.d_lm), dtype=dtype)
    dc_next = np.zeros((B, params.d_lm), dtype=dtype)
    for t in reversed(range(T)):
        tr = traces[t]
        dh = d_H[t] + dh_next
        do = dh * tr.tc
        dao = do * tr.o * (1.0 - tr.o)
        dc = dc_next + dh * tr.o * (1.0 - tr.tc * tr.tc)
        df = dc * tr.c_prev
        daf = df * tr.f * (1.0 - tr.f)
        di = dc * tr.g
        dai = di * tr.i * (1.0 - tr.i)
        dg = dc * tr.i
        dag = dg * (1.0 - tr.g * tr.g)
        dc_next = dc * tr.f
        dm = dai @ params.w_im + daf @ params.w_fm + dao @ params.w_om + dag @ params.w_cm
        du = dm * tr.v
        dv = dm * tr.u
        d_X[:, t] = (dai @ params.w_ix + daf @ params.w_fx + dao @ params.w_ox
                     + dag @ params.w_cx + du @ params.w_mx)
        dh_next = dv @ params.w_mh
        grads["w_ix"] += dai.T @ tr.x
        grads["w_im"] += dai.T @ tr.m
        grads["b_i"] += dai.sum(axis=0)
        grads["w_fx"] += daf.T @ tr.x
        grads["w_fm"] += daf.T @ tr.m
        grads["b_f"] += daf.sum(axis=0)
        grads["w_ox"] += dao.T @ tr.x
        grads["w_om"] += dao.T @ tr.m
        grads["b_o"] += dao.sum(axis=0)
        grads["w_cx"] += dag.T @ tr.x
        grads["w_cm"] += dag.T @ tr.m
        grads["b_c"] += dag.sum(axis=0)
        grads["w_mx"] += du.T @ tr.x
        grads["w_mh"] += dv.T @ tr.h_prev
    np.add.at(grads["embed"], inputs.reshape(-1), d_X.reshape(-1, params.e))
    return [grads[name] for name in PARAM_FIELDS]


def lm_loss_and_grads(params: CharLMParams, inputs: np.ndarray, targets: np.ndarray):
    """Teacher-forced loss over (B, T) inputs/targets plus full gradients."""
    traces, H = _forward(params, inputs)
    loss, d_H, g_w_out = _loss_from_hidden(params, H, targets, want_grad=True)
    grads = _backward(params, inputs, traces, d_H, g_w_out)
    return loss, grads


def lm_loss(params: CharLMParams, byte_sequence) -> tuple[float, float]:
    """Average next-byte cross-entropy in nats and bits-per-character.

    Teacher-forced from a zero state: position t predicts byte t+1, so a
    sequence of n bytes is scored over n-1 positions.
    """
    seq = _as_byte_array(byte_sequence)
    if seq.size < 2:
        raise ValueError("lm_loss needs a sequence of at least 2 bytes")
    inputs = seq[:-1][None, :]
    targets = seq[1:][None, :]
    _, H = _forward(params, inputs)
    loss, _, _ = _loss_from_hidden(params, H, targets, want_grad=False)
    loss = float(loss)
    if not math.isfinite(loss):
        raise ValueError("lm_loss produced a non-finite value")
    return loss, loss / math.log(2.0)


def corpus_bpc(params: CharLMParams, byte_sequence, chunk: int = 512) -> float:
    """bpc over a long sequence, evaluated in independent chunks.

    The state resets at each chunk boundary, so this slightly overstates
    the loss of a stateful pass; it is a consistent yardstick for before
    and after training.
    """
    seq = _as_byte_array(byte_sequence)
    if seq.size < 2:
        raise ValueError("corpus_bpc needs a sequence of at least 2 bytes")
    total_nats = 0.0
    total_count = 0
    for start in range(0, seq.size - 1, chunk):
        piece = seq[start:start + chunk + 1]
        if piece.size < 2:
            break
        inputs = piece[:-1][None, :]
        targets = piece[1:][None, :]
        _, H = _forward(params, inputs)
        loss, _, _ = _loss_from_hidden(params, H, targets, want_grad=False)
        total_nats += float(loss) * (piece.size - 1)
        total_count += piece.size - 1
    return total_nats / total_count / math.log(2.0)


@dataclass
class LMConfig:
    d_lm: int = 256
    e: int = 16
    seq_len: int = 128
    batch_size: int = 16
    steps: int = 1000
    seed: int = 0
    lr: float = 1e-3
    clip_norm: float = 1.0
    heldout_fraction: float = 0.05


def train_lm(corpus_bytes, config: LMConfig) -> CharLMParams:
    """Truncated BPTT over random contiguous chunks with Adam and clipping.

    The last `heldout_fraction` of the corpus is never sampled for
    training; use corpus_bpc on heldout_slice() to measure generalization.
    """
    corpus = _as_byte_array(corpus_bytes)
    if corpus.size == 0:
        raise ValueError("train_lm: empty corpus")
    if corpus.size < config.seq_len + 1:
        raise ValueError(
            f"train_lm: corpus of {corpus.size} bytes is shorter than "
            f"sequence length {config.seq_len}")
    train = train_slice(corpus, config)
    if train.size < config.seq_len + 1:
        raise ValueError("train_lm: corpus too small to hold out a validation slice")
    rng = Rng(config.seed)
    params = init_char_lm(config.d_lm, config.e, rng)
    if config.steps == 0:
        return params
    plist = params.to_list()
    state = AdamState.for_params(plist, lr=config.lr)
    max_start = train.size - config.seq_len - 1
    for _ in range(config.steps):
        starts = [rng.randint(max_start + 1) for _ in range(config.batch_size)]
        chunks = np.stack([train[s:s + config.seq_len + 1] for s in starts])
        loss, grads = lm_loss_and_grads(
            CharLMParams.from_list(plist), chunks[:, :-1], chunks[:, 1:])
        if not math.isfinite(loss):
            raise ValueError("train_lm: loss diverged to a non-finite value")
        grads = clip_global_norm(grads, config.clip_norm)
        plist, state = adam_step(plist, grads, state)
    return CharLMParams.from_list(plist)


def heldout_slice(corpus_bytes, config: LMConfig) -> np.ndarray:
    corpus = _as_byte_array(corpus_bytes)
    n_held = max(config.seq_len + 1, int(corpus.size * config.heldout_fraction))
    return corpus[corpus.size - n_held:]


def train_slice(corpus_bytes, config: LMConfig) -> np.ndarray:
    corpus = _as_byte_array(corpus_bytes)
    n_held = max(config.seq_len + 1, int(corpus.size * config.heldout_fraction))
    return corpus[:corpus.size - n_held]


def save_lm(path, params: CharLMParams) -> None:
    params.validate()
    with open(path, "wb") as fh:
        fh.write(LM_MAGIC)
        container.write_u32(fh, params.d_lm)
        container.write_u32(fh, params.e)
        for name in PARAM_FIELDS:
            container.write_section(fh, name, getattr(params, name))


def lm_to_bytes(params: CharLMParams) -> bytes:
    import io

    buf = io.BytesIO()
    buf.write(LM_MAGIC)
    container.write_u32(buf, params.d_lm)
    container.write_u32(buf, params.e)
    for name in PARAM_FIELDS:
        container.write_section(buf, name, getattr(params, name))
    return buf.getvalue()


def load_lm(path) -> CharLMParams:
    with open(path, "rb") as fh:
        container.check_magic(fh, LM_MAGIC)
        d = container.read_u32(fh)
        e = container.read_u32(fh)
        sections = container.read_all_sections(fh)
    missing = [name for name in PARAM_FIELDS if name not in sections]
    if missing:
        raise container.ModelFormatError(f"missing sections: {missing}")
    extra = [name for name in sections if name not in PARAM_FIELDS]
    if extra:
        raise container.ModelFormatError(f"unexpected sections: {extra}")
    arrays = []
    for name in PARAM_FIELDS:
        a = sections[name]
        if name.startswith("b_"):
            a = a.reshape(-1)
        arrays.append(a)
    params = CharLMParams.from_list(arrays)
    try:
        params.validate()
    except ValueError as err:
        raise container.ModelFormatError(str(err)) from err
    if params.d_lm != d or params.e != e:
        raise container.ModelFormatError(
            f"header dims ({d}, {e}) disagree with sections ({params.d_lm}, {params.e})")
    return params
