"""Utterance vectors from the frozen byte-level language model.

An utterance is encoded by stepping the mLSTM over its UTF-8 bytes from a
zero state. Three vector modes exist: the hidden state after the last byte
("last"), the mean of hidden states over all byte positions ("average"),
and their concatenation ("concat"). Vectors can be augmented with a
two-dimensional speaker one-hot. A corpus-wide encoding pass is cached to
disk keyed by a hash of the model, mode and normalization settings, since
the model is frozen and the vectors never change.
"""

from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ctxda import container
from ctxda.charlm import CharLMParams, _sigmoid, lm_to_bytes
from ctxda.numkernel import DTYPE, require_finite

log = logging.getLogger(__name__)

MODES = ("last", "average", "concat")
VEC_MAGIC = b"CTXDA-VEC1"
PLACEHOLDER_BYTE = 0x20  # single space stands in for empty utterances

SPEAKER_BITS = {"A": (1.0, 0.0), "B": (0.0, 1.0)}


@dataclass
class UtteranceVector:
    values: np.ndarray
    mode: str
    speaker_augmented: bool = False

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def vector_dim(d_lm: int, mode: str, speaker_augmented: bool = False) -> int:
    if mode not in MODES:
        raise ValueError(f"unknown vector mode {mode!r}")
    base = 2 * d_lm if mode == "concat" else d_lm
    return base + (2 if speaker_augmented else 0)


def _to_bytes(text) -> bytes:
    return text.encode("utf-8") if isinstance(text, str) else bytes(text)


def _encode_group(params: CharLMParams, byte_strings: list[bytes]):
    """Encode a group of byte strings together; returns (last, average).

    Sequences are padded to the longest length and frozen once finished,
    so each row's result is independent of the rest of the group.
    """
    G = len(byte_strings)
    d = params.d_lm
    lengths = np.array([len(b) for b in byte_strings], dtype=np.int64)
    T = int(lengths.max())
    mat = np.zeros((G, T), dtype=np.uint8)
    for k, b in enumerate(byte_strings):
        mat[k, :len(b)] = np.frombuffer(b, dtype=np.uint8)
    h = np.zeros((G, d), dtype=DTYPE)
    c = np.zeros((G, d), dtype=DTYPE)
    total = np.zeros((G, d), dtype=DTYPE)
    x_all = params.embed[mat]
    for t in range(T):
        active = (t < lengths)[:, None]
        x = x_all[:, t]
        m = (x @ params.w_mx.T) * (h @ params.w_mh.T)
        i = _sigmoid(x @ params.w_ix.T + m @ params.w_im.T + params.b_i)
        f = _sigmoid(x @ params.w_fx.T + m @ params.w_fm.T + params.b_f)
        o = _sigmoid(x @ params.w_ox.T + m @ params.w_om.T + params.b_o)
        g = np.tanh(x @ params.w_cx.T + m @ params.w_cm.T + params.b_c)
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        h = np.where(active, h_new, h)
        c = np.where(active, c_new, c)
        total += np.where(active, h_new, 0.0)
    average = total / lengths[:, None].astype(DTYPE)
    return h, average


def encode(params: CharLMParams, text, mode: str = "average") -> UtteranceVector:
    """Encode one utterance; the recurrence starts from a zero state."""
    if mode not in MODES:
        raise ValueError(f"unknown vector mode {mode!r}")
    data = _to_bytes(text)
    if len(data) == 0:
        raise ValueError("cannot encode an empty utterance; substitute a placeholder byte")
    last, average = _encode_group(params, [data])
    if mode == "last":
        values = last[0]
    elif mode == "average":
        values = average[0]
    else:
        values = np.concatenate([last[0], average[0]])
    require_finite("utterance vector", values)
    return UtteranceVector(values=values, mode=mode)


def attach_speaker(vector: UtteranceVector, speaker: str) -> UtteranceVector:
    """Append the two-dimensional speaker one-hot: A -> [1,0], B -> [0,1]."""
    if vector.speaker_augmented:
        raise ValueError("vector is already speaker-augmented")
    if speaker not in SPEAKER_BITS:
        raise ValueError(f"unknown speaker {speaker!r}; expected 'A' or 'B'")
    bits = np.asarray(SPEAKER_BITS[speaker], dtype=vector.values.dtype)
    return UtteranceVector(
        values=np.concatenate([vector.values, bits]),
        mode=vector.mode,
        speaker_augmented=True,
    )


def _cache_key(params: CharLMParams, mode: str, normalize_tag: str) -> bytes:
    digest = hashlib.sha256()
    digest.update(lm_to_bytes(params))
    digest.update(mode.encode("utf-8"))
    digest.update(normalize_tag.encode("utf-8"))
    return digest.digest()


def save_vectors(path, table: np.ndarray, mode: str, key: bytes) -> None:
    if len(key) != 32:
        raise ValueError("cache key must be a 32-byte digest")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(VEC_MAGIC)
        fh.write(bytes([MODES.index(mode)]))
        container.write_u32(fh, table.shape[1])
        container.write_u32(fh, table.shape[0])
        fh.write(key)
        fh.write(np.ascontiguousarray(table, dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_vectors(path) -> tuple[np.ndarray, str, bytes]:
    with open(path, "rb") as fh:
        container.check_magic(fh, VEC_MAGIC)
        mode_tag = container.read_exact(fh, 1)[0]
        if mode_tag >= len(MODES):
            raise container.ModelFormatError(f"unknown mode tag {mode_tag}")
        dim = container.read_u32(fh)
        count = container.read_u32(fh)
        key = container.read_exact(fh, 32)
        raw = container.read_exact(fh, count * dim * 4)
        if fh.read(1):
            raise container.ModelFormatError("trailing bytes after vector records")
    table = np.frombuffer(raw, dtype="<f4").reshape(count, dim).copy()
    return table, MODES[mode_tag], key


def encode_corpus(params: CharLMParams, texts, mode: str = "average",
                  cache_path=None, normalize_tag: str = "", workers: int = 1,
                  group_size: int = 128) -> np.ndarray:
    """Encode utterances in order into an (N, dim) table, with disk caching.

    Grouping into fixed-size batches is a function of the input order only,
    so the table is identical for any worker count. A cache whose key does
    not match the current model/mode/normalization is recomputed.
    """
    if mode not in MODES:
        raise ValueError(f"unknown vector mode {mode!r}")
    texts = list(texts)
    key = _cache_key(params, mode, normalize_tag)
    dim = vector_dim(params.d_lm, mode)
    if cache_path is not None and os.path.exists(cache_path):
        try:
            table, cached_mode, cached_key = load_vectors(cache_path)
        except container.ModelFormatError as err:
            log.warning("vector cache %s unreadable (%s); re-encoding", cache_path, err)
        else:
            if (cached_mode == mode and cached_key == key
                    and table.shape == (len(texts), dim)):
                return table
            log.warning("vector cache %s is stale; re-encoding", cache_path)

    payloads = []
    for text in texts:
        data = _to_bytes(text)
        payloads.append(data if data else bytes([PLACEHOLDER_BYTE]))
    groups = [payloads[i:i + group_size] for i in range(0, len(payloads), group_size)]

    def run(group):
        return _encode_group(params, group)

    if workers > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, groups))
    else:
        results = [run(g) for g in groups]

    table = np.empty((len(payloads), dim), dtype=DTYPE)
    row = 0
    for last, average in results:
        n = last.shape[0]
        if mode == "last":
            table[row:row + n] = last
        elif mode == "average":
            table[row:row + n] = average
        else:
            table[row:row + n, :params.d_lm] = last
            table[row:row + n, params.d_lm:] = average
        row += n
    require_finite("vector table", table)
    if cache_path is not None:
        save_vectors(cache_path, table, mode, key)
    return table
