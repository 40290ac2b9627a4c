"""Acceptance suite: one test per release criterion, with a PASS line each.

Run with `pytest tests/test_acceptance.py -v -s`. The Switchboard criterion
is conditional on a local copy of the corpus (CTXDA_SWDA_DIR or ./swda) and
skips otherwise; everything else is self-contained and desk-scale.
"""

import csv
import filecmp
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from ctxda import charlm, classifier, corpus, encoder, synthetic, trainer
from ctxda.cli import main as cli_main
from ctxda.numkernel import Rng, clip_global_norm, finite_difference_check, global_norm, softmax
from ctxda.trainer import TrainConfig


def _cli(*argv):
    assert cli_main([str(a) for a in argv]) == 0


def _vector_windows(conversations, table, row_of, n):
    windows = [w for c in conversations for w in corpus.make_windows(c, n)]
    return trainer.vector_windows(windows, table, row_of)


def test_criterion_1_gradient_oracles():
    start = time.time()

    lm_params = charlm.init_char_lm(8, 4, seed=1).astype(np.float64)
    seq = np.frombuffer(b"the cat sat.", dtype=np.uint8)
    assert seq.size == 12
    inputs, targets = seq[:-1][None, :], seq[1:][None, :]
    _, lm_grads = charlm.lm_loss_and_grads(lm_params, inputs, targets)

    def lm_loss_fn(plist):
        return charlm.lm_loss_and_grads(
            charlm.CharLMParams.from_list(plist), inputs, targets)[0]

    lm_err = finite_difference_check(lm_loss_fn, lm_params.to_list(), lm_grads,
                                     rng=Rng(42), max_coords=200)
    assert lm_err < 1e-4

    rnn_params = classifier.init_context_rnn(8, 6, 5, seed=2).astype(np.float64)
    window = Rng(3).uniform_array((4, 6), -1.0, 1.0, dtype=np.float64)
    rnn_grads, _, _ = classifier.rnn_backward(rnn_params, window, 3)

    def rnn_loss_fn(plist):
        return classifier.rnn_backward(
            classifier.ContextRNNParams.from_list(plist), window, 3)[1]

    rnn_err = finite_difference_check(rnn_loss_fn, rnn_params.to_list(), rnn_grads,
                                      max_coords=None)
    assert rnn_err < 1e-4

    elapsed = time.time() - start
    assert elapsed < 60
    print(f"\nACCEPTANCE 1 PASS: BPTT vs central differences, "
          f"LM err {lm_err:.2e}, RNN err {rnn_err:.2e}, {elapsed:.1f}s")


def test_criterion_2_structural_invariants(tmp_path):
    start = time.time()
    rng = Rng(0)

    # softmax normalization and shift invariance
    for _ in range(50):
        logits = rng.uniform_array(11, -40.0, 40.0, dtype=np.float64)
        p = softmax(logits)
        assert abs(p.sum() - 1.0) <= 1e-6 and (p > 0).all()
        assert np.allclose(p, softmax(logits + 1234.5), atol=1e-9)

    # clip idempotence and norm bound (float64)
    for _ in range(20):
        grads = [rng.uniform_array((4, 5), -9.0, 9.0, dtype=np.float64),
                 rng.uniform_array(13, -9.0, 9.0, dtype=np.float64)]
        once = clip_global_norm(grads, 1.0)
        twice = clip_global_norm(once, 1.0)
        assert global_norm(once) <= 1.0 + 1e-9
        assert all(np.array_equal(a, b) for a, b in zip(once, twice))

    # hidden states confined to (0, 1): encoder vectors lie in [-1, 1], and
    # the float64 path stays strictly inside even for extreme inputs
    params = classifier.init_context_rnn(8, 4, 5, seed=1)
    for _ in range(20):
        X = rng.uniform_array((6, 4), -1.0, 1.0, dtype=np.float32)
        H, _ = classifier.rnn_forward(params, X)
        assert (H > 0).all() and (H < 1).all()
    params64 = params.astype(np.float64)
    for _ in range(5):
        X = rng.uniform_array((6, 4), -30.0, 30.0, dtype=np.float64)
        H, _ = classifier.rnn_forward(params64, X)
        assert (H > 0).all() and (H < 1).all()

    # window construction: count, boundaries, consecutiveness
    conversations, _ = synthetic.make_conversations(8, seed=5)
    for conv in conversations:
        for n in (0, 1, 3, 7):
            windows = corpus.make_windows(conv, n)
            assert len(windows) == len(conv.utterances)
            for t, w in enumerate(windows):
                assert len(w) == min(t, n) + 1
                assert {u.conversation_id for u in w.utterances} == {conv.id}
                idx = [u.index for u in w.utterances]
                assert idx == list(range(idx[0], idx[0] + len(idx)))

    # model-file round-trips: language model, classifier, vector cache
    lm = charlm.init_char_lm(16, 8, seed=9)
    charlm.save_lm(tmp_path / "lm.bin", lm)
    lm2 = charlm.load_lm(tmp_path / "lm.bin")
    assert all(a.tobytes() == b.tobytes() for a, b in zip(lm.to_list(), lm2.to_list()))

    clf = classifier.init_context_rnn(8, 16, 7, seed=3)
    classifier.save_classifier(tmp_path / "clf.bin", clf, [f"l{k}" for k in range(7)],
                               {"mode": "average", "context_size": 2, "speaker": False})
    clf2, labels, meta = classifier.load_classifier(tmp_path / "clf.bin")
    assert all(a.tobytes() == b.tobytes() for a, b in zip(clf.to_list(), clf2.to_list()))
    assert labels == [f"l{k}" for k in range(7)] and meta["context_size"] == 2

    table = encoder.encode_corpus(lm, ["one", "two", "three"], mode="concat",
                                  cache_path=tmp_path / "vecs.bin")
    table2, mode, _ = encoder.load_vectors(tmp_path / "vecs.bin")
    assert mode == "concat" and np.array_equal(table, table2)

    elapsed = time.time() - start
    assert elapsed < 60
    print(f"\nACCEPTANCE 2 PASS: structural invariants and round-trips, {elapsed:.1f}s")


def test_criterion_3_synthetic_context_benchmark():
    start = time.time()
    conversations, vocab = synthetic.make_conversations(5000, seed=0)
    test_ids = set(synthetic.synthetic_test_ids(conversations))
    text = "".join(u.clean_text + "\n" for c in conversations
                   for u in c.utterances).encode("utf-8")
    lm_config = charlm.LMConfig(d_lm=64, e=8, seq_len=64, batch_size=16,
                                steps=300, seed=0, lr=2e-3)
    lm = charlm.train_lm(text, lm_config)
    texts = [u.clean_text for c in conversations for u in c.utterances]
    table = encoder.encode_corpus(lm, texts, mode="average")
    row_of = {}
    for c in conversations:
        for u in c.utterances:
            row_of[(c.id, u.index)] = len(row_of)
    train_convs = [c for c in conversations if c.id not in test_ids]
    test_convs = [c for c in conversations if c.id in test_ids]

    def experiment(n, repeats):
        config = TrainConfig(learning_rate=2e-3, max_epochs=30, patience=8,
                             batch_size=32, seed=100, context_size=n, hidden_size=64)
        return trainer.run_experiment(
            _vector_windows(train_convs, table, row_of, n),
            _vector_windows(test_convs, table, row_of, n),
            config, len(vocab), repeats=repeats)

    majority = trainer.majority_baseline(
        _vector_windows(train_convs, table, row_of, 0),
        _vector_windows(test_convs, table, row_of, 0))

    ctx1 = experiment(1, repeats=1).accuracies[0]
    assert ctx1 >= 0.95, f"context-1 accuracy {ctx1:.4f} below 0.95"

    ctx0 = experiment(0, repeats=5)
    ctx3 = experiment(3, repeats=5)
    assert ctx0.accuracies[0] <= majority + 0.10, \
        f"context-0 {ctx0.accuracies[0]:.4f} exceeds majority {majority:.4f} + 0.10"
    for k, (a0, a3) in enumerate(zip(ctx0.accuracies, ctx3.accuracies)):
        assert a3 >= a0, f"seed {100 + k}: context-3 {a3:.4f} < context-0 {a0:.4f}"

    elapsed = time.time() - start
    assert elapsed < 15 * 60
    print(f"\nACCEPTANCE 3 PASS: majority {majority:.3f}, context-1 {ctx1:.3f}, "
          f"context-0 {ctx0.mean:.3f}, context-3 {ctx3.mean:.3f} (5 seeds), "
          f"{elapsed:.0f}s")


def test_criterion_4_language_model_learns():
    start = time.time()
    text = synthetic.text_corpus(1_000_000, seed=7)
    config = charlm.LMConfig(d_lm=256, e=16, seq_len=128, batch_size=16,
                             steps=200, seed=0, lr=1e-3)
    heldout = charlm.heldout_slice(text, config)

    uniform = charlm.init_char_lm(config.d_lm, config.e, config.seed)
    uniform.w_out[:] = 0.0
    baseline = charlm.corpus_bpc(uniform, heldout)
    assert abs(baseline - 8.0) < 1e-6, f"uniform baseline {baseline} is not 8.0"

    params = charlm.train_lm(text, config)
    bpc = charlm.corpus_bpc(params, heldout)
    # threshold from the spec; the first calibration run reached ~2.2 bpc
    assert bpc <= 5.6, f"held-out bpc {bpc:.3f} above 5.6"

    elapsed = time.time() - start
    assert elapsed < 10 * 60
    print(f"\nACCEPTANCE 4 PASS: held-out bpc {baseline:.3f} -> {bpc:.3f} "
          f"at d_lm=256 in {elapsed:.0f}s")


def _swda_dir():
    env = os.environ.get("CTXDA_SWDA_DIR")
    if env and Path(env).is_dir():
        return Path(env)
    local = Path("swda")
    if local.is_dir():
        return local
    return None


def test_criterion_5_swda_conditional():
    root = _swda_dir()
    if root is None:
        pytest.skip("Switchboard corpus not present (set CTXDA_SWDA_DIR); "
                    "criterion is conditional on the corpus download")
    start = time.time()
    tag_map = corpus.default_tag_map()
    conversations = corpus.parse_corpus(root, tag_map=tag_map)
    train_convs, test_convs = corpus.split_corpus(conversations, corpus.default_test_ids())
    assert len(train_convs) == 1115, f"expected 1115 train, got {len(train_convs)}"
    assert len(test_convs) == 19, f"expected 19 test, got {len(test_convs)}"

    train_targets = [(np.zeros((1, 1), dtype=np.float32), u.label)
                     for c in train_convs for u in c.utterances]
    test_targets = [(np.zeros((1, 1), dtype=np.float32), u.label)
                    for c in test_convs for u in c.utterances]
    majority = trainer.majority_baseline(train_targets, test_targets)
    assert abs(majority - 0.315) <= 0.005, f"majority {majority:.4f} not 31.5% +/- 0.5"

    # trend check with a desk-scale encoder: context-3 mean over 3 runs >= context-0 mean
    text = "".join(u.clean_text + "\n" for c in train_convs
                   for u in c.utterances).encode("utf-8")
    lm_config = charlm.LMConfig(d_lm=64, e=8, seq_len=128, batch_size=16,
                                steps=500, seed=0, lr=2e-3)
    lm = charlm.train_lm(text, lm_config)
    texts = [u.clean_text for c in conversations for u in c.utterances]
    table = encoder.encode_corpus(lm, texts, mode="average")
    row_of = {}
    for c in conversations:
        for u in c.utterances:
            row_of[(c.id, u.index)] = len(row_of)

    def mean_accuracy(n):
        config = TrainConfig(learning_rate=1e-3, max_epochs=10, patience=3,
                             batch_size=32, seed=0, context_size=n, hidden_size=64)
        result = trainer.run_experiment(
            _vector_windows(train_convs, table, row_of, n),
            _vector_windows(test_convs, table, row_of, n),
            config, 42, repeats=3)
        return result.mean

    acc0 = mean_accuracy(0)
    acc3 = mean_accuracy(3)
    assert acc3 >= acc0, f"context-3 mean {acc3:.4f} below context-0 mean {acc0:.4f}"
    print(f"\nACCEPTANCE 5 PASS: 1115/19 split, majority {majority:.4f}, "
          f"context-0 {acc0:.4f} <= context-3 {acc3:.4f}, {time.time() - start:.0f}s")


def test_criterion_6_command_determinism(tmp_path):
    start = time.time()
    runs = []
    for tag in ("a", "b"):
        root = tmp_path / tag
        data = root / "data"
        _cli("prep", "--synthetic", "--conversations", 40, "--seed", 6, "--out", data)
        _cli("train-lm", "--corpus", data / "lm_corpus.txt", "--hidden", 16,
             "--embed", 8, "--seq-len", 32, "--steps", 25, "--seed", 1,
             "--out", root / "lm.bin")
        _cli("encode", "--lm", root / "lm.bin", "--data", data,
             "--mode", "average", "--out", root / "vecs.bin")
        _cli("train", "--vecs", root / "vecs.bin", "--context", 1, "--hidden", 8,
             "--seed", 2, "--epochs", 4, "--patience", 4, "--out", root / "clf.bin")
        _cli("export-states", "--clf", root / "clf.bin", "--vecs", root / "vecs.bin",
             "--count", 10, "--context", 1, "--out", root / "states.csv")
        runs.append(root)
    a, b = runs
    compared = ["data/dataset.csv", "data/labels.txt", "data/lm_corpus.txt",
                "lm.bin", "vecs.bin", "vecs.bin.meta.csv", "vecs.bin.labels.txt",
                "clf.bin", "clf.bin.train.log", "states.csv"]
    for name in compared:
        assert filecmp.cmp(a / name, b / name, shallow=False), f"{name} differs"
    elapsed = time.time() - start
    print(f"\nACCEPTANCE 6 PASS: {len(compared)} artifacts byte-identical "
          f"across reruns, {elapsed:.0f}s")


def test_criterion_7_state_export(tmp_path):
    start = time.time()
    data = tmp_path / "data"
    _cli("prep", "--synthetic", "--conversations", 30, "--seed", 4, "--out", data)
    _cli("train-lm", "--corpus", data / "lm_corpus.txt", "--hidden", 16,
         "--embed", 8, "--seq-len", 32, "--steps", 25, "--seed", 0,
         "--out", tmp_path / "lm.bin")
    _cli("encode", "--lm", tmp_path / "lm.bin", "--data", data,
         "--mode", "average", "--out", tmp_path / "vecs.bin")
    _cli("train", "--vecs", tmp_path / "vecs.bin", "--context", 2, "--hidden", 12,
         "--seed", 3, "--epochs", 3, "--patience", 3, "--out", tmp_path / "clf.bin")
    _cli("export-states", "--clf", tmp_path / "clf.bin", "--vecs", tmp_path / "vecs.bin",
         "--count", 2000, "--context", 2, "--out", tmp_path / "states.csv")

    test_utterances = 0
    with open(data / "dataset.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            test_utterances += row["split"] == "test"

    with open(tmp_path / "states.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == min(2000, test_utterances)
    assert set(rows[0]) == {f"h{k}" for k in range(12)} | {"label", "conversation", "index"}
    for row in rows:
        for k in range(12):
            v = float(row[f"h{k}"])
            assert 0.0 < v < 1.0
    print(f"\nACCEPTANCE 7 PASS: exported {len(rows)} rows of min(2000, "
          f"{test_utterances}) with states in (0,1), {time.time() - start:.0f}s")
