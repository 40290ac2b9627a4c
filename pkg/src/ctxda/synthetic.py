"""Deterministic synthetic corpora for desk-scale benchmarks.

Two generators live here. `make_conversations` builds a labeled two-party
corpus where the class of an utterance is a fixed function of a keyword in
the preceding utterance (with a dedicated opening class at position 0), so
any gain over the majority baseline must come from reading context.
`text_corpus` emits English-like prose of arbitrary size for language
model training runs.
"""

from __future__ import annotations

from ctxda.corpus import Conversation, LabelVocab, Utterance
from ctxda.numkernel import Rng

KEYWORDS = ("amber", "birch", "coral", "dune", "ember", "frost")
OPEN_LABEL = "open"

_OPENERS = ("well", "so", "okay", "right", "anyway", "you know", "I mean", "hmm")
_VERBS = ("looks", "seems", "feels", "sounds", "gets", "stays")
_ADJS = ("fine", "odd", "close", "bright", "quiet", "heavy", "plain", "sharp")

_TEMPLATES = (
    "{op} the {kw} {verb} {adj} .",
    "{op} , that {kw} {verb} really {adj} .",
    "I think the {kw} {verb} {adj} now .",
    "{op} the {adj} {kw} just {verb} .",
)


def synthetic_vocab() -> LabelVocab:
    return LabelVocab(sorted([OPEN_LABEL] + [f"after-{kw}" for kw in KEYWORDS]))


def _utterance_text(rng: Rng, keyword: str) -> str:
    template = _TEMPLATES[rng.randint(len(_TEMPLATES))]
    return template.format(
        op=_OPENERS[rng.randint(len(_OPENERS))],
        kw=keyword,
        verb=_VERBS[rng.randint(len(_VERBS))],
        adj=_ADJS[rng.randint(len(_ADJS))],
    )


def make_conversations(n_conversations: int, seed: int,
                       min_utterances: int = 4,
                       max_utterances: int = 9) -> tuple[list[Conversation], LabelVocab]:
    """Conversations whose labels are decided by the previous utterance.

    Utterance t carries the label 'after-<keyword of utterance t-1>'; the
    first utterance of every conversation carries the opening label. The
    keyword is the only label-bearing token, and it never identifies the
    utterance's own label.
    """
    if n_conversations <= 0:
        raise ValueError("need at least one conversation")
    vocab = synthetic_vocab()
    rng = Rng(seed)
    conversations = []
    for k in range(n_conversations):
        cid = f"syn{k:05d}"
        length = min_utterances + rng.randint(max_utterances - min_utterances + 1)
        utterances = []
        prev_keyword = None
        for t in range(length):
            keyword = KEYWORDS[rng.randint(len(KEYWORDS))]
            text = _utterance_text(rng, keyword)
            name = OPEN_LABEL if prev_keyword is None else f"after-{prev_keyword}"
            utterances.append(Utterance(
                conversation_id=cid,
                index=t,
                speaker="AB"[(t + k) % 2],
                raw_text=text,
                clean_text=text,
                raw_tag=name,
                label=vocab.index(name),
            ))
            prev_keyword = keyword
        conversations.append(Conversation(cid, utterances))
    return conversations, vocab


def synthetic_test_ids(conversations: list[Conversation]) -> list[str]:
    """Every tenth conversation is held out for testing."""
    return [c.id for k, c in enumerate(conversations) if k % 10 == 9]


_COMMON = (
    "the of and to a in that it is was he for on are as with his they at be "
    "this have from or one had by word but not what all were we when your can "
    "said there use an each which she do how their if will up other about out "
    "many then them these so some her would make like him into time has look "
    "two more write go see number no way could people my than first water been "
    "call who oil its now find long down day did get come made may part over"
).split()

_CONTENT = (
    "house river morning garden window winter summer evening market street "
    "mountain shadow silver letter journey harbor village meadow forest stone "
    "bridge lantern orchard"
).split()

# F: capitalized function word, f: function word, n: content word
_SENTENCE_SHAPES = (
    ("F", "f", "n", "f", "n", "f"),
    ("F", "f", "n", "n", "f"),
    ("F", "n", "f", "f", "n", "f", "n", "f"),
    ("F", "f", "f", "n", "f"),
)


def text_corpus(n_bytes: int, seed: int) -> bytes:
    """English-like prose of at least n_bytes, deterministic in the seed.

    Sentences mix frequent function words with a smaller content-word pool;
    the first word is capitalized and sentences join into paragraphs. Fresh
    text is generated throughout, so a held-out suffix is genuinely unseen.
    """
    if n_bytes <= 0:
        raise ValueError("n_bytes must be positive")
    rng = Rng(seed)
    pieces: list[str] = []
    size = 0
    sentence_in_paragraph = 0
    while size < n_bytes:
        shape = _SENTENCE_SHAPES[rng.randint(len(_SENTENCE_SHAPES))]
        words = []
        for kind in shape:
            pool = _CONTENT if kind == "n" else _COMMON
            word = pool[rng.randint(len(pool))]
            if kind == "F":
                word = word.capitalize()
            words.append(word)
        sentence = " ".join(words) + "."
        sentence_in_paragraph += 1
        if sentence_in_paragraph >= 5 + rng.randint(4):
            sentence += "\n"
            sentence_in_paragraph = 0
        else:
            sentence += " "
        pieces.append(sentence)
        size += len(sentence)
    return "".join(pieces).encode("utf-8")[:n_bytes]
