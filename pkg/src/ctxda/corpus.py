"""Switchboard-style conversation ingestion and context-window construction.

Transcript files are comma-separated, one utterance per row, with at least
the columns conversation_no, caller, act_tag and text (extra columns are
ignored). Raw act tags carry diacritics, multi-tags and continuations; a
data-driven mapping file collapses them to the classifier's label scheme.
The shipped default mapping produces exactly 42 classes.
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

DEFAULT_MAP_RESOURCE = "damsl_42_map.tsv"
DEFAULT_TEST_IDS_RESOURCE = "swda_test_ids.txt"
REQUIRED_COLUMNS = ("conversation_no", "caller", "act_tag", "text")
SPEAKERS = ("A", "B")


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Utterance:
    conversation_id: str
    index: int
    speaker: str
    raw_text: str
    clean_text: str
    raw_tag: str
    label: int


@dataclass
class Conversation:
    id: str
    utterances: list[Utterance]


@dataclass(frozen=True)
class ContextWindow:
    """The current utterance preceded by up to n same-conversation utterances."""

    utterances: tuple[Utterance, ...]

    @property
    def target(self) -> int:
        return self.utterances[-1].label

    def __len__(self) -> int:
        return len(self.utterances)


class TagMap:
    """Ordered first-match-wins rules mapping raw act tags to class labels.

    A pattern either matches exactly or, when it ends with '*', matches any
    tag starting with the prefix before the '*'. The final rule must be the
    catch-all '*'; raw tags that only reach it are recorded in `unmapped`.
    """

    def __init__(self, rules: list[tuple[str, str]]):
        if not rules:
            raise CorpusFormatError("tag map has no rules")
        if rules[-1][0] != "*":
            raise CorpusFormatError("tag map must end with a catch-all '*' rule")
        self.rules = list(rules)
        self.labels = sorted({label for _, label in rules})
        self.fallback_label = rules[-1][1]
        self.unmapped: Counter[str] = Counter()

    @classmethod
    def from_file(cls, path) -> "TagMap":
        rules = []
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise CorpusFormatError(
                    f"{path}:{lineno}: expected 'pattern<TAB>label', got {line!r}")
            rules.append((parts[0], parts[1]))
        return cls(rules)

    def collapse(self, raw_tag: str) -> str:
        tag = raw_tag.strip()
        for pos, (pattern, label) in enumerate(self.rules):
            if pattern.endswith("*"):
                matched = tag.startswith(pattern[:-1])
            else:
                matched = tag == pattern
            if matched:
                if pos == len(self.rules) - 1:
                    self.unmapped[tag] += 1
                return label
        raise AssertionError("catch-all rule failed to match")  # unreachable


def default_tag_map() -> TagMap:
    path = resources.files("ctxda").joinpath("data", DEFAULT_MAP_RESOURCE)
    with resources.as_file(path) as real:
        return TagMap.from_file(real)


def default_test_ids() -> list[str]:
    path = resources.files("ctxda").joinpath("data", DEFAULT_TEST_IDS_RESOURCE)
    return parse_test_ids(path.read_text(encoding="utf-8"))


def collapse_tag(raw_tag: str, tag_map: TagMap | None = None) -> str:
    tag_map = tag_map if tag_map is not None else default_tag_map()
    return tag_map.collapse(raw_tag)


class LabelVocab:
    """Bidirectional label <-> class-index map with a stable sorted order."""

    def __init__(self, labels):
        ordered = list(labels)
        if len(set(ordered)) != len(ordered):
            raise ValueError("duplicate labels in vocabulary")
        self._labels = tuple(ordered)
        self._index = {name: k for k, name in enumerate(ordered)}

    @classmethod
    def from_tag_map(cls, tag_map: TagMap) -> "LabelVocab":
        return cls(sorted(tag_map.labels))

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ValueError(f"label {label!r} not in vocabulary") from None

    def label(self, idx: int) -> str:
        return self._labels[idx]

    @property
    def labels(self) -> tuple[str, ...]:
        return self._labels

    def __len__(self) -> int:
        return len(self._labels)

    def __iter__(self):
        return iter(self._labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelVocab) and other._labels == self._labels


_ANGLE = re.compile(r"<<[^<>]*>>|<[^<>]*>")
_BRACE_MARKER = re.compile(r"\{[A-Za-z]\s")
_BRACE_GROUP = re.compile(r"\{[A-Za-z][^{}]*\}")
_TRAILING_SLASH = re.compile(r"\s*(?:-/|/)\s*$")
_WHITESPACE = re.compile(r"\s+")


def normalize_text(raw_text: str, keep_brace_content: bool = True) -> str:
    """Strip transcript annotation down to speakable text.

    Removes angle-bracket event markers, curly-brace annotation codes
    (keeping or dropping the annotated words per `keep_brace_content`) and
    the trailing slash terminator, then collapses whitespace. Case and
    punctuation are preserved.
    """
    s = _ANGLE.sub(" ", raw_text)
    if keep_brace_content:
        s = _BRACE_MARKER.sub("", s)
    else:
        while True:
            s, n = _BRACE_GROUP.subn(" ", s)
            if n == 0:
                break
    s = s.replace("{", " ").replace("}", " ")
    s = _TRAILING_SLASH.sub("", s)
    return _WHITESPACE.sub(" ", s).strip()


def parse_test_ids(text: str) -> list[str]:
    ids = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        ids.append(canonical_conversation_id(line))
    return ids


def load_test_ids(path) -> list[str]:
    return parse_test_ids(Path(path).read_text(encoding="utf-8"))


def canonical_conversation_id(value: str) -> str:
    v = value.strip()
    if v.lower().startswith("sw"):
        v = v[2:]
    return v.lstrip("_")


def parse_corpus(root_path, tag_map: TagMap | None = None,
                 keep_brace_content: bool = True) -> list[Conversation]:
    """Parse every transcript CSV under root_path, preserving file order.

    Labels are class indices under the vocabulary implied by `tag_map`
    (LabelVocab.from_tag_map of the same map yields the matching names).
    Any malformed file aborts the parse; there is no partial output.
    """
    tag_map = tag_map if tag_map is not None else default_tag_map()
    vocab = LabelVocab.from_tag_map(tag_map)
    root = Path(root_path)
    if root.is_file():
        files = [root]
    else:
        files = sorted(p for p in root.rglob("*.csv") if p.is_file())
    if not files:
        raise CorpusFormatError(f"no transcript files under {root}")
    order: list[str] = []
    rows_by_conv: dict[str, list[Utterance]] = {}
    for path in files:
        _parse_file(path, tag_map, vocab, keep_brace_content, order, rows_by_conv)
    return [Conversation(cid, rows_by_conv[cid]) for cid in order]


def _parse_file(path, tag_map, vocab, keep_brace_content, order, rows_by_conv):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise CorpusFormatError(f"{path}: empty file")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise CorpusFormatError(f"{path}: missing required columns {missing}")
        seen = 0
        for row in reader:
            line = reader.line_num
            conv_id = canonical_conversation_id(row["conversation_no"] or "")
            speaker = (row["caller"] or "").strip()
            raw_tag = (row["act_tag"] or "").strip()
            raw_text = row["text"] or ""
            if not conv_id:
                raise CorpusFormatError(f"{path}:{line}: missing conversation number")
            if speaker not in SPEAKERS:
                raise CorpusFormatError(
                    f"{path}:{line}: speaker must be 'A' or 'B', got {speaker!r}")
            if not raw_tag:
                raise CorpusFormatError(f"{path}:{line}: empty act tag")
            utterances = rows_by_conv.setdefault(conv_id, [])
            if len(utterances) == 0 and conv_id not in order:
                order.append(conv_id)
            utterances.append(Utterance(
                conversation_id=conv_id,
                index=len(utterances),
                speaker=speaker,
                raw_text=raw_text,
                clean_text=normalize_text(raw_text, keep_brace_content),
                raw_tag=raw_tag,
                label=vocab.index(tag_map.collapse(raw_tag)),
            ))
            seen += 1
        if seen == 0:
            raise CorpusFormatError(f"{path}: no utterance rows")


def split_corpus(conversations: list[Conversation], test_ids) -> tuple[list[Conversation], list[Conversation]]:
    """Partition conversations into (train, test) by conversation id."""
    wanted = {canonical_conversation_id(t) for t in test_ids}
    present = {c.id for c in conversations}
    missing = sorted(wanted - present)
    if missing:
        raise ValueError(f"test conversation ids not found in corpus: {missing}")
    train = [c for c in conversations if c.id not in wanted]
    test = [c for c in conversations if c.id in wanted]
    return train, test


def make_windows(conversation: Conversation, n: int) -> list[ContextWindow]:
    """One window per utterance: up to n preceding utterances plus itself.

    Windows near the conversation start are short; they are never padded
    and never reach into another conversation.
    """
    if n < 0:
        raise ValueError("context size must be >= 0")
    if not conversation.utterances:
        raise ValueError(f"conversation {conversation.id} is empty")
    out = []
    us = conversation.utterances
    for t in range(len(us)):
        start = max(0, t - n)
        out.append(ContextWindow(utterances=tuple(us[start:t + 1])))
    return out
