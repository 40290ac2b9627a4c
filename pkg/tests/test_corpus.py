import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxda.corpus import (
    Conversation,
    CorpusFormatError,
    LabelVocab,
    TagMap,
    Utterance,
    collapse_tag,
    default_tag_map,
    default_test_ids,
    make_windows,
    normalize_text,
    parse_corpus,
    split_corpus,
)

from conftest import SWDA_HEADER


class TestTagMap:
    def test_default_map_has_42_classes(self):
        tag_map = default_tag_map()
        assert len(set(tag_map.labels)) == 42
        assert len(LabelVocab.from_tag_map(tag_map)) == 42

    @pytest.mark.parametrize("raw,expected", [
        ("sd", "sd"),
        ("sv", "sv"),
        ("b", "b"),
        ("qy^d", "qy^d"),
        ("qw^d", "qw^d"),
        ("sd(^q)^g", "sd"),
        ("sv@", "sv"),
        ("nn^e", "ng"),
        ("ny^e", "na"),
        ("+", "%"),
        ("%-", "%"),
        ("qr", "qy"),
        ("qrr", "qrr"),
        ("fe", "ba"),
        ("fx", "sv"),
        ("oo", "oo_co_cc"),
        ("co", "oo_co_cc"),
        ("aap", "aap_am"),
        ("am", "aap_am"),
        ("arp", "arp_nd"),
        ("nd", "arp_nd"),
        ("by", 'fo_o_fw_"_by_bc'),
        ('"', 'fo_o_fw_"_by_bc'),
        ("b^m", "b^m"),
        ("^2", "^2"),
        ("^q", "^q"),
    ])
    def test_collapsing(self, raw, expected):
        assert collapse_tag(raw) == expected

    def test_unmapped_goes_to_other_and_is_counted(self):
        tag_map = default_tag_map()
        assert tag_map.collapse("zzz-not-a-tag") == 'fo_o_fw_"_by_bc'
        assert tag_map.unmapped["zzz-not-a-tag"] == 1

    def test_idempotent_on_own_outputs(self):
        tag_map = default_tag_map()
        for label in tag_map.labels:
            assert tag_map.collapse(label) == label

    def test_custom_file_requires_catchall(self, tmp_path):
        bad = tmp_path / "map.tsv"
        bad.write_text("sd\tsd\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError, match="catch-all"):
            TagMap.from_file(bad)

    def test_malformed_line(self, tmp_path):
        bad = tmp_path / "map.tsv"
        bad.write_text("sd sd\n*\tother\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError, match="pattern"):
            TagMap.from_file(bad)


class TestNormalize:
    def test_trailing_slash(self):
        assert normalize_text("Uh-huh. /") == "Uh-huh."

    def test_brace_marker_keeps_content(self):
        assert normalize_text("{D So, } it's interesting") == "So, it's interesting"

    def test_brace_marker_drop_mode(self):
        assert normalize_text("{D So, } it's interesting",
                              keep_brace_content=False) == "it's interesting"

    def test_already_clean(self):
        assert normalize_text("Yeah.") == "Yeah."

    def test_angle_markers_removed(self):
        assert normalize_text("<Laughter> Right. /") == "Right."
        assert normalize_text("Well, <<talking to kid>> yes. /") == "Well, yes."

    def test_nested_braces(self):
        out = normalize_text("{C {F uh, } and } so on /")
        assert out == "uh, and so on"
        out_drop = normalize_text("{C {F uh, } and } so on /", keep_brace_content=False)
        assert out_drop == "so on"

    def test_interrupted_terminator(self):
        assert normalize_text("I was going to -/") == "I was going to"

    def test_whitespace_collapsed(self):
        assert normalize_text("  a   lot\tof   space  ") == "a lot of space"


class TestParsing:
    def test_fixture_tree(self, swda_fixture_dir):
        conversations = parse_corpus(swda_fixture_dir)
        assert len(conversations) == 2
        first, second = conversations
        assert first.id == "2005"
        assert [u.speaker for u in first.utterances] == ["A", "B", "A", "B", "A", "B"]
        assert [u.index for u in first.utterances] == [0, 1, 2, 3, 4, 5]
        vocab = LabelVocab.from_tag_map(default_tag_map())
        assert first.utterances[0].label == vocab.index("qw")
        assert first.utterances[1].clean_text == "Well, it is about twelve foot."
        assert second.id == "3011"
        assert second.utterances[1].label == vocab.index("qy^d")
        assert second.utterances[3].label == vocab.index("%")

    def test_missing_column(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("conversation_no,caller,text\n1,A,hello\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError, match="act_tag"):
            parse_corpus(bad)

    def test_empty_file(self, tmp_path):
        bad = tmp_path / "empty.csv"
        bad.write_text(SWDA_HEADER + "\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError, match="no utterance rows"):
            parse_corpus(bad)

    def test_malformed_row_reports_location(self, tmp_path):
        bad = tmp_path / "rows.csv"
        bad.write_text(
            SWDA_HEADER + "\n"
            'f,0001,1001,0,sd,A,1,1,"ok /"\n'
            'f,0001,1001,1,sd,Q,2,1,"bad speaker /"\n',
            encoding="utf-8")
        with pytest.raises(CorpusFormatError, match=r"rows\.csv:3"):
            parse_corpus(bad)

    def test_parse_is_order_stable(self, swda_fixture_dir):
        a = parse_corpus(swda_fixture_dir)
        b = parse_corpus(swda_fixture_dir)
        assert [(c.id, [u.raw_text for u in c.utterances]) for c in a] == \
               [(c.id, [u.raw_text for u in c.utterances]) for c in b]


class TestSplit:
    def test_fixture_split(self, swda_fixture_dir):
        conversations = parse_corpus(swda_fixture_dir)
        train, test = split_corpus(conversations, ["3011"])
        assert [c.id for c in train] == ["2005"]
        assert [c.id for c in test] == ["3011"]

    def test_sw_prefix_accepted(self, swda_fixture_dir):
        conversations = parse_corpus(swda_fixture_dir)
        _, test = split_corpus(conversations, ["sw2005"])
        assert [c.id for c in test] == ["2005"]

    def test_missing_id_is_named(self, swda_fixture_dir):
        conversations = parse_corpus(swda_fixture_dir)
        with pytest.raises(ValueError, match="9999"):
            split_corpus(conversations, ["9999"])

    def test_default_test_ids_list(self):
        ids = default_test_ids()
        assert len(ids) == 19
        assert len(set(ids)) == 19


def _conv(labels, cid="c0"):
    utterances = [
        Utterance(conversation_id=cid, index=k, speaker="AB"[k % 2],
                  raw_text=f"u{k}", clean_text=f"u{k}", raw_tag="sd", label=lab)
        for k, lab in enumerate(labels)
    ]
    return Conversation(cid, utterances)


class TestWindows:
    def test_lengths_for_five_utterances_n3(self):
        windows = make_windows(_conv([0, 1, 2, 3, 4]), 3)
        assert [len(w) for w in windows] == [1, 2, 3, 4, 4]

    def test_n0_all_singletons(self):
        windows = make_windows(_conv([0, 1, 2]), 0)
        assert all(len(w) == 1 for w in windows)

    def test_targets_are_current_labels(self):
        windows = make_windows(_conv([5, 6, 7]), 2)
        assert [w.target for w in windows] == [5, 6, 7]

    def test_never_crosses_conversations(self):
        a = make_windows(_conv([0, 1], "left"), 4)
        b = make_windows(_conv([2, 3], "right"), 4)
        for w in a + b:
            assert len({u.conversation_id for u in w.utterances}) == 1

    def test_negative_context_rejected(self):
        with pytest.raises(ValueError):
            make_windows(_conv([0]), -1)

    @given(st.integers(min_value=1, max_value=30), st.integers(min_value=0, max_value=8))
    @settings(max_examples=60, deadline=None)
    def test_window_properties(self, length, n):
        conv = _conv(list(range(length)))
        windows = make_windows(conv, n)
        assert len(windows) == length
        for t, w in enumerate(windows):
            assert len(w) == min(t, n) + 1
            indices = [u.index for u in w.utterances]
            assert indices == list(range(indices[0], indices[0] + len(indices)))
            assert w.utterances[-1].index == t
            assert w.target == w.utterances[-1].label
