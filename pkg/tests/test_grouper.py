import numpy as np
import pytest
from hypothesis import given, strategies as st

from fastlogad.exceptions import DataError
from fastlogad.grouper import EventSequence, WindowSpec, chronological_split, group_session, group_sliding
from fastlogad.parser import DrainParser, ParsedLog


def plog(i, tid, params=(), ts=None, flag=None, content=""):
    return ParsedLog(i, ts, tid, list(params), flag, content)


def test_session_partition_and_labels():
    logs = [plog(1, 1, ["blk_A1"]), plog(2, 2, ["blk_B2"]), plog(3, 3, ["blk_A1"]),
            plog(4, 1, ["blk_A1"]), plog(5, 2, ["blk_B2"])]
    spec = WindowSpec("session", r"blk_[A-Z]\d")
    out = group_session(logs, spec, {"blk_A1": 1})
    assert [(s.seq_id, s.event_ids, s.label) for s in out.sequences] == [
        ("blk_A1", [1, 3, 1], 1), ("blk_B2", [2, 2], 0)]
    assert out.rejected == []


def test_session_rejects_lines_without_identifier():
    logs = [plog(1, 1, ["blk_1"]), plog(2, 5, ["x"], content="no id here")]
    out = group_session(logs, WindowSpec(), {})
    assert len(out.sequences) == 1 and [r.line_no for r in out.rejected] == [2]


def test_session_uses_content_when_parameters_lack_id():
    out = group_session([plog(1, 1, [], content="deleting blk_-42 now")], WindowSpec(), {})
    assert out.sequences[0].seq_id == "blk_-42"


def test_session_per_line_flags_mark_sequence():
    logs = [plog(1, 1, ["blk_1"], flag=0), plog(2, 2, ["blk_1"], flag=1)]
    assert group_session(logs, WindowSpec(), {}).sequences[0].label == 1


HDFS_FRAGMENT = [
    "Receiving block blk_-1608999687919862906 src:/10.250.19.102:54106 dest:/10.250.19.102:50010",
    "Receiving block blk_7503483334202473044 src:/10.251.215.16:55695 dest:/10.251.215.16:50010",
    "BLOCK* NameSystem.allocateBlock: /mnt/hadoop/mapred/system/job_200811092030_0001/job.jar. blk_-1608999687919862906",
    "PacketResponder 1 for block blk_-1608999687919862906 terminating",
    "Received block blk_7503483334202473044 of size 233217 from /10.251.215.16",
]


def test_hdfs_fragment_grouped_by_block_id():
    parser = DrainParser()
    parsed = [parser.parse_line(line) for line in HDFS_FRAGMENT]
    out = group_session(parsed, WindowSpec(), {"blk_7503483334202473044": 1})
    keyed = {s.seq_id: s for s in out.sequences}
    assert list(keyed) == ["blk_-1608999687919862906", "blk_7503483334202473044"]
    assert len(keyed["blk_-1608999687919862906"]) == 3
    assert keyed["blk_7503483334202473044"].label == 1


def test_sliding_five_minute_window_one_minute_step():
    logs = [plog(i, 1, ts=float(t)) for i, t in enumerate(range(600))]
    out = group_sliding(logs, WindowSpec("sliding", None, 300, 60))
    assert [s.first_timestamp for s in out] == [0, 60, 120, 180, 240, 300]
    for s in out:
        assert len(s) == min(300, 600 - s.first_timestamp)


def test_sliding_thunderbird_config_and_membership():
    times = [0, 10, 29, 31, 59, 60, 95, 200]
    logs = [plog(i, i + 1, ts=float(t), flag=int(t == 95)) for i, t in enumerate(times)]
    out = group_sliding(logs, WindowSpec("sliding", None, 60, 30))
    for s in out:
        start = s.first_timestamp
        members = [i + 1 for i, t in enumerate(times) if start <= t < start + 60]
        assert s.event_ids == members
        assert s.label == int(start <= 95 < start + 60)
    # windows at 120 and 150 would be empty, so they are skipped
    assert [s.first_timestamp for s in out] == [0, 30, 60, 90, 150]


def test_sliding_all_normal():
    logs = [plog(i, 1, ts=float(i), flag=0) for i in range(100)]
    assert all(s.label == 0 for s in group_sliding(logs, WindowSpec("sliding", None, 20, 5)))


def test_fixed_windows_are_disjoint():
    logs = [plog(i, 1, ts=float(i)) for i in range(10)]
    out = group_sliding(logs, WindowSpec("fixed", None, 4))
    assert [len(s) for s in out] == [4, 4, 2]


def test_sliding_needs_timestamps():
    logs = [plog(1, 1, ts=0.0), plog(7, 1, ts=None)]
    with pytest.raises(DataError, match="line 7"):
        group_sliding(logs, WindowSpec("sliding", None, 10, 5))


def test_sliding_rejects_decreasing_timestamps():
    with pytest.raises(DataError):
        group_sliding([plog(1, 1, ts=5.0), plog(2, 1, ts=1.0)], WindowSpec("sliding", None, 10, 5))


@pytest.mark.parametrize("kwargs", [dict(mode="session", identifier_pattern=None),
                                    dict(mode="sliding", identifier_pattern=None, window_seconds=10),
                                    dict(mode="sliding", identifier_pattern=None, window_seconds=10, step_seconds=20),
                                    dict(mode="tumbling")])
def test_window_spec_invariants(kwargs):
    with pytest.raises(ValueError):
        WindowSpec(**kwargs)


@given(st.lists(st.integers(0, 50), min_size=1, max_size=60), st.integers(1, 20), st.integers(1, 20))
def test_sliding_membership_property(deltas, window, step):
    step = min(step, window)
    times = np.cumsum(deltas).astype(float)
    logs = [plog(i, i, ts=t) for i, t in enumerate(times)]
    out = group_sliding(logs, WindowSpec("sliding", None, window, step))
    covered = set()
    for s in out:
        assert s.event_ids == [i for i, t in enumerate(times) if s.first_timestamp <= t < s.first_timestamp + window]
        covered.update(s.event_ids)
    assert covered == set(range(len(times)))


def seqs(n_normal, n_abnormal):
    out = [EventSequence(f"n{i}", [1], 0, float(2 * i)) for i in range(n_normal)]
    out += [EventSequence(f"a{i}", [2], 1, float(2 * i + 1)) for i in range(n_abnormal)]
    return out


def test_chronological_split_counts():
    split = chronological_split(seqs(6000, 100), 5000, 0.1)
    assert (len(split.train), len(split.val)) == (4500, 500)
    assert sum(s.label == 0 for s in split.test) == 1000
    assert sum(s.label == 1 for s in split.test) == 100


def test_chronological_split_order_and_disjointness():
    split = chronological_split(seqs(300, 40), 200, 0.1)
    for part in (split.train, split.val, split.test):
        ts = [s.first_timestamp for s in part]
        assert ts == sorted(ts)
    assert split.train[-1].first_timestamp < split.val[0].first_timestamp
    ids = [s.seq_id for s in split.train + split.val + split.test]
    assert len(ids) == len(set(ids)) == 340


def test_chronological_split_no_abnormal_is_valid():
    split = chronological_split(seqs(20, 0), 10, 0.1)
    assert len(split.test) == 10 and all(s.label == 0 for s in split.test)


def test_chronological_split_too_few_normals():
    with pytest.raises(DataError):
        chronological_split(seqs(10, 5), 11)
