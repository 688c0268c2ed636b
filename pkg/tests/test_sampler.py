from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import T0
from ltrkit.data import ClassStats, LabelMap, SampleRecord, ValidationError
from ltrkit.sampler import (
    ReducedBiasSpec,
    SplitSpec,
    apply_split_assignments,
    build_reduced_bias,
    cap_classes,
    cap_indices,
    partition_long_tail,
    split_counts,
    split_indices,
    stratified_split,
)


class TestCap:
    def test_nacti_cow_capped_to_100k(self):
        labels = np.zeros(2_109_009, dtype=np.int64)
        labels[:57] = 1
        keep = cap_indices(labels, 100_000, seed=0)
        assert np.sum(labels[keep] == 0) == 100_000
        assert np.sum(labels[keep] == 1) == 57

    def test_below_cap_untouched(self, records):
        assert cap_classes(records, cap=1000) == records

    def test_deterministic_and_seed_sensitive(self, records):
        a = cap_classes(records, cap=10, seed=3)
        assert a == cap_classes(records, cap=10, seed=3)
        assert a != cap_classes(records, cap=10, seed=4)

    def test_keeps_manifest_order(self, records):
        kept = cap_classes(records, cap=10, seed=1)
        pos = {id(r): i for i, r in enumerate(records)}
        order = [pos[id(r)] for r in kept]
        assert order == sorted(order)

    def test_bad_cap(self):
        with pytest.raises(ValidationError, match="cap"):
            cap_indices(np.zeros(3), 0)


class TestSplitCounts:
    def test_exact(self):
        assert split_counts(10, (0.8, 0.1, 0.1)) == (8, 1, 1)

    def test_remainders_train_then_val(self):
        # floor 5.6 / 0.7 / 0.7 = 5/0/0, 2 left -> train, val
        assert split_counts(7, (0.8, 0.1, 0.1)) == (6, 1, 0)

    def test_decimal_fractions_floor_exactly(self):
        # 0.7 * 10 is 7.000000000000001 in binary floats, 7 in decimal
        assert split_counts(10, (0.7, 0.2, 0.1)) == (7, 2, 1)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10_000))
    def test_sums_to_n(self, n):
        c = split_counts(n, (0.8, 0.1, 0.1))
        assert sum(c) == n
        assert abs(c[0] - 0.8 * n) <= 3


class TestSplit:
    def test_disjoint_cover_stratified(self, records):
        labels = np.array([r.label for r in records])
        tr, va, te = split_indices(labels, SplitSpec(seed=42))
        allidx = np.concatenate([tr, va, te])
        assert sorted(allidx.tolist()) == list(range(len(records)))
        for c in np.unique(labels):
            n = int(np.sum(labels == c))
            got = (int(np.sum(labels[tr] == c)), int(np.sum(labels[va] == c)), int(np.sum(labels[te] == c)))
            assert got == split_counts(n, (0.8, 0.1, 0.1))

    def test_deterministic(self, records):
        assert stratified_split(records, SplitSpec(seed=42)) == stratified_split(records, SplitSpec(seed=42))
        assert stratified_split(records, SplitSpec(seed=42)) != stratified_split(records, SplitSpec(seed=43))

    @pytest.mark.parametrize("fr", [(0.8, 0.1), (0.8, 0.2, 0.1), (1.0, 0.0, 0.0)])
    def test_invalid_fractions(self, fr):
        with pytest.raises(ValidationError, match="fraction"):
            SplitSpec(fr)

    def test_assignments(self, records):
        names = ("train", "val", "test")
        a = {r.image_ref: names[i % 3] for i, r in enumerate(records)}
        tr, va, te = apply_split_assignments(records, a)
        assert len(tr) + len(va) + len(te) == len(records)
        assert va[0] is records[1]

    def test_assignments_missing_named(self, records):
        with pytest.raises(ValidationError, match=records[0].image_ref):
            apply_split_assignments(records, {})


def check_partition(counts, part, share=0.5, thr=20):
    """Independent check of the Head/Tail/Few-shot rule."""
    c = len(counts)
    total = sum(counts)
    assert part.head | part.tail | part.few_shot == frozenset(range(c))
    assert not (part.head & part.tail or part.head & part.few_shot or part.tail & part.few_shot)
    assert part.few_shot == {i for i in range(c) if counts[i] < thr}
    rest = sorted(set(range(c)) - part.few_shot, key=lambda i: (-counts[i], i))
    k = len(part.head)
    assert set(rest[:k]) == part.head
    head_sum = sum(counts[i] for i in part.head)
    if sum(counts[i] for i in rest) > share * total:
        assert head_sum > share * total
        assert sum(counts[i] for i in rest[: k - 1]) <= share * total
    else:
        assert part.head == frozenset(rest) and not part.tail


class TestPartition:
    def test_worked_example(self):
        p = partition_long_tail(ClassStats((60, 20, 10, 5, 3, 2)), 0.5, 20)
        assert (p.head, p.tail, p.few_shot) == ({0}, {1}, {2, 3, 4, 5})

    def test_uniform_needs_three(self):
        # two classes are exactly 60/120 = 0.5, which does not exceed the share
        p = partition_long_tail(ClassStats((30, 30, 30, 30)))
        assert (p.head, p.tail, p.few_shot) == ({0, 1, 2}, {3}, frozenset())

    def test_exactly_half_not_enough(self):
        p = partition_long_tail(ClassStats((50, 25, 25)))
        assert p.head == {0, 1}

    def test_few_shot_dominated_fallback(self):
        p = partition_long_tail(ClassStats((25, 19, 19, 19)))
        assert p.head == {0} and not p.tail

    def test_zero_total(self):
        with pytest.raises(ValidationError):
            partition_long_tail(ClassStats((0, 0)))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 5000), min_size=1, max_size=64).filter(lambda v: sum(v) > 0))
    def test_properties(self, counts):
        check_partition(counts, partition_long_tail(ClassStats(tuple(counts))))


def rec(ref, label, site, hours):
    return SampleRecord(ref, label, site=site, timestamp=None if hours is None else T0 + timedelta(hours=hours))


class TestReducedBias:
    src_labels = LabelMap(("cow", "horse", "coyote"))
    ext_labels = LabelMap(("coyote", "horse", "moose"))
    source = [rec("s0", 0, "A", 0), rec("s1", 1, "B", 10)]
    spec = ReducedBiasSpec(frozenset({"horse", "coyote"}))

    def run(self, external, spec=None):
        return build_reduced_bias(self.source, self.src_labels, external, self.ext_labels, spec or self.spec)

    def test_unshared_class_excluded(self):
        res = self.run([rec("e0", 2, "Z", 0)])
        assert not res.records and res.removed_unshared == 1

    def test_overlap_10s_excluded(self):
        near = SampleRecord("e0", 1, site="B", timestamp=T0 + timedelta(hours=10, seconds=10))
        res = self.run([near])
        assert not res.records and res.removed_overlap == 1

    def test_relabel_into_source_ids(self):
        res = self.run([rec("e0", 0, "Z", 0), rec("e1", 1, "A", 50)])
        assert [r.label for r in res.records] == [2, 1]
        assert res.prevalence == {"horse": 1, "coyote": 1}

    def test_same_time_other_site_kept(self):
        assert len(self.run([rec("e0", 1, "C", 10)]).records) == 1

    def test_site_only_key(self):
        spec = ReducedBiasSpec(frozenset({"horse"}), ("site",))
        assert not self.run([rec("e0", 1, "A", 500)], spec).records

    def test_missing_class_reported(self):
        res = self.run([rec("e0", 1, "Z", 0)])
        assert res.missing_classes == ["coyote"]

    def test_unknown_shared_class(self):
        with pytest.raises(ValidationError, match="moose"):
            self.run([], ReducedBiasSpec(frozenset({"moose"})))

    def test_bad_keys(self):
        with pytest.raises(ValidationError, match="overlap_keys"):
            ReducedBiasSpec(frozenset({"horse"}), ("camera",))
