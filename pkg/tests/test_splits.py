import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leakbench.dataset import GroupedDataset, ItemRecord, SynthConfig, generate_synthetic
from leakbench.errors import ConfigError, PlanMismatchError
from leakbench.splits import (
    EXCLUDED,
    PARTITIONS,
    TEST,
    TRAIN,
    VALIDATION,
    SplitPlan,
    apportion,
    audit_plan,
    finetune_groups_of,
    group_partitions,
    make_kfold_plans,
    split_clean_frame_sample,
    split_holdout_by_group,
    split_holdout_by_item,
    split_leaky_frame_pool,
)


def grouped(n_groups, per_group):
    return GroupedDataset(
        [ItemRecord(f"g{g}_{i}", f"g{g}", i, 1.0 + (g % 9) * 0.5) for g in range(n_groups) for i in range(per_group)]
    )


def group_counts(plan, ds):
    parts = group_partitions(plan, ds)
    return {p: sum(1 for v in parts.values() if v == p) for p in (TRAIN, VALIDATION, TEST)}


def test_holdout_counts_ten_groups():
    ds = grouped(10, 3)
    plan = split_holdout_by_group(ds, 0.2, (4, 1), seed=0)
    assert group_counts(plan, ds) == {TRAIN: 6, VALIDATION: 2, TEST: 2}
    assert audit_plan(plan, ds).verdict == "clean"


def test_holdout_reserves_240_of_1200():
    ds = grouped(1200, 1)
    plan = split_holdout_by_group(ds, 0.2, (4, 1), seed=5)
    assert group_counts(plan, ds)[TEST] == 240


def test_leaky_pool_counts_at_full_scale():
    ds = grouped(1200, 30)
    plan = split_leaky_frame_pool(ds, 0.2, 0.2, (3, 1), seed=1)
    counts = plan.counts()
    assert counts[TRAIN] + counts[VALIDATION] == 5760
    assert counts[TRAIN] == 4320 and counts[VALIDATION] == 1440
    assert counts[TEST] == 240 * 30
    report = audit_plan(plan, ds)
    assert report.verdict == "group-leak" and report.leaky_groups


def test_leaky_pool_single_item_groups_is_clean():
    ds = grouped(50, 1)
    plan = split_leaky_frame_pool(ds, 0.2, 1.0, (3, 1), seed=2)
    assert audit_plan(plan, ds).verdict == "clean"


def test_leaky_pool_fraction_matches_analytic_expectation():
    # 6 sampled frames per group split 3:1 item-wise: a group stays on one
    # side with probability close to 0.75**6 + 0.25**6
    ds = grouped(200, 30)
    fractions = []
    for seed in range(20):
        plan = split_leaky_frame_pool(ds, 0.2, 0.2, (3, 1), seed=seed)
        report = audit_plan(plan, ds)
        sampled = len(plan.groups_in(TRAIN, ds) + plan.groups_in(VALIDATION, ds)) - len(report.leaky_groups)
        fractions.append(len(report.leaky_groups) / (sampled))
    expected = 1 - (0.75**6 + 0.25**6)
    assert abs(np.mean(fractions) - expected) < 0.02


def test_clean_frame_sample_samples_six_of_thirty():
    ds = grouped(20, 30)
    plan = split_clean_frame_sample(ds, 0.2, 0.2, (3, 1), seed=4)
    for g, part in group_partitions(plan, ds).items():
        used = [i for i in ds.group_index[g] if plan.assignment[i] != EXCLUDED]
        assert len(used) == (30 if part == TEST else 6)
    assert audit_plan(plan, ds).verdict == "clean"
    assert split_clean_frame_sample(ds, 0.2, 0.2, (3, 1), seed=4) == plan


def test_item_holdout_leaks_groups():
    ds = grouped(30, 10)
    plan = split_holdout_by_item(ds, 0.2, (4, 1), seed=0)
    assert plan.counts()[TEST] == 60
    assert audit_plan(plan, ds).verdict == "group-leak"


def test_kfold_counts_and_partition():
    ds = grouped(25, 4)
    plans = make_kfold_plans(ds, k=5, replicates=10, grouped=True, seed=3)
    assert len(plans) == 50
    for rep in range(10):
        folds = plans[rep * 5 : rep * 5 + 5]
        tests = [set(p.items_in(TEST)) for p in folds]
        assert set().union(*tests) == set(ds.item_ids)
        assert sum(len(t) for t in tests) == len(ds)
        for p in folds:
            assert audit_plan(p, ds).verdict == "clean"


def test_kfold_items_ignores_groups():
    ds = grouped(25, 4)
    plans = make_kfold_plans(ds, 5, 1, grouped=False, seed=3)
    assert any(audit_plan(p, ds).verdict == "group-leak" for p in plans)
    assert set().union(*(set(p.items_in(TEST)) for p in plans)) == set(ds.item_ids)


def test_item_kfold_taint_matches_finetune_coverage():
    ds = grouped(500, 4)
    ft = split_holdout_by_group(ds, 0.2, (4, 1), seed=8)
    ft_groups = finetune_groups_of(ft, ds)
    rates = []
    for plan in make_kfold_plans(ds, 5, 1, grouped=False, seed=9):
        r = audit_plan(plan, ds, ft_groups)
        rates.append(r.n_tainted_test_items / r.n_test_items)
    assert abs(np.mean(rates) - 0.8) < 0.03


def test_audit_clean_holdout_with_own_finetune_groups():
    ds = grouped(20, 3)
    plan = split_holdout_by_group(ds, 0.2, (4, 1), seed=1)
    assert audit_plan(plan, ds, finetune_groups_of(plan, ds)).verdict == "clean"


def test_audit_flags_exactly_injected_violations():
    ds = grouped(12, 4)
    base = split_holdout_by_group(ds, 0.25, (2, 1), seed=0)
    rng = np.random.default_rng(0)
    assignment = dict(base.assignment)
    victims = rng.choice(ds.group_ids, size=3, replace=False)
    for g in victims:
        first = ds.group_index[g][0]
        current = assignment[first]
        assignment[first] = TEST if current != TEST else TRAIN
    report = audit_plan(SplitPlan(assignment, "injected", 0), ds)
    assert {g for g, _ in report.leaky_groups} == set(victims)
    assert report.verdict == "group-leak"


def test_audit_taint_and_both():
    ds = grouped(10, 2)
    plan = split_holdout_by_group(ds, 0.2, (4, 1), seed=0)
    test_groups = plan.groups_in(TEST, ds)
    r = audit_plan(plan, ds, {test_groups[0]})
    assert r.verdict == "tainted-test" and r.n_tainted_test_items == 2
    assignment = dict(plan.assignment)
    assignment[ds.group_index[test_groups[1]][0]] = TRAIN
    r2 = audit_plan(SplitPlan(assignment, "x", 0), ds, {test_groups[0]})
    assert r2.verdict == "both"


def test_audit_rejects_partial_plan():
    ds = grouped(4, 2)
    plan = SplitPlan({"g0_0": TRAIN}, "partial", 0)
    with pytest.raises(PlanMismatchError):
        audit_plan(plan, ds)


def test_plan_json_round_trip():
    ds = grouped(10, 3)
    plan = split_leaky_frame_pool(ds, 0.2, 0.5, (3, 1), seed=2)
    again = SplitPlan.from_json(json.loads(plan.dumps()))
    assert again == plan
    with pytest.raises(ConfigError):
        SplitPlan.from_json({"seed": 0})


@pytest.mark.parametrize(
    "call",
    [
        lambda ds: split_holdout_by_group(ds, 0.0),
        lambda ds: split_holdout_by_group(ds, 1.0),
        lambda ds: split_leaky_frame_pool(ds, 0.2, 0.0),
        lambda ds: split_clean_frame_sample(ds, 0.2, 0.2, (0, 1)),
        lambda ds: make_kfold_plans(ds, k=1),
        lambda ds: make_kfold_plans(ds, k=100),
    ],
)
def test_invalid_parameters(call):
    with pytest.raises(ConfigError):
        call(grouped(10, 3))


def test_apportion_largest_remainder():
    rng = np.random.default_rng(0)
    assert apportion(10, [0.2, 0.8], rng) == [2, 8]
    assert apportion(7, [3, 1], rng) == [5, 2]
    assert sum(apportion(10, [1, 1, 1], rng)) == 10
    # ties go either way but always by a seeded rule
    first = apportion(1, [1, 1], np.random.default_rng(5))
    assert first == apportion(1, [1, 1], np.random.default_rng(5))


def test_shared_test_groups_across_splitters():
    ds = grouped(30, 10)
    seeds = [split_holdout_by_group, split_leaky_frame_pool, split_clean_frame_sample]
    tests = [set(f(ds, 0.2, seed=11).groups_in(TEST, ds)) for f in seeds]
    assert tests[0] == tests[1] == tests[2]


splitter_choice = st.sampled_from(["holdout", "clean", "kfold"])


@settings(max_examples=60, deadline=None)
@given(
    n_groups=st.integers(min_value=5, max_value=40),
    per_group=st.integers(min_value=1, max_value=12),
    seed=st.integers(min_value=0, max_value=2**32),
    which=splitter_choice,
    frame_fraction=st.floats(min_value=0.1, max_value=1.0),
)
def test_group_integrity_and_coverage(n_groups, per_group, seed, which, frame_fraction):
    ds = grouped(n_groups, per_group)
    if which == "holdout":
        plans = [split_holdout_by_group(ds, 0.2, (4, 1), seed)]
    elif which == "clean":
        plans = [split_clean_frame_sample(ds, 0.2, frame_fraction, (3, 1), seed)]
    else:
        plans = make_kfold_plans(ds, 5, 1, True, seed)
    for plan in plans:
        assert set(plan.assignment) == set(ds.item_ids)
        assert set(plan.assignment.values()) <= set(PARTITIONS)
        assert audit_plan(plan, ds).leaky_groups == []
        group_partitions(plan, ds)  # raises on a violation


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**63))
def test_splitters_are_deterministic(seed):
    ds = grouped(15, 6)
    for f in (split_holdout_by_group, split_holdout_by_item, split_leaky_frame_pool, split_clean_frame_sample):
        assert f(ds, 0.2, seed=seed) == f(ds, 0.2, seed=seed)


def test_synthetic_plan_uses_every_item_once():
    ds, _ = generate_synthetic(SynthConfig(n_groups=30, items_per_group=5))
    plan = split_leaky_frame_pool(ds, 0.2, 0.4, (3, 1), seed=0)
    assert sum(plan.counts().values()) == len(ds)


def leaky_coverage_holds(per_group, frame_fraction, seeds=10):
    ds = grouped(200, per_group)
    for seed in range(seeds):
        plan = split_leaky_frame_pool(ds, 0.2, frame_fraction, (3, 1), seed=seed)
        sampled = set(plan.groups_in(TRAIN, ds)) | set(plan.groups_in(VALIDATION, ds))
        if len(audit_plan(plan, ds).leaky_groups) < 0.9 * len(sampled):
            return False
    return True


@pytest.mark.parametrize("per_group,frame_fraction", [(30, 0.5), (50, 0.2), (10, 1.0)])
def test_leaky_pool_covers_ninety_percent_with_enough_frames(per_group, frame_fraction):
    assert leaky_coverage_holds(per_group, frame_fraction)


@pytest.mark.xfail(
    strict=True,
    reason="with a 3:1 item split of k sampled frames a group stays on one side with "
    "probability 0.75**k + 0.25**k: about 18% of groups at k=6 and 62% at k=2",
)
@pytest.mark.parametrize("per_group,frame_fraction", [(10, 0.2), (30, 0.2)])
def test_leaky_pool_covers_ninety_percent_with_few_frames(per_group, frame_fraction):
    assert leaky_coverage_holds(per_group, frame_fraction)
