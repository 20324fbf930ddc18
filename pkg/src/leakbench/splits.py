"""Clean and deliberately leaky split protocols, plus a group-integrity audit.

All splitters are pure functions of (dataset, parameters, seed). Test groups
are always reserved first from an independent child stream of the seed, so
the holdout, clean and leaky splitters agree on the test set for equal seeds
and test fractions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from leakbench.dataset import GroupedDataset
from leakbench.errors import ConfigError, PlanMismatchError

TRAIN = "train"
VALIDATION = "validation"
TEST = "test"
EXCLUDED = "excluded"
PARTITIONS = (TRAIN, VALIDATION, TEST, EXCLUDED)
USED = (TRAIN, VALIDATION, TEST)


@dataclass(frozen=True)
class SplitPlan:
    assignment: Mapping[str, str]
    protocol_tag: str
    seed: int

    def __post_init__(self):
        bad = {p for p in self.assignment.values() if p not in PARTITIONS}
        if bad:
            raise ValueError(f"unknown partition labels {sorted(bad)}")

    def items_in(self, partition: str) -> list[str]:
        return [i for i, p in self.assignment.items() if p == partition]

    def groups_in(self, partition: str, dataset: GroupedDataset) -> list[str]:
        """Groups with at least one item in ``partition``, in dataset order."""
        hit = {dataset.group_of(i) for i, p in self.assignment.items() if p == partition}
        return [g for g in dataset.group_ids if g in hit]

    def counts(self) -> dict[str, int]:
        out = dict.fromkeys(PARTITIONS, 0)
        for p in self.assignment.values():
            out[p] += 1
        return out

    def to_json(self) -> dict:
        return {
            "protocol_tag": self.protocol_tag,
            "seed": int(self.seed),
            "assignment": dict(self.assignment),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, raw: Mapping) -> "SplitPlan":
        try:
            return cls(dict(raw["assignment"]), str(raw["protocol_tag"]), int(raw["seed"]))
        except KeyError as exc:
            raise ConfigError(f"split plan is missing key {exc.args[0]!r}") from None


@dataclass(frozen=True)
class AuditReport:
    leaky_groups: list[tuple[str, frozenset[str]]]
    n_tainted_test_items: int
    verdict: str
    n_test_items: int = 0
    n_groups_used: int = 0

    def to_json(self) -> dict:
        return {
            "leaky_groups": [[g, sorted(parts)] for g, parts in self.leaky_groups],
            "n_tainted_test_items": self.n_tainted_test_items,
            "n_test_items": self.n_test_items,
            "n_groups_used": self.n_groups_used,
            "verdict": self.verdict,
        }


# -- helpers ------------------------------------------------------------------


def _child_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(int(seed)).spawn(n)]


def apportion(total: int, weights: Sequence[float], rng: np.random.Generator) -> list[int]:
    """Largest-remainder rounding of ``total`` in proportion to ``weights``.

    Equal remainders are resolved by a seeded random priority.
    """
    w = np.asarray(weights, dtype=np.float64)
    quotas = total * w / w.sum()
    counts = np.floor(quotas).astype(int)
    remainders = quotas - counts
    priority = rng.permutation(len(w))
    # sort by remainder descending, then by random priority
    order = sorted(range(len(w)), key=lambda k: (-remainders[k], priority[k]))
    for k in order[: total - int(counts.sum())]:
        counts[k] += 1
    return [int(c) for c in counts]


def _ratio(pair) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in pair)
    except (TypeError, ValueError):
        raise ConfigError(f"ratio must be a pair of positive integers, got {pair!r}") from None
    if a < 1 or b < 1:
        raise ConfigError(f"ratio must be a pair of positive integers, got {pair!r}")
    return a, b


def _check_fraction(name, value, low_open=True, high_closed=False):
    ok = (0 < value if low_open else 0 <= value) and (value <= 1 if high_closed else value < 1)
    if not ok:
        raise ConfigError(f"{name} out of range: {value!r}")


def _reserve_test_groups(dataset, test_fraction, rng) -> tuple[list[str], list[str]]:
    groups = list(dataset.group_ids)
    n_test, _ = apportion(len(groups), [test_fraction, 1 - test_fraction], rng)
    order = rng.permutation(len(groups))
    test = [groups[k] for k in sorted(order[:n_test])]
    rest = [groups[k] for k in sorted(order[n_test:])]
    return test, rest


def _split_groups(groups, ratio, rng) -> tuple[list[str], list[str]]:
    n_a, _ = apportion(len(groups), ratio, rng)
    order = rng.permutation(len(groups))
    first = [groups[k] for k in sorted(order[:n_a])]
    second = [groups[k] for k in sorted(order[n_a:])]
    return first, second


def _sample_frames(dataset, groups, frame_fraction, rng) -> dict[str, list[str]]:
    """Sample round(frame_fraction * size) items per group without replacement."""
    out = {}
    for g in groups:
        ids = dataset.group_index[g]
        k = max(1, int(np.floor(frame_fraction * len(ids) + 0.5)))
        picked = rng.choice(len(ids), size=min(k, len(ids)), replace=False)
        out[g] = [ids[j] for j in sorted(picked)]
    return out


def _assign_groups(dataset, parts: Mapping[str, Iterable[str]]) -> dict[str, str]:
    assignment = dict.fromkeys(dataset.item_ids, EXCLUDED)
    for partition, groups in parts.items():
        for g in groups:
            for item_id in dataset.group_index[g]:
                assignment[item_id] = partition
    return assignment


# -- splitters ----------------------------------------------------------------


def split_holdout_by_group(
    dataset: GroupedDataset,
    test_fraction: float = 0.2,
    trainval_ratio=(4, 1),
    seed: int = 0,
) -> SplitPlan:
    """Whole groups go to train, validation or test."""
    _check_fraction("test_fraction", test_fraction)
    ratio = _ratio(trainval_ratio)
    if len(dataset.group_ids) < 3:
        raise ConfigError("need at least 3 groups for a train/validation/test split")
    rng_test, rng_rest = _child_rngs(seed, 2)
    test, rest = _reserve_test_groups(dataset, test_fraction, rng_test)
    train, val = _split_groups(rest, ratio, rng_rest)
    if not (test and train and val):
        raise ConfigError(
            f"{len(dataset.group_ids)} groups are too few for test_fraction={test_fraction} "
            f"and ratio {ratio[0]}:{ratio[1]}"
        )
    assignment = _assign_groups(dataset, {TRAIN: train, VALIDATION: val, TEST: test})
    tag = f"holdout_by_group(test_fraction={test_fraction},ratio={ratio[0]}:{ratio[1]})"
    return SplitPlan(assignment, tag, int(seed))


def split_holdout_by_item(
    dataset: GroupedDataset,
    test_fraction: float = 0.2,
    trainval_ratio=(4, 1),
    seed: int = 0,
) -> SplitPlan:
    """Random item-level split that ignores groups (the naive protocol)."""
    _check_fraction("test_fraction", test_fraction)
    ratio = _ratio(trainval_ratio)
    ids = list(dataset.item_ids)
    if len(ids) < 3:
        raise ConfigError("need at least 3 items for a train/validation/test split")
    rng_test, rng_rest = _child_rngs(seed, 2)
    n_test, _ = apportion(len(ids), [test_fraction, 1 - test_fraction], rng_test)
    order = rng_test.permutation(len(ids))
    assignment = {}
    for k in order[:n_test]:
        assignment[ids[k]] = TEST
    rest = [ids[k] for k in sorted(order[n_test:])]
    n_train, _ = apportion(len(rest), ratio, rng_rest)
    order = rng_rest.permutation(len(rest))
    for pos, k in enumerate(order):
        assignment[rest[k]] = TRAIN if pos < n_train else VALIDATION
    assignment = {i: assignment[i] for i in ids}
    tag = f"holdout_by_item(test_fraction={test_fraction},ratio={ratio[0]}:{ratio[1]})"
    return SplitPlan(assignment, tag, int(seed))


def split_leaky_frame_pool(
    dataset: GroupedDataset,
    test_fraction: float = 0.2,
    frame_fraction: float = 0.2,
    train_val_ratio=(3, 1),
    seed: int = 0,
) -> SplitPlan:
    """Reserve test groups, pool a fraction of the remaining frames, then
    split the pool item-wise so one group's frames land on both sides."""
    _check_fraction("test_fraction", test_fraction)
    _check_fraction("frame_fraction", frame_fraction, high_closed=True)
    ratio = _ratio(train_val_ratio)
    rng_test, rng_rest = _child_rngs(seed, 2)
    test, rest = _reserve_test_groups(dataset, test_fraction, rng_test)
    sampled = _sample_frames(dataset, rest, frame_fraction, rng_rest)
    pool = [i for g in rest for i in sampled[g]]
    if not pool:
        raise ConfigError("pooled frame set is empty")
    n_train, _ = apportion(len(pool), ratio, rng_rest)
    order = rng_rest.permutation(len(pool))
    assignment = _assign_groups(dataset, {TEST: test})
    for pos, k in enumerate(order):
        assignment[pool[k]] = TRAIN if pos < n_train else VALIDATION
    tag = (
        f"leaky_frame_pool(test_fraction={test_fraction},frame_fraction={frame_fraction},"
        f"ratio={ratio[0]}:{ratio[1]})"
    )
    return SplitPlan(assignment, tag, int(seed))


def split_clean_frame_sample(
    dataset: GroupedDataset,
    test_fraction: float = 0.2,
    frame_fraction: float = 0.2,
    train_val_ratio=(3, 1),
    seed: int = 0,
) -> SplitPlan:
    """Reserve test groups, send whole remaining groups to train or
    validation, and keep only a sampled fraction of each group's frames."""
    _check_fraction("test_fraction", test_fraction)
    _check_fraction("frame_fraction", frame_fraction, high_closed=True)
    ratio = _ratio(train_val_ratio)
    rng_test, rng_rest = _child_rngs(seed, 2)
    test, rest = _reserve_test_groups(dataset, test_fraction, rng_test)
    sampled = _sample_frames(dataset, rest, frame_fraction, rng_rest)
    train, val = _split_groups(rest, ratio, rng_rest)
    if not (test and train and val):
        raise ConfigError(f"{len(dataset.group_ids)} groups are too few for this split")
    assignment = _assign_groups(dataset, {TEST: test})
    for partition, groups in ((TRAIN, train), (VALIDATION, val)):
        for g in groups:
            for item_id in sampled[g]:
                assignment[item_id] = partition
    tag = (
        f"clean_frame_sample(test_fraction={test_fraction},frame_fraction={frame_fraction},"
        f"ratio={ratio[0]}:{ratio[1]})"
    )
    return SplitPlan(assignment, tag, int(seed))


def make_kfold_plans(
    dataset: GroupedDataset,
    k: int = 5,
    replicates: int = 1,
    grouped: bool = True,
    seed: int = 0,
) -> list[SplitPlan]:
    """k-fold cross-validation plans; each plan holds one fold as test and the
    rest as train. ``grouped=False`` folds over items, ignoring groups."""
    if k < 2:
        raise ConfigError("k must be at least 2")
    if replicates < 1:
        raise ConfigError("replicates must be positive")
    population = list(dataset.group_ids if grouped else dataset.item_ids)
    if k > len(population):
        raise ConfigError(f"k={k} exceeds the population of {len(population)}")
    plans = []
    for rep, rng in enumerate(_child_rngs(seed, replicates)):
        order = rng.permutation(len(population))
        folds = np.array_split(order, k)
        for fold_index, fold in enumerate(folds):
            members = {population[j] for j in fold}
            if grouped:
                assignment = {
                    i: TEST if dataset.group_of(i) in members else TRAIN for i in dataset.item_ids
                }
            else:
                assignment = {i: TEST if i in members else TRAIN for i in dataset.item_ids}
            tag = f"kfold(k={k},grouped={str(grouped).lower()},replicate={rep},fold={fold_index})"
            plans.append(SplitPlan(assignment, tag, int(seed)))
    return plans


def group_partitions(plan: SplitPlan, dataset: GroupedDataset) -> dict[str, str]:
    """Map each group to its single used partition.

    Raises ConfigError if a group's used items span several partitions.
    Groups with only excluded items are omitted.
    """
    out: dict[str, str] = {}
    for g, ids in dataset.group_index.items():
        parts = {plan.assignment[i] for i in ids} - {EXCLUDED}
        if len(parts) > 1:
            raise ConfigError(f"group {g!r} spans partitions {sorted(parts)}")
        if parts:
            out[g] = parts.pop()
    return out


# -- audit --------------------------------------------------------------------


def audit_plan(
    plan: SplitPlan,
    dataset: GroupedDataset,
    finetune_groups: Iterable[str] | None = None,
) -> AuditReport:
    """Report groups spanning several used partitions and test items whose
    group took part in an upstream fine-tuning stage."""
    if set(plan.assignment) != set(dataset.item_ids):
        missing = len(set(dataset.item_ids) - set(plan.assignment))
        extra = len(set(plan.assignment) - set(dataset.item_ids))
        raise PlanMismatchError(
            f"plan does not cover the dataset ({missing} missing, {extra} unknown item ids)"
        )
    leaky = []
    used_groups = 0
    for g, ids in dataset.group_index.items():
        parts = frozenset(plan.assignment[i] for i in ids) - {EXCLUDED}
        if parts:
            used_groups += 1
        if len(parts) > 1:
            leaky.append((g, parts))
    finetune = set(finetune_groups or ())
    test_items = plan.items_in(TEST)
    tainted = sum(1 for i in test_items if dataset.group_of(i) in finetune)
    if leaky and tainted:
        verdict = "both"
    elif leaky:
        verdict = "group-leak"
    elif tainted:
        verdict = "tainted-test"
    else:
        verdict = "clean"
    return AuditReport(leaky, tainted, verdict, len(test_items), used_groups)


def finetune_groups_of(plan: SplitPlan, dataset: GroupedDataset) -> set[str]:
    """Groups with any item in train or validation of a fine-tuning plan."""
    return set(plan.groups_in(TRAIN, dataset)) | set(plan.groups_in(VALIDATION, dataset))
