"""Split -> fine-tune -> extract -> pool/sequence -> predict -> evaluate.

One :class:`ProtocolConfig` is one cell of the leakage matrix. Every stage
reads MOS labels through a :class:`LabelAccessLog`, so a run can prove that
no test label was touched before the final metric computation.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from leakbench import metrics
from leakbench.dataset import DEGRADED_VARIANTS, FeatureSet, GroupedDataset
from leakbench.errors import ConfigError, ProtocolError
from leakbench.neural import lstm as lstm_mod
from leakbench.neural import mlp
from leakbench.neural.binning import bin_mos
from leakbench.neural.training import (
    TrainSchedule,
    extract_activations,
    train_classifier,
    train_regressor_e2e,
)
from leakbench.splits import (
    TEST,
    TRAIN,
    VALIDATION,
    SplitPlan,
    _split_groups,
    audit_plan,
    finetune_groups_of,
    make_kfold_plans,
    split_clean_frame_sample,
    split_holdout_by_group,
    split_holdout_by_item,
    split_leaky_frame_pool,
)
from leakbench.svr import POOLING, KernelSpec, SvrConfig, pool_features, predict_svr, train_svr

log = logging.getLogger(__name__)

FT_MODES = ("none", "clean", "leaky")
TEST_MODES = ("independent", "tainted")
PREDICTORS = ("svr", "lstm", "e2e")
EXTRACT_MODES = ("last-layer", "all-layers")

# desk-scale learner defaults; see README for how they relate to the
# original full-size settings
FINETUNE_SCHEDULE = TrainSchedule(
    learning_rate=0.01,
    momentum=0.9,
    batch_size=32,
    max_epochs=150,
    validation_every_n_samples=160,
    patience=10,
    lr_drop_factor=0.1,
    max_lr_drops=1,
)
LSTM_SCHEDULE = TrainSchedule(
    learning_rate=0.01,
    momentum=0.9,
    batch_size=27,
    max_epochs=150,
    validation_every_n_samples=27 * 4,
    patience=10,
    lr_drop_factor=0.1,
    max_lr_drops=1,
)
E2E_SCHEDULE = TrainSchedule(
    learning_rate=0.01,
    momentum=0.9,
    batch_size=32,
    max_epochs=10,
    validation_every_n_samples=160,
    patience=1000,
    lr_drop_factor=1.0,
    max_lr_drops=0,
    epoch_lr_decay=0.75,
)

VERDICT_RANK = {"clean": 0, "group-leak": 1, "tainted-test": 2, "both": 3}


def derive_seed(*parts) -> int:
    """64-bit seed from a stable hash of the parts."""
    blob = json.dumps([str(p) for p in parts]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


@dataclass(frozen=True)
class ProtocolConfig:
    ft_mode: str = "clean"
    test_mode: str = "independent"
    predictor: str = "svr"
    kernel: KernelSpec = KernelSpec("gaussian")
    pooling: str = "mean"
    extract_mode: str = "last-layer"
    test_fraction: float = 0.2
    frame_fraction: float = 0.2
    train_val_ratio: tuple[int, int] = (3, 1)
    folds: int = 5
    arch: tuple[int, ...] = (32, 16)
    finetune_schedule: TrainSchedule = FINETUNE_SCHEDULE
    svr: SvrConfig = SvrConfig()
    lstm_hidden: int = 16
    lstm_schedule: TrainSchedule = LSTM_SCHEDULE
    lstm_batching: str = lstm_mod.SORTED_NONRANDOM
    e2e_hidden: tuple[int, ...] = (64, 32, 8)
    e2e_schedule: TrainSchedule = E2E_SCHEDULE
    e2e_dropout: float = 0.25
    replicates: int = 5
    base_seed: int = 0
    reuse_finetune: bool = False
    name: str = ""

    def __post_init__(self):
        if self.pooling == "avg":
            object.__setattr__(self, "pooling", "mean")
        object.__setattr__(self, "train_val_ratio", tuple(self.train_val_ratio))
        object.__setattr__(self, "arch", tuple(self.arch))
        object.__setattr__(self, "e2e_hidden", tuple(self.e2e_hidden))
        for value, allowed, what in (
            (self.ft_mode, FT_MODES, "ft_mode"),
            (self.test_mode, TEST_MODES, "test_mode"),
            (self.predictor, PREDICTORS, "predictor"),
            (self.extract_mode, EXTRACT_MODES, "extract_mode"),
            (self.pooling, POOLING, "pooling"),
        ):
            if value not in allowed:
                raise ConfigError(f"{what} must be one of {allowed}, got {value!r}")
        if self.replicates < 1:
            raise ConfigError("replicates must be positive")
        if self.test_mode == "tainted" and self.ft_mode == "none":
            raise ProtocolError("a tainted test set needs a fine-tuning stage to be tainted by")
        if self.predictor == "e2e" and (self.ft_mode == "none" or self.test_mode != "independent"):
            raise ProtocolError("the end-to-end regressor is its own fine-tuning stage; use ft clean/leaky with independent tests")

    @property
    def label(self) -> str:
        if self.predictor == "svr":
            pred = f"svr({self.kernel.kind},{self.pooling})"
        else:
            pred = self.predictor
        return f"{pred}|ft={self.ft_mode}|test={self.test_mode}|extract={self.extract_mode}"

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, KernelSpec):
                value = value.to_json()
            elif isinstance(value, (TrainSchedule, SvrConfig)):
                value = asdict(value)
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    @property
    def tag(self) -> str:
        core = self.to_json()
        for key in ("replicates", "base_seed", "name"):
            core.pop(key)
        digest = hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()[:8]
        return f"{self.label}#{digest}"

    @classmethod
    def from_json(cls, raw: Mapping) -> "ProtocolConfig":
        raw = dict(raw)
        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown protocol keys: {sorted(unknown)}")
        if "kernel" in raw:
            raw["kernel"] = KernelSpec.from_json(raw["kernel"])
        for key in ("finetune_schedule", "lstm_schedule", "e2e_schedule"):
            if key in raw:
                default = {f.name: f.default for f in fields(cls)}[key]
                raw[key] = replace(default, **raw[key])
        if "svr" in raw:
            raw["svr"] = replace(SvrConfig(), **raw["svr"])
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


class LabelAccessLog:
    """Dataset proxy that records every MOS read with the current stage.

    Splitting metadata (groups, ids) passes through freely; only labels are
    logged.
    """

    def __init__(self, dataset: GroupedDataset):
        self._dataset = dataset
        self.entries: list[tuple[str, str]] = []
        self._stage = "unstaged"

    @contextlib.contextmanager
    def stage(self, name: str):
        previous, self._stage = self._stage, name
        try:
            yield self
        finally:
            self._stage = previous

    def mos(self, item_id: str) -> float:
        self.entries.append((self._stage, item_id))
        return self._dataset.mos(item_id)

    def group_mos(self, group_id: str) -> float:
        return self.mos(self._dataset.group_index[group_id][0])

    @property
    def group_index(self):
        return self._dataset.group_index

    @property
    def item_ids(self):
        return self._dataset.item_ids

    @property
    def group_ids(self):
        return self._dataset.group_ids

    @property
    def structure(self):
        return self._dataset.structure

    def group_of(self, item_id):
        return self._dataset.group_of(item_id)

    def reads_of(self, item_ids: Iterable[str], exclude_stage: str | None = None) -> int:
        wanted = set(item_ids)
        return sum(1 for stage, i in self.entries if i in wanted and stage != exclude_stage)

    def digest(self) -> str:
        h = hashlib.sha256()
        for stage, item_id in self.entries:
            h.update(f"{stage}\t{item_id}\n".encode("utf-8"))
        return h.hexdigest()


@dataclass
class RunResult:
    tag: str
    replicate: int
    seed: int
    split_seed: int
    metrics: metrics.MetricSummary
    audit_verdict: str
    n_tainted_test_items: int
    n_test_items: int
    n_leaky_groups: int
    test_label_reads_before_eval: int
    label_access_log_digest: str
    trace_digests: list[str] = field(default_factory=list)
    folds: list[dict] = field(default_factory=list)
    classification: dict | None = None
    finetune_audit: dict | None = None

    def to_json(self) -> dict:
        out = {
            "tag": self.tag,
            "replicate": self.replicate,
            "seed": self.seed,
            "split_seed": self.split_seed,
            "plcc": self.metrics.plcc,
            "srocc": self.metrics.srocc,
            "n": self.metrics.n,
            "audit": {
                "verdict": self.audit_verdict,
                "n_tainted_test_items": self.n_tainted_test_items,
                "n_test_items": self.n_test_items,
                "n_leaky_groups": self.n_leaky_groups,
            },
            "test_label_reads_before_eval": self.test_label_reads_before_eval,
            "label_access_log_digest": self.label_access_log_digest,
            "trace_digests": list(self.trace_digests),
            "folds": self.folds,
        }
        if self.classification is not None:
            out["classification"] = self.classification
        if self.finetune_audit is not None:
            out["finetune_audit"] = self.finetune_audit
        return out


# -- stage helpers ------------------------------------------------------------


def _standardize(train: np.ndarray, *others: np.ndarray):
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std[std == 0] = 1.0
    return [(a - mean) / std for a in (train, *others)]


def _pooled(features: FeatureSet, dataset, groups, method) -> np.ndarray:
    return np.stack([pool_features(features.stack(dataset.group_index[g]), method) for g in groups])


def _sequences(features: FeatureSet, dataset, groups) -> dict[str, np.ndarray]:
    return {g: features.stack(dataset.group_index[g]) for g in groups}


def dominant_class_baseline(plan: SplitPlan, dataset) -> float:
    """Test accuracy of always answering the training set's most frequent
    class (ties go to the lower class)."""
    train_ids = plan.items_in(TRAIN)
    test_ids = plan.items_in(TEST)
    if not train_ids or not test_ids:
        raise ConfigError("dominant-class baseline needs train and test items")
    counts = np.bincount([int(bin_mos(dataset.mos(i))) for i in train_ids], minlength=5)
    dominant = int(np.argmax(counts))
    test_classes = np.array([int(bin_mos(dataset.mos(i))) for i in test_ids])
    return metrics.accuracy(np.full(test_classes.size, dominant), test_classes)


def _finetune_plan(dataset, protocol: ProtocolConfig, split_seed: int) -> SplitPlan:
    if protocol.ft_mode == "leaky":
        return split_leaky_frame_pool(
            dataset, protocol.test_fraction, protocol.frame_fraction, protocol.train_val_ratio, split_seed
        )
    if protocol.ft_mode == "clean":
        return split_clean_frame_sample(
            dataset, protocol.test_fraction, protocol.frame_fraction, protocol.train_val_ratio, split_seed
        )
    return split_holdout_by_group(dataset, protocol.test_fraction, protocol.train_val_ratio, split_seed)


def _predictor_plans(dataset, protocol, ft_plan, split_seed, rng) -> list[SplitPlan]:
    """Plans the predictor trains and is tested on, at item level with whole
    groups per partition. Validation groups are carved out for the learners
    that early-stop."""
    needs_val = protocol.predictor == "lstm"
    if protocol.test_mode == "independent":
        test = set(ft_plan.groups_in(TEST, dataset))
        bases = [("independent", [g for g in dataset.group_ids if g not in test], sorted(test))]
    else:
        folds = make_kfold_plans(dataset, protocol.folds, 1, True, derive_seed(split_seed, "folds"))
        bases = [
            (p.protocol_tag, p.groups_in(TRAIN, dataset), p.groups_in(TEST, dataset)) for p in folds
        ]
    plans = []
    for tag, train_groups, test_groups in bases:
        parts = {}
        if needs_val:
            tr, va = _split_groups(train_groups, protocol.train_val_ratio, rng)
            parts.update(dict.fromkeys(tr, TRAIN))
            parts.update(dict.fromkeys(va, VALIDATION))
        else:
            parts.update(dict.fromkeys(train_groups, TRAIN))
        parts.update(dict.fromkeys(test_groups, TEST))
        assignment = {i: parts[dataset.group_of(i)] for i in dataset.item_ids}
        plans.append(SplitPlan(assignment, f"predictor[{tag}]", split_seed))
    return plans


def _fit_predict_svr(feats, labels, dataset, plan, protocol):
    train_groups = plan.groups_in(TRAIN, dataset)
    test_groups = plan.groups_in(TEST, dataset)
    with labels.stage("predictor"):
        y = np.array([labels.group_mos(g) for g in train_groups])
    x_train, x_test = _standardize(
        _pooled(feats, dataset, train_groups, protocol.pooling),
        _pooled(feats, dataset, test_groups, protocol.pooling),
    )
    model = train_svr(x_train, y, protocol.kernel, protocol.svr, ids=train_groups)
    return test_groups, predict_svr(model, x_test), None


def _fit_predict_lstm(feats, labels, dataset, plan, protocol, seed):
    train_groups = plan.groups_in(TRAIN, dataset)
    val_groups = plan.groups_in(VALIDATION, dataset)
    test_groups = plan.groups_in(TEST, dataset)
    frames = feats.stack([i for g in train_groups for i in dataset.group_index[g]])
    mean = frames.mean(axis=0)
    std = frames.std(axis=0)
    std[std == 0] = 1.0
    seqs = {g: (s - mean) / std for g, s in _sequences(feats, dataset, dataset.group_ids).items()}
    with labels.stage("predictor"):
        y = {g: labels.group_mos(g) for g in train_groups + val_groups}
    split = {**dict.fromkeys(train_groups, TRAIN), **dict.fromkeys(val_groups, VALIDATION)}
    schedule = replace(protocol.lstm_schedule, seed=seed)
    model, trace = lstm_mod.train_lstm(
        {g: seqs[g] for g in train_groups + val_groups},
        y,
        split,
        protocol.lstm_hidden,
        schedule,
        protocol.lstm_batching,
    )
    return test_groups, lstm_mod.predict(model, [seqs[g] for g in test_groups]), trace


def _evaluate(labels, dataset, test_groups, predictions, audit, reads_before):
    with labels.stage("evaluate"):
        truth = np.array([labels.group_mos(g) for g in test_groups])
    summary = metrics.summarize(predictions, truth)
    return {
        "plcc": summary.plcc,
        "srocc": summary.srocc,
        "n": summary.n,
        "audit": audit.verdict,
        "n_tainted_test_items": audit.n_tainted_test_items,
        "n_leaky_groups": len(audit.leaky_groups),
        "test_label_reads_before_eval": reads_before,
    }, summary


def run_protocol(
    dataset: GroupedDataset,
    features: FeatureSet,
    protocol: ProtocolConfig,
    seed: int,
    split_seed: int | None = None,
    replicate: int = 0,
) -> RunResult:
    """One replicate of one matrix cell."""
    features.check_matches(dataset)
    split_seed = seed if split_seed is None else split_seed
    labels = LabelAccessLog(dataset)
    rng = np.random.default_rng(derive_seed(seed, "predictor-split"))
    ft_plan = _finetune_plan(dataset, protocol, split_seed)
    trace_digests = []
    classification = None
    ft_model = None
    ft_audit = None
    if protocol.ft_mode != "none":
        a = audit_plan(ft_plan, dataset)
        ft_audit = {"verdict": a.verdict, "n_leaky_groups": len(a.leaky_groups)}

    if protocol.predictor == "e2e":
        schedule = replace(protocol.e2e_schedule, seed=derive_seed(seed, "e2e"))
        with labels.stage("finetune"):
            model, trace = train_regressor_e2e(
                features, labels, ft_plan, schedule, protocol.e2e_hidden, protocol.e2e_dropout
            )
        trace_digests.append(trace.digest())
        test_groups = ft_plan.groups_in(TEST, dataset)
        frame_pred = mlp.predict(model, features.data)
        by_item = dict(zip(features.ids, frame_pred))
        predictions = np.array([np.mean([by_item[i] for i in dataset.group_index[g]]) for g in test_groups])
        audit = audit_plan(ft_plan, dataset, finetune_groups_of(ft_plan, dataset))
        # the e2e plan's own leak shows up as leaky groups; the test set is independent
        reads = labels.reads_of(ft_plan.items_in(TEST))
        fold, summary = _evaluate(labels, dataset, test_groups, predictions, audit, reads)
        folds = [fold]
        audits = [audit]
    else:
        feats = features
        ft_groups: set[str] = set()
        if protocol.ft_mode != "none":
            schedule = replace(protocol.finetune_schedule, seed=derive_seed(seed, "finetune"))
            with labels.stage("finetune"):
                ft_model, trace = train_classifier(features, labels, ft_plan, protocol.arch, schedule)
            trace_digests.append(trace.digest())
            feats = extract_activations(ft_model, features, protocol.extract_mode)
            ft_groups = finetune_groups_of(ft_plan, dataset)

        folds, audits, summaries = [], [], []
        for plan in _predictor_plans(dataset, protocol, ft_plan, split_seed, rng):
            audit = audit_plan(plan, dataset, ft_groups)
            if protocol.predictor == "svr":
                test_groups, predictions, trace = _fit_predict_svr(feats, labels, dataset, plan, protocol)
            else:
                test_groups, predictions, trace = _fit_predict_lstm(
                    feats, labels, dataset, plan, protocol, derive_seed(seed, "lstm", plan.protocol_tag)
                )
                trace_digests.append(trace.digest())
            reads = labels.reads_of(plan.items_in(TEST))
            fold, summary = _evaluate(labels, dataset, test_groups, predictions, audit, reads)
            folds.append(fold)
            audits.append(audit)
            summaries.append(summary)
        summary = _mean_summary(summaries)

    if ft_model is not None:
        test_ids = ft_plan.items_in(TEST)
        with labels.stage("evaluate"):
            truth = np.array([int(bin_mos(labels.mos(i))) for i in test_ids])
            train_classes = [int(bin_mos(labels.mos(i))) for i in ft_plan.items_in(TRAIN)]
        predicted = mlp.predict(ft_model, features.stack(test_ids)).argmax(axis=1)
        dominant = int(np.argmax(np.bincount(train_classes, minlength=5)))
        classification = {
            "finetuned_test_accuracy": metrics.accuracy(predicted, truth),
            "dominant_class_accuracy": metrics.accuracy(np.full(truth.size, dominant), truth),
            "predicted_class_distribution": [
                v for v in metrics.class_distribution(predicted.tolist(), range(5)).values()
            ],
        }

    worst = max(audits, key=lambda a: VERDICT_RANK[a.verdict])
    return RunResult(
        tag=protocol.tag,
        replicate=replicate,
        seed=int(seed),
        split_seed=int(split_seed),
        metrics=summary,
        audit_verdict=worst.verdict,
        n_tainted_test_items=sum(a.n_tainted_test_items for a in audits),
        n_test_items=sum(a.n_test_items for a in audits),
        n_leaky_groups=max(len(a.leaky_groups) for a in audits),
        test_label_reads_before_eval=sum(f["test_label_reads_before_eval"] for f in folds),
        label_access_log_digest=labels.digest(),
        trace_digests=trace_digests,
        folds=folds,
        classification=classification,
        finetune_audit=ft_audit,
    )


def _mean_summary(summaries: Sequence[metrics.MetricSummary]) -> metrics.MetricSummary:
    n = sum(s.n for s in summaries)
    defined = [s for s in summaries if not s.undefined]
    if not defined:
        return metrics.MetricSummary(None, None, n)
    return metrics.MetricSummary(
        float(np.mean([s.plcc for s in defined])), float(np.mean([s.srocc for s in defined])), n
    )


# -- matrix -------------------------------------------------------------------


@dataclass
class MatrixResult:
    protocols: list[ProtocolConfig]
    results: list[RunResult]
    base_seed: int

    def for_protocol(self, protocol: ProtocolConfig) -> list[RunResult]:
        return [r for r in self.results if r.tag == protocol.tag]

    def summary(self, protocol: ProtocolConfig) -> dict:
        return metrics.aggregate(r.metrics for r in self.for_protocol(protocol))

    def to_reports(self) -> list[dict]:
        """One EvalReport per protocol, ordered by protocol tag."""
        out = []
        for protocol in sorted(self.protocols, key=lambda p: p.tag):
            runs = self.for_protocol(protocol)
            out.append(
                {
                    "protocol": {"tag": protocol.tag, "label": protocol.label, **protocol.to_json()},
                    "seeds": {
                        "base_seed": self.base_seed,
                        "replicates": [{"replicate": r.replicate, "seed": r.seed, "split_seed": r.split_seed} for r in runs],
                    },
                    "per_replicate": [r.to_json() for r in runs],
                    "summary": self.summary(protocol),
                }
            )
        return out


def _run_cell(args):
    dataset, features, protocol, seed, split_seed, replicate = args
    return run_protocol(dataset, features, protocol, seed, split_seed, replicate)


def run_matrix(
    dataset: GroupedDataset,
    features: FeatureSet,
    protocols: Sequence[ProtocolConfig],
    replicates: int | None = None,
    base_seed: int | None = None,
    jobs: int = 1,
) -> MatrixResult:
    """Run every protocol for every replicate.

    Cell seeds come from (base_seed, protocol tag, replicate); split seeds
    from (base_seed, replicate) alone, so all cells of one replicate see the
    same test groups.
    """
    if not protocols:
        raise ConfigError("no protocols to run")
    tags = [p.tag for p in protocols]
    if len(set(tags)) != len(tags):
        raise ConfigError("duplicate protocols in matrix")
    if base_seed is None:
        base_seed = protocols[0].base_seed
    tasks = []
    for protocol in protocols:
        n_rep = replicates if replicates is not None else protocol.replicates
        for r in range(n_rep):
            seed = derive_seed(base_seed, protocol.tag, r)
            split_seed = derive_seed(base_seed, "split", r)
            tasks.append((dataset, features, protocol, seed, split_seed, r))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    results.sort(key=lambda r: (r.tag, r.replicate))
    return MatrixResult(list(protocols), results, int(base_seed))


# -- degraded-variant (image) experiment ----------------------------------------


def degraded_split_experiment(
    dataset: GroupedDataset,
    features: FeatureSet,
    grouped: bool,
    seed: int = 0,
    split_seed: int | None = None,
    test_fraction: float = 0.2,
    extractor_hidden: Sequence[int] = (32, 16),
    extractor_seed: int = 0,
    finetune: bool = False,
    finetune_schedule: TrainSchedule = FINETUNE_SCHEDULE,
    kernel: KernelSpec = KernelSpec("gaussian"),
    svr_config: SvrConfig = SvrConfig(),
    max_train_items: int | None = None,
    replicate: int = 0,
) -> RunResult:
    """Random item split vs reference-grouped split for degraded-image data.

    Features are every hidden layer of a surrogate extractor, concatenated.
    Without fine-tuning the extractor is a fixed random-initialized network
    (the stand-in for a pretrained one); with fine-tuning it is first trained
    as a regressor on the plan's train items.
    """
    if dataset.structure != DEGRADED_VARIANTS:
        raise ProtocolError("degraded_split_experiment needs a degraded-variants dataset")
    features.check_matches(dataset)
    split_seed = seed if split_seed is None else split_seed
    labels = LabelAccessLog(dataset)
    splitter = split_holdout_by_group if grouped else split_holdout_by_item
    plan = splitter(dataset, test_fraction, (4, 1), split_seed)
    trace_digests = []
    if finetune:
        schedule = replace(finetune_schedule, seed=derive_seed(seed, "finetune"))
        with labels.stage("finetune"):
            extractor, trace = train_regressor_e2e(features, labels, plan, schedule, tuple(extractor_hidden), 0.0)
        trace_digests.append(trace.digest())
        ft_groups = finetune_groups_of(plan, dataset)
    else:
        extractor = mlp.init_mlp(
            (features.dim, *extractor_hidden, 1), mlp.REGRESSION_1, np.random.default_rng(extractor_seed)
        )
        ft_groups = set()
    feats = extract_activations(extractor, features, "all-layers")

    train_ids = plan.items_in(TRAIN) + plan.items_in(VALIDATION)
    if max_train_items is not None and len(train_ids) > max_train_items:
        pick = np.random.default_rng(derive_seed(seed, "subsample")).choice(
            len(train_ids), size=max_train_items, replace=False
        )
        train_ids = [train_ids[k] for k in sorted(pick)]
    test_ids = plan.items_in(TEST)
    with labels.stage("predictor"):
        y = np.array([labels.mos(i) for i in train_ids])
    x_train, x_test = _standardize(feats.stack(train_ids), feats.stack(test_ids))
    model = train_svr(x_train, y, kernel, svr_config, ids=train_ids)
    predictions = predict_svr(model, x_test)
    audit = audit_plan(plan, dataset, ft_groups)
    reads = labels.reads_of(test_ids)
    with labels.stage("evaluate"):
        truth = np.array([labels.mos(i) for i in test_ids])
    summary = metrics.summarize(predictions, truth)
    tag = f"degraded|split={'grouped' if grouped else 'random'}|ft={'yes' if finetune else 'no'}"
    return RunResult(
        tag=tag,
        replicate=replicate,
        seed=int(seed),
        split_seed=int(split_seed),
        metrics=summary,
        audit_verdict=audit.verdict,
        n_tainted_test_items=audit.n_tainted_test_items,
        n_test_items=audit.n_test_items,
        n_leaky_groups=len(audit.leaky_groups),
        test_label_reads_before_eval=reads,
        label_access_log_digest=labels.digest(),
        trace_digests=trace_digests,
        folds=[{"plcc": summary.plcc, "srocc": summary.srocc, "n": summary.n, "audit": audit.verdict}],
    )
