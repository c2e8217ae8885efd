"""Metrics, experiment orchestration, and the command-line surface.

Confusion counting follows the benign-positive convention used throughout:
tp = benign classified benign, fp = benign flagged as attack (false alarm),
tn = attack flagged as attack (detected), fn = attack classified benign
(missed).  Detection rate is tn / (tn + fn).

An experiment runs simulate -> meter -> preprocess -> (optional feature
selection) -> train -> evaluate and renders one table row per model, in the
style of the detection-result tables: per-attack experts on benign+attack
test rows, the single universal model and the OR-adjudicated ensemble on the
full test set.  Reports carry their confusion counts so every metric is
recomputable; training wall-times go to a separate timing sidecar so report
bytes stay deterministic for fixed seeds.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import detector, featsel, flowmeter, preprocess, simnet
from .detector import DetectorModel, EnsembleModel, TrainConfig
from .flowmeter import FlowRecord, MeterConfig
from .preprocess import AnonymizeMode, Dataset, LabelRule
from .simnet import ScenarioConfig

OUT_DIR_ENV = "DDSIDS_OUT_DIR"
IP_MODES = ("both", "source_only", "destination_only", "none")
EXPERT_ROW_NAMES = {"dos": "DoS", "clone": "Clone", "malsub": "Malicious Subscriber"}
SUBNET_HOSTS = (2, 3, 4, 5, 6)

LABEL_RULES = {
    "dos": LabelRule("dos", "bidirectional"),
    "clone": LabelRule("clone", "source_only"),
    "malsub": LabelRule("malsub", "bidirectional"),
}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def benign_total(self) -> int:
        return self.tp + self.fp

    @property
    def attack_total(self) -> int:
        return self.tn + self.fn


def metrics(counts: ConfusionCounts) -> tuple[float, float | None]:
    """(accuracy %, detection rate %), each rounded to 2 decimals; detection
    is None when the test set carries no attack rows."""
    if counts.total == 0:
        raise ValueError("metrics need at least one classified row")
    accuracy = round(100.0 * (counts.tp + counts.tn) / counts.total, 2)
    if counts.attack_total == 0:
        return accuracy, None
    detection = round(100.0 * counts.tn / counts.attack_total, 2)
    return accuracy, detection


def confusion_from(labels: Sequence[str], predicted_benign: np.ndarray) -> ConfusionCounts:
    truth_benign = np.array([lab == "benign" for lab in labels])
    predicted_benign = np.asarray(predicted_benign, dtype=bool)
    return ConfusionCounts(
        tp=int(np.sum(truth_benign & predicted_benign)),
        fp=int(np.sum(truth_benign & ~predicted_benign)),
        tn=int(np.sum(~truth_benign & ~predicted_benign)),
        fn=int(np.sum(~truth_benign & predicted_benign)),
    )


@dataclass(frozen=True)
class ExperimentPlan:
    scenarios: tuple[str, ...] = ("benign", "dos", "clone", "malsub")
    ip_mode: str = "both"
    feature_k: int = 78
    model: str = "all"  # all | experts | single | ensemble | expert:<attack>
    seed: int = 7
    split_fraction: float = 0.5
    epochs: int = 40
    anonymize: str = "none"  # none | shift:<k> | switch:<a>,<b> | randomize
    selection_method: str = "consensus"
    keep_timestamp: bool = True
    drop_ports: bool = True
    scale: float = 1.0

    def __post_init__(self):
        if self.ip_mode not in IP_MODES:
            raise ValueError(f"ip_mode must be one of {IP_MODES}")
        if not 0 < self.scale <= 1.0:
            raise ValueError("scale must be within (0, 1]")


def scenario_configs(plan: ExperimentPlan) -> dict[str, ScenarioConfig]:
    """Desk-scale scenario sizing: roughly 3.5k benign and 350..460 per-attack
    test sessions at the default 50/50 split."""
    s = plan.scale
    base = plan.seed * 1000

    def sessions(n: int) -> int:
        return max(1, int(round(n * s)))

    configs = {
        "benign": ScenarioConfig(
            scenario="benign",
            duration=6900.0 * s,
            benign_relaunch_period=12.0,
            rng_seed=base + 1,
        ),
        "dos": ScenarioConfig(
            scenario="dos",
            duration=425.0 * s,
            relaunch_period=0.6,
            relaunch_count=sessions(700),
            benign_relaunch_period=12.0,
            rng_seed=base + 2,
        ),
        "clone": ScenarioConfig(
            scenario="clone",
            duration=8500.0 * s,
            relaunch_period=11.0,
            relaunch_count=sessions(770),
            benign_relaunch_period=12.0,
            rng_seed=base + 3,
        ),
        "malsub": ScenarioConfig(
            scenario="malsub",
            duration=6100.0 * s,
            relaunch_period=6.6,
            relaunch_count=sessions(920),
            benign_relaunch_period=12.0,
            rng_seed=base + 4,
        ),
    }
    return {name: cfg for name, cfg in configs.items() if name in plan.scenarios}


@dataclass
class ReportRow:
    name: str
    counts: ConfusionCounts
    accuracy: float
    detection: float | None


@dataclass
class ExperimentReport:
    title: str
    rows: list[ReportRow]
    footnotes: list[str] = field(default_factory=list)
    timing: dict[str, float] = field(default_factory=dict)

    def row(self, name: str) -> ReportRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def text(self) -> str:
        width = max([len(r.name) for r in self.rows] + [len("model")])
        lines = [f"# {self.title}"]
        lines.append(
            f"{'model'.ljust(width)}  {'TP':>6} {'FP':>6} {'TN':>6} {'FN':>6} "
            f"{'Accuracy':>9} {'Detection rate':>15}"
        )
        for r in self.rows:
            det = "n/a" if r.detection is None else f"{r.detection:.2f}%"
            lines.append(
                f"{r.name.ljust(width)}  {r.counts.tp:>6} {r.counts.fp:>6} "
                f"{r.counts.tn:>6} {r.counts.fn:>6} {r.accuracy:>8.2f}% {det:>15}"
            )
        for note in self.footnotes:
            lines.append(f"# note: {note}")
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        lines = ["model,tp,fp,tn,fn,accuracy_pct,detection_rate_pct"]
        for r in self.rows:
            det = "" if r.detection is None else f"{r.detection:.2f}"
            lines.append(
                f'"{r.name}",{r.counts.tp},{r.counts.fp},{r.counts.tn},{r.counts.fn},'
                f"{r.accuracy:.2f},{det}"
            )
        return "\n".join(lines) + "\n"


@dataclass
class PipelineCache:
    """Labeled, stripped, time/addr-encoded flows shared across experiments."""

    flows: list[FlowRecord]
    footnotes: list[str]
    traces: dict[str, list[simnet.PacketRecord]] = field(default_factory=dict)


def _stage(name: str):
    class _StageContext:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, _StageError):
                raise _StageError(f"stage {name}: {exc}") from exc
            return False

    return _StageContext()


class _StageError(RuntimeError):
    pass


def build_cache(plan: ExperimentPlan, out_dir: Path | None = None) -> PipelineCache:
    footnotes: list[str] = []
    traces: dict[str, list[simnet.PacketRecord]] = {}
    with _stage("simulate"):
        for name, cfg in scenario_configs(plan).items():
            traces[name] = simnet.generate(cfg)
            if out_dir is not None:
                tdir = out_dir / "traces"
                tdir.mkdir(parents=True, exist_ok=True)
                simnet.write_packet_csv(traces[name], tdir / f"{name}.packets.csv")
                simnet.save_scenario_config(cfg, tdir / f"{name}.config.txt")

    pooled: list[FlowRecord] = []
    with _stage("meter"):
        meter_cfg = MeterConfig()
        for name in plan.scenarios:
            if name not in traces:
                continue
            flows = flowmeter.meter(traces[name], meter_cfg)
            if name in LABEL_RULES:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    flows = preprocess.label(flows, LABEL_RULES[name])
                for w in caught:
                    footnotes.append(str(w.message))
            for f in flows:
                f.flow_id = f"{name}:{f.flow_id}"
            pooled.extend(flows)
            if out_dir is not None:
                fdir = out_dir / "flows"
                fdir.mkdir(parents=True, exist_ok=True)
                flowmeter.write_flow_csv(flows, fdir / f"{name}.flows.csv")

    with _stage("preprocess"):
        pooled, removed = preprocess.strip_router_flows(pooled)
        if removed:
            footnotes.append(f"removed {removed} router session(s)")
        pooled.sort(key=lambda f: f.start_time)
        pooled = preprocess.encode_timestamps(pooled)
        pooled = preprocess.encode_ips(pooled)
        if out_dir is not None:
            fdir = out_dir / "flows"
            fdir.mkdir(parents=True, exist_ok=True)
            flowmeter.write_flow_csv(pooled, fdir / "pooled.flows.csv")
            flowmeter.write_feature_names(fdir / "features.txt")
    return PipelineCache(flows=pooled, footnotes=footnotes, traces=traces)


def _apply_anonymize(plan: ExperimentPlan, train_flows, test_flows, footnotes):
    spec = plan.anonymize
    seed = plan.seed * 1000 + 30
    if spec == "none":
        return train_flows, test_flows
    if spec.startswith("shift:"):
        k = int(spec.split(":", 1)[1])
        mode = AnonymizeMode("shift", shift_by=k)
        footnotes.append(f"addresses shifted by {k} across train and test")
        merged = preprocess.anonymize(list(train_flows) + list(test_flows), mode, seed)
        return merged[: len(train_flows)], merged[len(train_flows) :]
    if spec.startswith("switch:"):
        a, b = (int(x) for x in spec.split(":", 1)[1].split(","))
        mode = AnonymizeMode("switch", pair=(a, b))
        footnotes.append(f"addresses {a} and {b} switched in the test split")
        return train_flows, preprocess.anonymize(test_flows, mode, seed)
    if spec == "randomize":
        footnotes.append("test-split addresses reassigned per session from the subnet range")
        return train_flows, randomize_sessions(test_flows, seed)
    raise ValueError(f"unknown anonymize spec {spec!r}")


def randomize_sessions(flows: Sequence[FlowRecord], seed: int, hosts: Sequence[int] = SUBNET_HOSTS) -> list[FlowRecord]:
    """Per-session random address assignment from the subnet host range,
    keeping src != dst."""
    rng = np.random.default_rng(seed)
    out = []
    hosts = list(hosts)
    for f in flows:
        i = int(rng.integers(len(hosts)))
        j = int(rng.integers(len(hosts) - 1))
        if j >= i:
            j += 1
        out.append(replace(f, src_ip=str(hosts[i]), dst_ip=str(hosts[j])))
    return out


def build_datasets(plan: ExperimentPlan, cache: PipelineCache, footnotes: list[str]) -> tuple[Dataset, Dataset]:
    with _stage("preprocess"):
        train_flows, test_flows = preprocess.split_flows(
            cache.flows, plan.split_fraction, plan.seed * 1000 + 10
        )
        train_flows, test_flows = _apply_anonymize(plan, train_flows, test_flows, footnotes)
        train_ds, test_ds = preprocess.build_dataset_from_split(
            train_flows,
            test_flows,
            drop_ports=plan.drop_ports,
            keep_timestamp=plan.keep_timestamp,
            shuffle_seed=plan.seed * 1000 + 10,
            ip_mode=plan.ip_mode,
        )
        if train_ds.constant_features:
            footnotes.append(
                "constant feature(s) normalized to zero: " + ", ".join(train_ds.constant_features)
            )
    if plan.feature_k < train_ds.width - _n_address_columns(train_ds):
        with _stage("select"):
            ranking = compute_ranking(train_ds, plan.selection_method, plan.seed)
            train_ds = featsel.select(train_ds, ranking, plan.feature_k)
            test_ds = test_ds.project(train_ds.feature_names)
            footnotes.append(
                f"projected to top-{plan.feature_k} features by {plan.selection_method}"
            )
    return train_ds, test_ds


def compute_ranking(train_ds: Dataset, method: str, seed: int) -> featsel.FeatureRanking:
    """One of the four ranking methods, or their rank-averaged consensus."""
    if method == "univariate":
        return featsel.rank_univariate(train_ds)
    if method == "rfe":
        return featsel.rank_rfe(train_ds, step=5)
    if method == "lasso":
        return featsel.rank_lasso(train_ds, seed=seed)
    if method == "importance":
        return featsel.rank_importance(train_ds, trials=3, seed=seed)
    if method != "consensus":
        raise ValueError(f"unknown selection method {method!r}")
    rankings = [
        featsel.rank_lasso(train_ds, seed=seed),
        featsel.rank_rfe(train_ds, step=5),
        featsel.rank_univariate(train_ds),
        featsel.rank_importance(train_ds, trials=3, seed=seed),
    ]
    names = train_ds.feature_names
    mean_pos = {n: float(np.mean([r.ranked_names.index(n) for r in rankings])) for n in names}
    ranked = sorted(names, key=lambda n: (mean_pos[n], names.index(n)))
    scores = {n: float(len(names) - mean_pos[n]) for n in names}
    return featsel.FeatureRanking("consensus", ranked, scores)


def _n_address_columns(ds: Dataset) -> int:
    return sum(1 for n in ds.feature_names if n in (preprocess.SRC_IP_COL, preprocess.DST_IP_COL))


def _wanted_models(plan: ExperimentPlan) -> tuple[list[str], bool, bool]:
    """(expert attacks, train single, build ensemble)."""
    if plan.model == "all":
        return list(detector.EXPERT_ATTACKS), True, True
    if plan.model == "experts":
        return list(detector.EXPERT_ATTACKS), False, False
    if plan.model == "ensemble":
        return list(detector.EXPERT_ATTACKS), False, True
    if plan.model == "single":
        return [], True, False
    if plan.model.startswith("expert:"):
        attack = plan.model.split(":", 1)[1]
        if attack not in detector.EXPERT_ATTACKS:
            raise ValueError(f"unknown expert {attack!r}")
        return [attack], False, False
    raise ValueError(f"unknown model kind {plan.model!r}")


def train_models(
    plan: ExperimentPlan, train_ds: Dataset
) -> tuple[dict[str, DetectorModel], DetectorModel | None, EnsembleModel | None]:
    attacks, want_single, want_ensemble = _wanted_models(plan)
    experts: dict[str, DetectorModel] = {}
    shape = detector.default_shape(train_ds.width)
    with _stage("train"):
        for i, attack in enumerate(attacks):
            view = train_ds.subset({"benign", attack})
            config = TrainConfig(epochs=plan.epochs, seed=plan.seed * 1000 + 21 + i)
            experts[attack] = detector.train(view, shape, config)
        single = None
        if want_single:
            config = TrainConfig(epochs=plan.epochs, seed=plan.seed * 1000 + 24)
            single = detector.train(train_ds, shape, config)
        ensemble = None
        if want_ensemble:
            if sorted(experts) != sorted(detector.EXPERT_ATTACKS):
                raise ValueError("ensemble needs all three experts")
            ensemble = EnsembleModel(experts=dict(experts))
    return experts, single, ensemble


def evaluate_models(
    plan: ExperimentPlan,
    test_ds: Dataset,
    experts: dict[str, DetectorModel],
    single: DetectorModel | None,
    ensemble: EnsembleModel | None,
) -> list[ReportRow]:
    rows = []
    with _stage("evaluate"):
        for attack in detector.EXPERT_ATTACKS:
            if attack not in experts:
                continue
            view = test_ds.subset({"benign", attack})
            benign_pred = detector.classify(experts[attack], view.matrix)
            counts = confusion_from(view.labels, benign_pred)
            acc, det = metrics(counts)
            rows.append(ReportRow(EXPERT_ROW_NAMES[attack], counts, acc, det))
        if single is not None:
            benign_pred = detector.classify(single, test_ds.matrix)
            counts = confusion_from(test_ds.labels, benign_pred)
            acc, det = metrics(counts)
            rows.append(ReportRow("SINGLE CNN", counts, acc, det))
            if plan.anonymize == "randomize":
                # The randomization experiment reads out per-attack confusion
                # of the universal model.
                for attack in detector.EXPERT_ATTACKS:
                    view = test_ds.subset({"benign", attack})
                    counts = confusion_from(view.labels, detector.classify(single, view.matrix))
                    acc, det = metrics(counts)
                    rows.append(ReportRow(f"SINGLE CNN / {EXPERT_ROW_NAMES[attack]}", counts, acc, det))
        if ensemble is not None:
            verdicts = detector.adjudicate(ensemble, test_ds.matrix)
            counts = confusion_from(test_ds.labels, verdicts == "benign")
            acc, det = metrics(counts)
            rows.append(ReportRow("ENSEMBLE", counts, acc, det))
    return rows


def run_experiment(
    plan: ExperimentPlan, out_dir: Path | None = None, cache: PipelineCache | None = None
) -> ExperimentReport:
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    if cache is None:
        cache = build_cache(plan, out_dir)
    footnotes = list(cache.footnotes)
    train_ds, test_ds = build_datasets(plan, cache, footnotes)

    started = time.perf_counter()
    experts, single, ensemble = train_models(plan, train_ds)
    rows = evaluate_models(plan, test_ds, experts, single, ensemble)

    title = (
        f"experiment ip_mode={plan.ip_mode} k={plan.feature_k} model={plan.model} "
        f"anonymize={plan.anonymize} seed={plan.seed}"
    )
    report = ExperimentReport(title=title, rows=rows, footnotes=footnotes)
    report.timing["total_s"] = time.perf_counter() - started
    for attack, model in experts.items():
        report.timing[f"train_{attack}_s"] = model.train_seconds
    if single is not None:
        report.timing["train_single_s"] = single.train_seconds

    if out_dir is not None:
        with _stage("report"):
            (out_dir / "report.txt").write_text(report.text())
            (out_dir / "report.csv").write_text(report.csv())
            timing_lines = [f"{k},{v:.3f}" for k, v in sorted(report.timing.items())]
            (out_dir / "timing.csv").write_text("stage,seconds\n" + "\n".join(timing_lines) + "\n")
            mdir = out_dir / "models"
            mdir.mkdir(exist_ok=True)
            manifest = preprocess.dataset_manifest(
                train_ds,
                {s: LABEL_RULES[s] for s in plan.scenarios if s in LABEL_RULES},
                plan.anonymize,
                plan.seed * 1000 + 30,
                ["Flow ID", "Start Time"] + (["Src Port", "Dst Port"] if plan.drop_ports else []),
            )
            preprocess.write_manifest(out_dir / "dataset.manifest.json", manifest)
            preprocess.write_dataset_csv(train_ds, out_dir / "train.csv")
            preprocess.write_dataset_csv(test_ds, out_dir / "test.csv")
            for attack, model in experts.items():
                detector.save_model(model, mdir / f"expert-{attack}.model.txt")
                detector.write_training_log(model, mdir / f"expert-{attack}.training.csv")
            if single is not None:
                detector.save_model(single, mdir / "single.model.txt")
                detector.write_training_log(single, mdir / "single.training.csv")
                hist = emit_histogram(single, test_ds)
                write_histogram_csv(hist, out_dir / "single.histogram.csv")
            if ensemble is not None:
                detector.save_model(ensemble, mdir / "ensemble.model.txt")
    return report


def emit_histogram(model: DetectorModel, test_ds: Dataset, bins: int = 20) -> list[tuple[float, int, int]]:
    """(bin_low, expected count, predicted count) rows over [0, 1]."""
    if len(test_ds.labels) == 0:
        raise ValueError("empty test set")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    edges = np.linspace(0.0, 1.0, bins + 1)
    expected, _ = np.histogram(test_ds.binary_labels(), bins=edges)
    predicted, _ = np.histogram(detector.predict(model, test_ds.matrix), bins=edges)
    return [(float(edges[i]), int(expected[i]), int(predicted[i])) for i in range(bins)]


def write_histogram_csv(rows: Sequence[tuple[float, int, int]], path) -> None:
    with open(path, "w") as fh:
        fh.write("bin_low,expected_count,predicted_count\n")
        for lo, exp_n, pred_n in rows:
            fh.write(f"{lo:.6f},{exp_n},{pred_n}\n")


def sweep_ip_modes(
    base_plan: ExperimentPlan, out_dir: Path | None = None, cache: PipelineCache | None = None
) -> tuple[dict[str, ExperimentReport], str]:
    """The four address regimes on identical traffic and seeds, plus the
    per-attack detection ordering check (both >= destination_only >= none)."""
    if cache is None:
        cache = build_cache(base_plan, Path(out_dir) if out_dir else None)
    reports = {}
    for mode in IP_MODES:
        plan = replace(base_plan, ip_mode=mode, anonymize="none")
        mode_dir = Path(out_dir) / f"ip-{mode}" if out_dir else None
        reports[mode] = run_experiment(plan, mode_dir, cache)

    lines = ["# detection rate by address regime"]
    header = f"{'model':<22}" + "".join(f"{m:>18}" for m in IP_MODES)
    lines.append(header)
    for name in list(EXPERT_ROW_NAMES.values()) + ["SINGLE CNN", "ENSEMBLE"]:
        cells = []
        for mode in IP_MODES:
            try:
                det = reports[mode].row(name).detection
                cells.append("n/a" if det is None else f"{det:.2f}%")
            except KeyError:
                cells.append("-")
        lines.append(f"{name:<22}" + "".join(f"{c:>18}" for c in cells))
    for attack, row_name in EXPERT_ROW_NAMES.items():
        try:
            chain = [reports[m].row(row_name).detection for m in ("both", "destination_only", "none")]
        except KeyError:
            continue
        ok = all(
            a is not None and b is not None and a >= b - 1e-9 for a, b in zip(chain, chain[1:])
        )
        lines.append(
            f"# ordering both >= destination_only >= none for {row_name}: "
            + ("holds" if ok else "violated")
        )
    comparison = "\n".join(lines) + "\n"
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "ip_mode_comparison.txt").write_text(comparison)
    return reports, comparison


def run_anonymize_probes(
    base_plan: ExperimentPlan, out_dir: Path | None = None, cache: PipelineCache | None = None
) -> dict[str, ExperimentReport]:
    """Shift, switch and randomize probes on the with-IP regime."""
    if cache is None:
        cache = build_cache(base_plan, Path(out_dir) if out_dir else None)
    probes = {
        "shift": replace(base_plan, ip_mode="both", anonymize="shift:1"),
        "switch": replace(base_plan, ip_mode="both", anonymize="switch:5,6"),
        "randomize": replace(base_plan, ip_mode="both", anonymize="randomize"),
    }
    reports = {}
    for name, plan in probes.items():
        probe_dir = Path(out_dir) / f"anonymize-{name}" if out_dir else None
        reports[name] = run_experiment(plan, probe_dir, cache)
    return reports


# ---------------------------------------------------------------------------
# command line


def _default_out_dir() -> str:
    return os.environ.get(OUT_DIR_ENV, "ddsids-out")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=7, help="master seed")
    parser.add_argument("--config", default=None, help="scenario config file (key = value)")
    parser.add_argument("--out-dir", default=_default_out_dir(), help=f"artifact directory (env {OUT_DIR_ENV})")


def _plan_from_args(args) -> ExperimentPlan:
    return ExperimentPlan(
        ip_mode=getattr(args, "ip_mode", "both"),
        feature_k=getattr(args, "k", 78),
        model=getattr(args, "model", "all"),
        seed=args.seed,
        split_fraction=getattr(args, "split", 0.5),
        epochs=getattr(args, "epochs", 40),
        anonymize=getattr(args, "anonymize", "none"),
        selection_method=getattr(args, "method", "consensus"),
        scale=getattr(args, "scale", 1.0),
    )


def _cmd_simulate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.config:
        config = simnet.load_scenario_config(args.config, seed_override=args.seed)
    else:
        plan = ExperimentPlan(seed=args.seed, scale=args.scale, scenarios=(args.scenario,))
        config = scenario_configs(plan)[args.scenario]
    trace = simnet.generate(config)
    path = out / f"{config.scenario}.packets.csv"
    simnet.write_packet_csv(trace, path)
    simnet.save_scenario_config(config, out / f"{config.scenario}.config.txt")
    print(f"{path}: {len(trace)} packets")
    return 0


def _cmd_meter(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    packets = simnet.read_packet_csv(args.packets)
    flows = flowmeter.meter(packets, MeterConfig(flow_timeout=args.flow_timeout, activity_timeout=args.activity_timeout))
    path = out / (Path(args.packets).stem.replace(".packets", "") + ".flows.csv")
    flowmeter.write_flow_csv(flows, path)
    flowmeter.write_feature_names(out / "features.txt")
    print(f"{path}: {len(flows)} flows")
    return 0


def _cmd_preprocess(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pooled: list[FlowRecord] = []
    footnotes: list[str] = []
    for spec in args.flows:
        label_name, _, path = spec.partition("=")
        if not path:
            raise ValueError(f"--flows expects label=path, got {spec!r}")
        flows = flowmeter.read_flow_csv(path)
        if label_name != "benign":
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                flows = preprocess.label(flows, LABEL_RULES[label_name])
            footnotes.extend(str(w.message) for w in caught)
        for f in flows:
            f.flow_id = f"{label_name}:{f.flow_id}"
        pooled.extend(flows)
    pooled, removed = preprocess.strip_router_flows(pooled)
    pooled.sort(key=lambda f: f.start_time)
    pooled = preprocess.encode_timestamps(pooled)
    pooled = preprocess.encode_ips(pooled)
    train_ds, test_ds = preprocess.build_dataset(
        pooled,
        drop_ports=not args.keep_ports,
        keep_timestamp=not args.no_timestamp,
        split_fraction=args.split,
        shuffle_seed=args.seed,
        ip_mode=args.ip_mode,
    )
    preprocess.write_dataset_csv(train_ds, out / "train.csv")
    preprocess.write_dataset_csv(test_ds, out / "test.csv")
    manifest = preprocess.dataset_manifest(train_ds, None, "none", None, ["Flow ID", "Start Time"])
    manifest["router_sessions_removed"] = removed
    manifest["notes"] = footnotes
    preprocess.write_manifest(out / "dataset.manifest.json", manifest)
    print(f"{out}: train {train_ds.matrix.shape}, test {test_ds.matrix.shape}")
    return 0


def _cmd_select(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ds = preprocess.read_dataset_csv(args.train)
    rankers = {
        "univariate": featsel.rank_univariate,
        "rfe": featsel.rank_rfe,
        "lasso": featsel.rank_lasso,
        "importance": featsel.rank_importance,
    }
    if args.method == "all":
        rankings = [rankers[m](train_ds) for m in ("lasso", "rfe", "univariate", "importance")]
        (out / "ranking_report.txt").write_text(featsel.ranking_report(rankings))
        for r in rankings:
            featsel.write_scores_csv(r, out / f"scores-{r.method}.csv")
        print(out / "ranking_report.txt")
        return 0
    ranking = rankers[args.method](train_ds)
    featsel.write_scores_csv(ranking, out / f"scores-{args.method}.csv")
    reduced = featsel.select(train_ds, ranking, args.k)
    preprocess.write_dataset_csv(reduced, out / f"train.top{args.k}.csv")
    print(f"selected: {', '.join(reduced.feature_names)}")
    return 0


def _cmd_train(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ds = preprocess.read_dataset_csv(args.train)
    shape = [int(x) for x in args.shape.split(",")] if args.shape else detector.default_shape(train_ds.width)
    config = TrainConfig(epochs=args.epochs, seed=args.seed)
    model = detector.train(train_ds, shape, config)
    detector.save_model(model, out / "model.txt")
    detector.write_training_log(model, out / "training.csv")
    print(f"{out / 'model.txt'}: final loss {model.loss_curve[-1]:.6f}")
    return 0


def _cmd_evaluate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = detector.load_model(args.model)
    test_ds = preprocess.read_dataset_csv(args.test)
    if isinstance(model, EnsembleModel):
        verdicts = detector.adjudicate(model, test_ds.matrix)
        counts = confusion_from(test_ds.labels, verdicts == "benign")
    else:
        counts = confusion_from(test_ds.labels, detector.classify(model, test_ds.matrix))
        write_histogram_csv(emit_histogram(model, test_ds), out / "histogram.csv")
    acc, det = metrics(counts)
    det_text = "n/a" if det is None else f"{det:.2f}%"
    print(f"tp={counts.tp} fp={counts.fp} tn={counts.tn} fn={counts.fn} accuracy={acc:.2f}% detection={det_text}")
    return 0


def _cmd_experiment(args) -> int:
    plan = _plan_from_args(args)
    report = run_experiment(plan, Path(args.out_dir))
    print(report.text(), end="")
    return 0


def _cmd_sweep(args) -> int:
    plan = _plan_from_args(args)
    out = Path(args.out_dir)
    cache = build_cache(plan, out)
    reports, comparison = sweep_ip_modes(plan, out, cache)
    print(comparison, end="")
    if not args.skip_anonymize:
        probes = run_anonymize_probes(plan, out, cache)
        for name, report in probes.items():
            print(report.text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddsids",
        description="Simulate pub/sub attack traffic, meter flows, and train neural session detectors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate one scenario's packet trace")
    _add_common(p)
    p.add_argument("--scenario", choices=simnet.SCENARIOS, default="benign")
    p.add_argument("--scale", type=float, default=1.0, help="shrink default scenario sizing")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("meter", help="turn a packet trace into flow features")
    _add_common(p)
    p.add_argument("--packets", required=True)
    p.add_argument("--flow-timeout", type=float, default=120.0)
    p.add_argument("--activity-timeout", type=float, default=5.0)
    p.set_defaults(func=_cmd_meter)

    p = sub.add_parser("preprocess", help="label, encode, split, and normalize flow files")
    _add_common(p)
    p.add_argument("--flows", action="append", required=True, metavar="LABEL=PATH",
                   help="flow csv with its scenario label (benign, dos, clone, malsub); repeatable")
    p.add_argument("--ip-mode", choices=IP_MODES, default="both")
    p.add_argument("--keep-ports", action="store_true")
    p.add_argument("--no-timestamp", action="store_true")
    p.add_argument("--split", type=float, default=0.8)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("select", help="rank features and project a dataset")
    _add_common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--method", choices=("univariate", "rfe", "lasso", "importance", "all"), default="univariate")
    p.add_argument("--k", type=int, default=20)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("train", help="train a detector on a dataset csv")
    _add_common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--shape", default=None, help="comma-separated layer widths")
    p.add_argument("--epochs", type=int, default=100)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a saved model on a dataset csv")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("experiment", help="full pipeline for one regime")
    _add_common(p)
    p.add_argument("--ip-mode", dest="ip_mode", choices=IP_MODES, default="both")
    p.add_argument("--k", type=int, default=78)
    p.add_argument("--model", default="all")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--split", type=float, default=0.5)
    p.add_argument("--anonymize", default="none")
    p.add_argument("--method", default="consensus",
                   choices=("consensus", "univariate", "rfe", "lasso", "importance"))
    p.add_argument("--scale", type=float, default=1.0)
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("sweep", help="the four address regimes plus anonymization probes")
    _add_common(p)
    p.add_argument("--model", default="all")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--split", type=float, default=0.5)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--skip-anonymize", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _StageError as exc:
        print(f"ddsids: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"ddsids: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
