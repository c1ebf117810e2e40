"""Command-line pipeline: synth | extract | train | distill | eval | adapt-eval | bench.

Every stage reads a config file (``--config``), writes into the output
directory, and stamps each output with the stage's config hash. Exit codes:
0 ok, 2 config or input-format error, 3 missing input, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from mtnam import bench, plotting, t3a
from mtnam.config import PipelineConfig
from mtnam.errors import ConfigError, FormatError, MissingInputError, TrainingDivergedError
from mtnam.evaluation import MetricsReport, SplitSpec, chronological_split, events_in, evaluate
from mtnam.features import (
    FeatureMatrix,
    apply_scaler,
    extract_features,
    feature_label,
    read_feature_csv,
    write_feature_csv,
)
from mtnam.mtnam import MtNamModel, distill, distillation_mse
from mtnam.nam import (
    EXU,
    LogisticModel,
    MlpModel,
    NamArch,
    NamModel,
    TrainConfig,
    downsample_nonictal,
    grid_search,
    grid_search_dnn,
    grid_search_lr,
)
from mtnam.rng import substream
from mtnam.signal_io import (
    Recording,
    SynthConfig,
    load_annotations,
    read_csv_recording,
    read_edf,
    synth_recording,
    write_annotations,
    write_csv_recording,
)

log = logging.getLogger("mtnam")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# Helpers


def header(cfg: PipelineConfig, stage: str) -> str:
    return f"mtnam {stage} config_hash={cfg.stage_hash(stage)}"


def require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise MissingInputError(f"missing input {path} (produced by the '{produced_by}' stage)")
    return path


def check_hash(cfg: PipelineConfig, path: Path, stage: str) -> None:
    """Warn when an upstream file was produced under a different config."""
    with open(path) as fh:
        first = fh.readline()
    marker = "config_hash="
    if marker not in first:
        return
    found = first.split(marker, 1)[1].split()[0]
    want = cfg.stage_hash(stage)
    if found != want:
        log.warning("%s was produced with config hash %s, current %s stage hash is %s",
                    path, found, stage, want)


def synth_config(cfg: PipelineConfig) -> SynthConfig:
    return SynthConfig(
        n_channels=cfg.int("synth.n_channels"),
        duration_s=cfg.float("synth.duration_s"),
        fs=cfg.int("synth.fs"),
        seizures=tuple(cfg.intervals("synth.seizures")),
        noise_scale=cfg.float("synth.noise_scale"),
        band_boost=tuple(cfg.list("synth.band_boost", float)),
        ll_boost=cfg.float("synth.ll_boost"),
        seed=int(substream(cfg.seed, "data").integers(2**31)),
    )


def train_config(cfg: PipelineConfig) -> TrainConfig:
    try:
        return TrainConfig(
            lr=cfg.float("train.lr"), epochs=cfg.int("train.epochs"), batch_size=cfg.int("train.batch_size"),
            beta1=cfg.float("train.beta1"), beta2=cfg.float("train.beta2"), eps=cfg.float("train.eps"),
            downsample_ratio=cfg.float("train.downsample_ratio"), seed=int(substream(cfg.seed, "data").integers(2**31)),
            patience=cfg.int("train.patience"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def annotations_path(cfg: PipelineConfig) -> Path:
    if cfg.str("data.source") == "synth":
        return require(cfg.out_dir / "annotations.csv", "synth")
    p = cfg.path("data.annotations")
    if p is None:
        raise ConfigError("data.annotations is required for edf and csv sources")
    return require(p, "data.annotations")


def load_recording(cfg: PipelineConfig) -> Recording:
    source = cfg.str("data.source")
    if source == "synth":
        path = require(cfg.out_dir / "recording.csv", "synth")
        check_hash(cfg, path, "synth")
        rec = read_csv_recording(path, cfg.int("synth.fs"))
    elif source == "csv":
        p = cfg.path("data.csv")
        if p is None:
            raise ConfigError("data.csv is required when data.source = csv")
        rec = read_csv_recording(require(p, "data.csv"), cfg.int("data.fs"))
    elif source == "edf":
        p = cfg.path("data.edf")
        if p is None:
            raise ConfigError("data.edf is required when data.source = edf")
        rec = read_edf(require(p, "data.edf"), cfg.list("data.channels") or None)
    else:
        raise ConfigError(f"data.source must be synth, csv or edf, got {source!r}")
    channels = cfg.list("data.channels")
    if channels and source != "edf":
        rec = rec.select(channels)
    return Recording(rec.channels, rec.fs, rec.samples, load_annotations(annotations_path(cfg)))


def load_features(cfg: PipelineConfig) -> FeatureMatrix:
    path = require(cfg.out_dir / "features.csv", "extract")
    check_hash(cfg, path, "extract")
    return read_feature_csv(path)


def load_split(cfg: PipelineConfig):
    fm = load_features(cfg)
    events = load_annotations(annotations_path(cfg))
    spec = SplitSpec(cfg.float("split.train"), cfg.float("split.val"), cfg.float("split.test"))
    train, val, test = chronological_split(fm, events, spec)
    return train, val, test, events


def load_stage_model(cfg: PipelineConfig, name: str, stage: str, cls):
    path = require(cfg.out_dir / name, stage)
    check_hash(cfg, path, stage)
    return cls.load(path)


def distill_inputs(cfg: PipelineConfig, train: FeatureMatrix, teacher: NamModel) -> FeatureMatrix:
    """The exact downsampled training rows the teacher saw, standardized."""
    tc = train_config(cfg)
    ds = downsample_nonictal(train, tc.downsample_ratio, substream(tc.seed, "downsample"))
    return apply_scaler(teacher.scaler, ds)


def depths(cfg: PipelineConfig) -> list[int]:
    ds = cfg.list("distill.depths", int)
    if not ds or min(ds) < 1:
        raise ConfigError("distill.depths needs at least one depth >= 1")
    return ds


def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# Stages


def cmd_synth(cfg: PipelineConfig) -> list[Path]:
    if cfg.str("data.source") != "synth":
        raise ConfigError("the synth stage needs data.source = synth")
    try:
        rec = synth_recording(synth_config(cfg))
    except FormatError as exc:
        raise ConfigError(f"invalid synth settings: {exc}") from None
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    h = header(cfg, "synth")
    write_csv_recording(rec, out / "recording.csv", h)
    write_annotations(rec.seizures, out / "annotations.csv", h)
    return [out / "recording.csv", out / "annotations.csv"]


def cmd_extract(cfg: PipelineConfig) -> list[Path]:
    rec = load_recording(cfg)
    fm = extract_features(rec, cfg.float("features.win_s"))
    path = cfg.out_dir / "features.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_feature_csv(fm, path, header(cfg, "extract"))
    return [path]


def cmd_train(cfg: PipelineConfig) -> list[Path]:
    train, val, test, _ = load_split(cfg)
    tc = train_config(cfg)
    out = cfg.out_dir
    h = header(cfg, "train")
    acts = cfg.list("nam.activations")
    space = [(NamArch(hid, act), tc) for hid in cfg.list("nam.hidden", int) for act in acts]
    if not space:
        raise ConfigError("empty NAM hyperparameter grid")
    (arch, _), nam, rows = grid_search(space, train, val)
    nam.save(out / "nam.model", h)
    lines = [f"# {h}", "model,val_f1,best_epoch,selected"]
    lines += [f"{r.csv_row()},{int(r.params['candidate'][0] == arch)}" for r in rows]
    written = [out / "nam.model"]

    if cfg.bool("baselines.enabled"):
        l2, lr_model, lr_rows = grid_search_lr(cfg.list("baselines.lr_l2", float), train, val, tc)
        lr_model.save(out / "lr.model", h)
        lines += [f"{r.csv_row()},{int(r.params['candidate'] == l2)}" for r in lr_rows]
        dnn_space = [(hid, act) for hid in cfg.list("baselines.dnn_hidden", int)
                     for act in cfg.list("baselines.dnn_activations")]
        best_dnn, dnn_model, dnn_rows = grid_search_dnn(dnn_space, train, val, tc)
        dnn_model.save(out / "dnn.model", h)
        lines += [f"{r.csv_row()},{int(r.params['candidate'] == best_dnn)}" for r in dnn_rows]
        written += [out / "lr.model", out / "dnn.model"]

    written.append(write_text(out / "grid_report.csv", "\n".join(lines) + "\n"))
    split_lines = [f"# {h}", "split,n_windows,n_ictal,start_s,end_s"]
    for name, part in (("train", train), ("val", val), ("test", test)):
        split_lines.append(f"{name},{len(part)},{int(part.labels.sum())},"
                           f"{part.window_start_s[0]:.17g},{part.window_start_s[-1] + part.win_s:.17g}")
    written.append(write_text(out / "split.csv", "\n".join(split_lines) + "\n"))
    log.info("selected NAM h=%d %s", arch.hidden, arch.activation)
    return written


def cmd_distill(cfg: PipelineConfig) -> list[Path]:
    teacher = load_stage_model(cfg, "nam.model", "train", NamModel)
    train, _, _, _ = load_split(cfg)
    X = distill_inputs(cfg, train, teacher).rows
    out = cfg.out_dir
    h = header(cfg, "distill")
    students = {}
    lines = [f"# {h}", "feature,depth,mse"]
    written = []
    for d in depths(cfg):
        mt = distill(teacher, X, d)
        students[d] = mt
        mt.save(out / f"mt{d}.model", h)
        written.append(out / f"mt{d}.model")
        for j, mse in enumerate(distillation_mse(teacher, mt, X)):
            lines.append(f"{j},{d},{mse:.17g}")
    written.append(write_text(out / "distill_report.csv", "\n".join(lines) + "\n"))

    n_plot = min(cfg.int("distill.plot_features"), teacher.M)
    if n_plot > 0:
        # The features whose teacher functions vary the most on the data.
        spread = teacher.contributions(X).std(axis=0)
        picks = sorted(np.argsort(-spread, kind="stable")[:n_plot].tolist())
        labels = [feature_label(j) for j in range(teacher.M)]
        written.append(plotting.plot_feature_functions(teacher, students, X, picks,
                                                       out / "figures" / "feature_functions.png", labels))
    return written


def _additive_models(cfg: PipelineConfig) -> dict:
    models = {"nam": load_stage_model(cfg, "nam.model", "train", NamModel)}
    for d in depths(cfg):
        models[f"mt{d}"] = load_stage_model(cfg, f"mt{d}.model", "distill", MtNamModel)
    return models


def cmd_eval(cfg: PipelineConfig) -> list[Path]:
    _, _, test, events = load_split(cfg)
    test_events = events_in(test, events)
    models = _additive_models(cfg)
    if cfg.bool("baselines.enabled"):
        models["lr"] = load_stage_model(cfg, "lr.model", "train", LogisticModel)
        models["dnn"] = load_stage_model(cfg, "dnn.model", "train", MlpModel)
    out = cfg.out_dir
    h = header(cfg, "eval")
    thr = cfg.float("eval.threshold")
    rows = [f"# {h}", MetricsReport.csv_header()]
    written = []
    for name, model in models.items():
        scores = model.predict_proba(model.scaler.transform(test.rows))
        rep = evaluate(scores, test.labels, test.window_start_s, test_events, thr, test.win_s, name)
        written.append(write_text(out / f"metrics_{name}.txt", f"# {h}\n" + rep.to_kv()))
        rows.append(rep.csv_row())
    written.append(write_text(out / "metrics.csv", "\n".join(rows) + "\n"))
    return written


def h0_grid(cfg: PipelineConfig) -> list[float]:
    grid = cfg.list("t3a.h0_grid", float)
    return grid or t3a.default_h0_grid(cfg.int("t3a.h0_points")).tolist()


def cmd_adapt_eval(cfg: PipelineConfig) -> list[Path]:
    _, val, test, events = load_split(cfg)
    test_events = events_in(test, events)
    out = cfg.out_dir
    h = header(cfg, "adapt-eval")
    thr = cfg.float("eval.threshold")
    rows = [f"# {h}", MetricsReport.csv_header() + ",h0,n_accepted"]
    written = []
    for name, model in _additive_models(cfg).items():
        va = apply_scaler(model.scaler, val)
        te = apply_scaler(model.scaler, test)
        best_h0, h0_rows = t3a.tune_h0(model, va, h0_grid(cfg))
        written.append(write_text(out / f"h0_{name}.csv", f"# {h}\nh0,val_f1,n_accepted\n" + "".join(
            f"{r.h0:.17g},{r.f1:.17g},{r.n_accepted}\n" for r in h0_rows)))
        stream = t3a.run_stream(t3a.forward_fn_for(model), t3a.init_adapter(model.M, best_h0), te)
        stream.write_csv(out / f"stream_{name}.csv", h)
        written.append(out / f"stream_{name}.csv")
        rep = evaluate(stream.y_adapted, test.labels, test.window_start_s, test_events, thr, test.win_s,
                       f"{name}+t3a")
        rep.extra = {"h0": best_h0, "n_accepted": int(stream.accepted.sum())}
        written.append(write_text(out / f"metrics_{name}_t3a.txt", f"# {h}\n" + rep.to_kv()))
        rows.append(f"{rep.csv_row()},{best_h0:.17g},{int(stream.accepted.sum())}")
    written.append(write_text(out / "metrics_t3a.csv", "\n".join(rows) + "\n"))
    return written


def full_scale_models(M: int, hidden: int, depth: int, seed: int):
    """Random-weight NAM of the given size and its distilled trees, for timing only."""
    rng = substream(seed, "bench")
    nam = NamModel.init(M, NamArch(hidden), rng)
    nam.params["B"][...] = rng.normal(0.0, 0.5, nam.params["B"].shape)
    X = rng.standard_normal((512, M))
    return nam, distill(nam, X, depth), X


def cmd_bench(cfg: PipelineConfig) -> list[Path]:
    out = cfg.out_dir
    R, W = cfg.int("bench.R"), cfg.int("bench.W")
    tag = cfg.str("bench.host_tag") or bench.host_tag()
    _, _, test, _ = load_split(cfg)
    entries = []  # (name, model, adapter)
    models = _additive_models(cfg)
    for name, model in models.items():
        entries.append((name, model, False))
    deepest = f"mt{max(depths(cfg))}"
    entries.append((deepest + "+t3a", models[deepest], True))
    for name, cls in (("lr", LogisticModel), ("dnn", MlpModel)):
        if (out / f"{name}.model").exists():
            entries.append((name, load_stage_model(cfg, f"{name}.model", "train", cls), False))

    rows = [f"# {header(cfg, 'bench')} flop_rules=v{bench.FLOP_RULES_VERSION}", bench.BENCH_HEADER]
    names, flops, means, stds = [], [], [], []

    def record(name, model, adapter, inputs):
        f = bench.count_flops(bench.describe(model, adapter))
        fwd = bench.single_forward(model, adapter_h0=t3a.LN2 if adapter else None)
        lat = bench.measure_latency(fwd, inputs, R, W, name)
        rows.append(bench.bench_row(name, f, lat, tag))
        names.append(name)
        flops.append(f)
        means.append(lat.mean_us)
        stds.append(lat.std_us)

    for name, model, adapter in entries:
        inputs = [np.ascontiguousarray(r) for r in model.scaler.transform(test.rows)]
        record(name, model, adapter, inputs)
    if cfg.bool("bench.full_scale"):
        M, hid = cfg.int("bench.full_M"), cfg.int("bench.full_hidden")
        d = max(depths(cfg))
        nam, mt, X = full_scale_models(M, hid, d, cfg.seed)
        inputs = [np.ascontiguousarray(r) for r in X]
        record(f"nam_h{hid}_M{M}", nam, False, inputs)
        record(f"mt{d}_M{M}", mt, False, inputs)
        record(f"mt{d}+t3a_M{M}", mt, True, inputs)
        lr_flops = bench.count_flops(bench.ModelDescriptor("lr", M))
        rows.append(bench.bench_row(f"lr_M{M}", lr_flops, None, tag))
        names.append(f"lr_M{M}")
        flops.append(lr_flops)

    path = write_text(out / "bench.csv", "\n".join(rows) + "\n")
    figs = [plotting.plot_flops(names, flops, out / "figures" / "flops.png"),
            plotting.plot_latency(names[:len(means)], means, stds, out / "figures" / "latency.png")]
    return [path, *figs]


STAGES = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "train": cmd_train,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "adapt-eval": cmd_adapt_eval,
    "bench": cmd_bench,
}


def cmd_all(cfg: PipelineConfig) -> list[Path]:
    written = []
    for name, fn in STAGES.items():
        if name == "synth" and cfg.str("data.source") != "synth":
            continue
        written += fn(cfg)
    return written


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtnam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [*STAGES, "all"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="pipeline config file")
        p.add_argument("--out", help="output directory (overrides run.out_dir)")
        p.add_argument("--seed", type=int, help="global seed (overrides run.seed)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(args.config)
        if args.out:
            cfg.set("run.out_dir", str(Path(args.out).resolve()))
        if args.seed is not None:
            cfg.set("run.seed", args.seed)
        fn = cmd_all if args.command == "all" else STAGES[args.command]
        for path in fn(cfg):
            print(path)
    except MissingInputError as exc:
        print(f"mtnam: error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingDivergedError as exc:
        print(f"mtnam: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FormatError) as exc:
        print(f"mtnam: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
