"""Command-line pipeline: ingest, metadata, render, eval, report, gradcheck, train-toy.

Every command is deterministic given its inputs and ``--seed``; output files
are written atomically. Failures exit with one of the :class:`ExitCode`
values and a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from enum import IntEnum

import numpy as np

from . import metrics as mt
from ._io import atomic_write_bytes, atomic_write_text
from .fixdata import (
    Dataset,
    DatasetParseError,
    FixationMap,
    Scheme,
    ValidationError,
    aggregate_fixation_map,
    parse_dataset,
)
from .metastack import Axis, MetaStack, Mode, to_incremental, validate_stack, write_metastack
from .salmap import DEFAULT_FC, NormalizationError, blur_fixations, center_prior, read_map, write_map
from .spatseq import DEFAULT_K, GmmError, spatial_maps
from .tempseq import (
    TemporalScheme,
    at_least_histogram,
    choose_T,
    fit_gaussian_histogram,
    ordinal_fixation_map,
    temporal_maps,
)


class ExitCode(IntEnum):
    OK = 0
    USAGE = 2
    MISSING_INPUT = 3
    INVALID_INPUT = 4
    PRECONDITION = 5
    NUMERICAL_FAILURE = 6


class CliError(Exception):
    def __init__(self, code: ExitCode, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class PipelineConfig:
    input: str | None = None
    output: str | None = None
    scheme: str | None = None
    axis: str = Axis.TEMPORAL.value
    mode: str = Mode.NON_INCREMENTAL.value
    K: int = DEFAULT_K
    T: int | None = None
    fc: float = DEFAULT_FC
    seed: int = 0
    kl_eps: float = mt.KL_EPS
    ig_eps: float = mt.IG_EPS
    n_splits: int = mt.N_SPLITS
    jobs: int = 1
    elbow: bool = False

    def validate(self) -> PipelineConfig:
        try:
            Axis(self.axis)
            Mode(self.mode)
            if self.scheme is not None:
                Scheme(self.scheme)
        except ValueError as exc:
            raise CliError(ExitCode.INVALID_INPUT, f"config: {exc}") from None
        for name, lo in (("K", 1), ("n_splits", 1), ("jobs", 1)):
            if getattr(self, name) < lo:
                raise CliError(ExitCode.INVALID_INPUT, f"config: {name} must be >= {lo}")
        if self.T is not None and self.T < 1:
            raise CliError(ExitCode.INVALID_INPUT, "config: T must be >= 1")
        if self.fc <= 0 or self.kl_eps <= 0 or self.ig_eps <= 0:
            raise CliError(ExitCode.INVALID_INPUT, "config: fc and eps values must be positive")
        return self


CONFIG_KEYS = tuple(f.name for f in fields(PipelineConfig))


def load_config(path) -> dict:
    if not os.path.exists(path):
        raise CliError(ExitCode.MISSING_INPUT, f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(ExitCode.INVALID_INPUT, f"{path}: invalid JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise CliError(ExitCode.INVALID_INPUT, f"{path}: config must be a JSON object")
    unknown = sorted(set(doc) - set(CONFIG_KEYS))
    if unknown:
        raise CliError(ExitCode.INVALID_INPUT, f"{path}: unknown config keys {unknown}")
    return doc


def build_config(args) -> PipelineConfig:
    """Defaults, then the --config file, then flags given on the command line."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config(args.config))
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return PipelineConfig(**values).validate()


# --------------------------------------------------------------------------
# helpers


def _require_file(path, what="input"):
    if path is None:
        raise CliError(ExitCode.USAGE, f"no {what} given")
    if not os.path.exists(path):
        raise CliError(ExitCode.MISSING_INPUT, f"{what} not found: {path}")


def _load_dataset(cfg: PipelineConfig) -> Dataset:
    _require_file(cfg.input, "input dataset")
    try:
        ds = parse_dataset(cfg.input)
    except (DatasetParseError, ValidationError) as exc:
        raise CliError(ExitCode.INVALID_INPUT, str(exc)) from None
    if cfg.scheme is not None and Scheme(cfg.scheme) is not ds.scheme:
        raise CliError(ExitCode.INVALID_INPUT,
                       f"config scheme {cfg.scheme!r} disagrees with dataset scheme {ds.scheme.value!r}")
    return ds


def _output_dir(cfg: PipelineConfig) -> str:
    if cfg.output is None:
        raise CliError(ExitCode.USAGE, "no output directory given")
    try:
        os.makedirs(cfg.output, exist_ok=True)
    except OSError as exc:
        raise CliError(ExitCode.INVALID_INPUT, f"cannot create output directory: {exc}") from None
    if not os.access(cfg.output, os.W_OK):
        raise CliError(ExitCode.INVALID_INPUT, f"output directory is not writable: {cfg.output}")
    return cfg.output


def _write_text(path, text: str) -> None:
    """Atomic write that creates missing parent directories."""
    try:
        parent = os.path.dirname(os.fspath(path))
        if parent:
            os.makedirs(parent, exist_ok=True)
        atomic_write_text(path, text)
    except OSError as exc:
        raise CliError(ExitCode.INVALID_INPUT, f"cannot write {path}: {exc}") from None


def _pmap(fn, items, jobs: int) -> list:
    """Ordered map over a bounded thread pool."""
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _json_text(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def ground_truth(record, scheme: Scheme) -> FixationMap:
    """Fixations that count as ground truth; the MIT convention drops each observer's first fixation."""
    return aggregate_fixation_map(record, skip_first=scheme is Scheme.MIT)


# --------------------------------------------------------------------------
# commands


def cmd_ingest(cfg: PipelineConfig) -> dict:
    ds = _load_dataset(cfg)
    hist = at_least_histogram(ds)
    summary = {
        "scheme": ds.scheme.value,
        "records": len(ds),
        "observers": sum(len(r.scanpaths) for r in ds),
        "fixations": sum(r.n_fixations for r in ds),
        "at_least_histogram": list(hist.counts),
    }
    if any(hist.counts):
        mu, sigma = fit_gaussian_histogram(hist)
        summary.update(mu=mu, sigma=sigma, suggested_T=choose_T(mu, sigma))
    text = _json_text(summary)
    if cfg.output:
        _write_text(cfg.output, text)
    return summary


def _stack_for(record, ds: Dataset, cfg: PipelineConfig) -> tuple[MetaStack, FixationMap]:
    """The non-incremental stack for ``record`` and the aggregate it must reproduce."""
    if Axis(cfg.axis) is Axis.TEMPORAL:
        scheme = TemporalScheme.for_scheme(ds.scheme, cfg.T)
        last = None if scheme.overflow else scheme.first_index + scheme.T - 1
        return temporal_maps(record, scheme), ordinal_fixation_map(record, scheme.first_index, last)
    skip = ds.scheme is Scheme.MIT
    stack = spatial_maps(record, cfg.K, cfg.seed, skip_first=skip, use_elbow=cfg.elbow)
    return stack, aggregate_fixation_map(record, skip_first=skip)


def cmd_metadata(cfg: PipelineConfig) -> dict:
    ds = _load_dataset(cfg)
    out = _output_dir(cfg)
    incremental = Mode(cfg.mode) is Mode.INCREMENTAL

    def work(record):
        try:
            stack, agg = _stack_for(record, ds, cfg)
            if incremental:
                stack = to_incremental(stack)
        except (GmmError, ValueError) as exc:
            raise CliError(ExitCode.PRECONDITION, f"{record.stimulus_id}: {exc}") from None
        write_metastack(stack, out)
        return record.stimulus_id, {"T": len(stack.maps),
                                    "counts": [m.count for m in stack.maps],
                                    "checks": validate_stack(stack, agg)}

    index = {"axis": cfg.axis, "mode": cfg.mode, "scheme": ds.scheme.value, "seed": cfg.seed,
             "stimuli": dict(_pmap(work, ds.records, cfg.jobs))}
    _write_text(os.path.join(out, "index.json"), _json_text(index))
    bad = [sid for sid, v in index["stimuli"].items() if not all(v["checks"].values())]
    if bad:
        raise CliError(ExitCode.NUMERICAL_FAILURE, f"stack checks failed for {bad[:5]}")
    return index


RENDER_FORMATS = ("png", "pgm", "npy")


def _write_array(m: np.ndarray, path) -> None:
    if path.endswith(".npy"):
        buf = io.BytesIO()
        np.save(buf, np.asarray(m, dtype=np.float64), allow_pickle=False)
        atomic_write_bytes(path, buf.getvalue())
    else:
        write_map(m, path)


def cmd_render(cfg: PipelineConfig, fmt: str = "png") -> list[str]:
    ds = _load_dataset(cfg)
    out = _output_dir(cfg)

    def work(record):
        fix = ground_truth(record, ds.scheme)
        if fix.count == 0:
            raise CliError(ExitCode.PRECONDITION, f"{record.stimulus_id}: no fixations to render")
        path = os.path.join(out, f"{record.stimulus_id}.{fmt}")
        _write_array(blur_fixations(fix, cfg.fc), path)
        return path

    return _pmap(work, ds.records, cfg.jobs)


def _find_prediction(pred_dir, sid) -> str:
    for ext in RENDER_FORMATS:
        path = os.path.join(pred_dir, f"{sid}.{ext}")
        if os.path.exists(path):
            return path
    raise CliError(ExitCode.MISSING_INPUT, f"no prediction for {sid!r} in {pred_dir}")


def eval_header(cfg: PipelineConfig) -> list[str]:
    return [
        "# seqsal eval",
        f"# kl_eps={cfg.kl_eps!r} ig_eps={cfg.ig_eps!r} n_splits={cfg.n_splits} seed={cfg.seed} "
        f"auc_ties={mt.AUC_TIES} fc={cfg.fc!r}",
        "# ig baseline=center_prior sauc negatives=fixations of the other stimuli of equal size",
    ]


def cmd_eval(pred_dir, cfg: PipelineConfig) -> tuple[dict[str, mt.MetricReport], mt.MetricReport]:
    """Score every stimulus of the dataset; writes ``<output>`` (CSV) and a JSON twin."""
    if not os.path.isdir(pred_dir):
        raise CliError(ExitCode.MISSING_INPUT, f"prediction directory not found: {pred_dir}")
    ds = _load_dataset(cfg)
    if not len(ds):
        raise CliError(ExitCode.PRECONDITION, "dataset has no records")
    fixes = [ground_truth(r, ds.scheme) for r in ds.records]

    def work(i):
        record, fix = ds.records[i], fixes[i]
        path = _find_prediction(pred_dir, record.stimulus_id)
        try:
            pred = read_map(path)
        except (OSError, ValueError) as exc:
            raise CliError(ExitCode.INVALID_INPUT, f"{path}: {exc}") from None
        if pred.shape != record.shape:
            raise CliError(ExitCode.INVALID_INPUT,
                           f"{path}: shape {pred.shape} does not match stimulus {record.shape}")
        others = [f.grid for j, f in enumerate(fixes) if j != i and f.shape == fix.shape]
        other = np.logical_or.reduce(others) if others else None
        try:
            gt = blur_fixations(fix, cfg.fc)
            return mt.evaluate(pred, gt, fix, other_fix=other, baseline=center_prior(record.shape),
                               kl_eps=cfg.kl_eps, ig_eps=cfg.ig_eps, n_splits=cfg.n_splits,
                               seed=[cfg.seed, i])
        except (mt.MetricError, NormalizationError) as exc:
            raise CliError(ExitCode.PRECONDITION, f"{record.stimulus_id}: {exc}") from None

    reports = dict(zip((r.stimulus_id for r in ds.records), _pmap(work, range(len(ds)), cfg.jobs)))
    mean = mt.MetricReport.mean(list(reports.values()))
    if cfg.output:
        lines = eval_header(cfg) + [",".join(("stimulus",) + mt.METRIC_NAMES)]
        lines += [rep.csv_row(sid) for sid, rep in reports.items()]
        lines.append(mean.csv_row("mean"))
        _write_text(cfg.output, "\n".join(lines) + "\n")
        doc = {"config": {k: getattr(cfg, k) for k in ("kl_eps", "ig_eps", "n_splits", "seed", "fc")},
               "auc_ties": mt.AUC_TIES,
               "per_stimulus": {sid: asdict(rep) for sid, rep in reports.items()},
               "mean": asdict(mean)}
        _write_text(os.path.splitext(cfg.output)[0] + ".json", _json_text(doc))
    return reports, mean


REPORT_COLUMNS = (("KL", "kl"), ("CC", "cc"), ("SIM", "sim"), ("NSS", "nss"))


def read_mean_row(path) -> dict[str, float]:
    _require_file(path, "metric CSV")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(rows)
    for row in reader:
        if row.get("stimulus") == "mean":
            try:
                return {key: float(row[key]) for _, key in REPORT_COLUMNS}
            except (KeyError, ValueError):
                break
    raise CliError(ExitCode.INVALID_INPUT, f"{path}: no complete 'mean' row with KL/CC/SIM/NSS")


def format_report(variants: list[tuple[str, dict[str, float]]]) -> str:
    width = max([len("variant")] + [len(name) for name, _ in variants])
    head = f"{'variant':<{width}}" + "".join(f"{title:>8}" for title, _ in REPORT_COLUMNS)
    lines = [head, "-" * len(head)]
    for name, vals in variants:
        # adding 0.0 turns a rounded -0.0 into 0.0
        cells = [f"{round(vals[key], 3) + 0.0:>8.3f}" for _, key in REPORT_COLUMNS]
        lines.append(f"{name:<{width}}" + "".join(cells))
    return "\n".join(lines) + "\n"


def cmd_report(csv_paths, output=None) -> str:
    if not csv_paths:
        raise CliError(ExitCode.USAGE, "report needs at least one metric CSV")
    variants = [(os.path.splitext(os.path.basename(p))[0], read_mean_row(p)) for p in csv_paths]
    text = format_report(variants)
    if output:
        _write_text(output, text)
    return text


def cmd_gradcheck(cfg: PipelineConfig, size: int = 32, per_tensor: int = 3):
    from .recnet.gradcheck import format_table, standard_suite

    if size % 32:
        raise CliError(ExitCode.USAGE, f"--size must be a multiple of 32, got {size}")
    checks = standard_suite(size, cfg.seed, per_tensor)
    table = format_table(checks)
    if cfg.output:
        _write_text(cfg.output, table)
    return checks, table


def cmd_traintoy(cfg: PipelineConfig, steps: int = 200, lr: float = 1e-3, n_images: int = 8,
                 size: int = 32, net_mode: str = "base"):
    from .recnet.model import ToyConfig
    from .recnet.train import TrainingDiverged, train_toy
    from .recnet.weights import save_weights
    from .synth import toy_batch

    out = _output_dir(cfg)
    T = cfg.T if cfg.T is not None else 3
    try:
        batch = toy_batch(n_images, size, seed=cfg.seed, K=T)
        result = train_toy(batch, ToyConfig(mode=net_mode, T=T, seed=cfg.seed), steps=steps, lr=lr)
    except TrainingDiverged as exc:
        raise CliError(ExitCode.NUMERICAL_FAILURE, str(exc)) from None
    except ValueError as exc:
        raise CliError(ExitCode.USAGE, str(exc)) from None
    _write_text(os.path.join(out, "trace.csv"), result.csv())
    save_weights(result.model, os.path.join(out, "weights.sqsw"))
    return result


# --------------------------------------------------------------------------
# argument parsing


def _global_flags(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="seed for every random choice")
    parser.add_argument("--jobs", type=int, default=default, help="worker threads for per-stimulus work")
    parser.add_argument("--config", default=default, help="JSON file whose keys mirror the pipeline config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqsal", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = sub.add_parser("ingest", parents=[common], help="validate a dataset and summarize it")
    p.add_argument("input", nargs="?", help="dataset JSON")
    p.add_argument("-o", "--output", help="write the summary JSON here")

    p = sub.add_parser("metadata", parents=[common], help="write temporal or spatial metadata stacks")
    p.add_argument("input", nargs="?", help="dataset JSON")
    p.add_argument("-o", "--output", help="output directory")
    p.add_argument("--scheme", choices=[s.value for s in Scheme])
    p.add_argument("--axis", choices=[a.value for a in Axis])
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--K", type=int, help="spatial clusters per image")
    p.add_argument("--T", type=int, help="temporal maps per image")
    p.add_argument("--elbow", action="store_true", default=None, help="choose K per image by the elbow rule")

    p = sub.add_parser("render", parents=[common], help="write blurred ground-truth saliency maps")
    p.add_argument("input", nargs="?", help="dataset JSON")
    p.add_argument("-o", "--output", help="output directory")
    p.add_argument("--fc", type=float, help="blur cut-off frequency, cycles per image")
    p.add_argument("--format", choices=RENDER_FORMATS, default="png")

    p = sub.add_parser("eval", parents=[common], help="score predicted maps against a dataset")
    p.add_argument("pred_dir", help="directory of <stimulus_id>.png/.pgm/.npy predictions")
    p.add_argument("input", nargs="?", help="dataset JSON")
    p.add_argument("-o", "--output", help="metric CSV (a .json twin is written next to it)")
    p.add_argument("--fc", type=float, help="blur cut-off frequency, cycles per image")
    p.add_argument("--kl-eps", dest="kl_eps", type=float)
    p.add_argument("--ig-eps", dest="ig_eps", type=float)
    p.add_argument("--n-splits", dest="n_splits", type=int, help="negative draws for AUC-Borji and sAUC")

    p = sub.add_parser("report", parents=[common], help="tabulate KL/CC/SIM/NSS of several metric CSVs")
    p.add_argument("csv", nargs="+", help="metric CSVs written by eval, one row per file")
    p.add_argument("-o", "--output", help="write the table here")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("-o", "--output", help="write the table here")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--per-tensor", type=int, default=3)

    p = sub.add_parser("train-toy", parents=[common], help="train the toy network on synthetic images")
    p.add_argument("-o", "--output", help="output directory for trace.csv and weights.sqsw")
    p.add_argument("--net", choices=["base", "incremental", "non-incremental"], default="base")
    p.add_argument("--T", type=int)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--images", type=int, default=8)
    p.add_argument("--size", type=int, default=32)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
        if args.command == "ingest":
            print(_json_text(cmd_ingest(cfg)), end="")
        elif args.command == "metadata":
            index = cmd_metadata(cfg)
            print(f"wrote {len(index['stimuli'])} {cfg.axis} stacks to {cfg.output}")
        elif args.command == "render":
            paths = cmd_render(cfg, args.format)
            print(f"wrote {len(paths)} maps to {cfg.output}")
        elif args.command == "eval":
            _, mean = cmd_eval(args.pred_dir, cfg)
            print(",".join(("stimulus",) + mt.METRIC_NAMES))
            print(mean.csv_row("mean"))
        elif args.command == "report":
            print(cmd_report(args.csv, cfg.output), end="")
        elif args.command == "gradcheck":
            checks, table = cmd_gradcheck(cfg, args.size, args.per_tensor)
            print(table, end="")
            if not all(c.passed for c in checks):
                raise CliError(ExitCode.NUMERICAL_FAILURE, "gradient check failed")
        elif args.command == "train-toy":
            result = cmd_traintoy(cfg, args.steps, args.lr, args.images, args.size, args.net)
            first, last = result.trace[0]["l_sal"], result.trace[-1]["l_sal"]
            print(f"l_sal {first:.6f} -> {last:.6f} over {len(result.trace)} steps")
    except CliError as exc:
        print(f"seqsal {args.command}: error: {exc}", file=sys.stderr)
        return int(exc.code)
    return int(ExitCode.OK)


def main(argv=None):
    sys.exit(run(argv))
