"""Command-line entry point: ``lungsound <verb> [--config FILE] [--key value ...]``.

Exit codes: 0 success, 1 usage, 2 data error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset, evaluation, pipeline, synth
from .dataset import DataError
from .model import ClassifierHead, WeightLoadError, extract_features, predict_proba, train_head
from .pipeline import ConfigError, PipelineConfig
from .tensorio import FormatError

log = logging.getLogger("lungsound")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def cmd_summarize(cfg: PipelineConfig, args) -> int:
    pairs, problems = dataset.recording_pairs(cfg.data_dir)
    cycles, status = [], EXIT_OK
    for wav, txt in pairs:
        try:
            cycles.extend(dataset.load_recording(wav, txt))
        except DataError as exc:
            problems.append(f"{wav.name}: {exc}")
    print(dataset.dataset_summary(cycles).table())
    for p in problems:
        print(f"error: {p}", file=sys.stderr)
        status = EXIT_DATA
    return status


def cmd_featurize(cfg: PipelineConfig, args) -> int:
    res = pipeline.featurize(cfg)
    print(f"{res.directory}: {res.written} written, {res.skipped} up to date")
    return EXIT_OK


def _write_report(report: evaluation.MetricsReport, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    js, txt = out / "report.json", out / "report.txt"
    js.write_text(report.to_json(), encoding="utf-8")
    txt.write_text(report.to_text(), encoding="utf-8")
    return js, txt


def cmd_cv(cfg: PipelineConfig, args) -> int:
    cycles = dataset.load_directory(cfg.data_dir)
    n_patients = len({c.patient_id for c in cycles})
    if n_patients < cfg.k:
        raise UsageError(f"k={cfg.k} folds but only {n_patients} patients in {cfg.data_dir}")
    cycles, X = pipeline.cycle_features(cfg, cycles)
    report = evaluation.cross_validate(cycles, X, cfg.k, cfg.train(), cfg.seed, cfg.as_dict())
    js, _ = _write_report(report, cfg.out_dir)
    print(report.to_text(), end="")
    print(f"wrote {js}")
    return EXIT_OK


def cmd_train(cfg: PipelineConfig, args) -> int:
    cycles, X = pipeline.cycle_features(cfg)
    y = np.array([int(c.label) for c in cycles])
    if cfg.holdout:
        train, val, test = evaluation.split_80_20(cycles, cfg.seed)
        index = {c.identity: i for i, c in enumerate(cycles)}
        pick = {name: np.array([index[c.identity] for c in part], dtype=np.intp)
                for name, part in (("train", train), ("validation", val), ("test", test))}
        head = train_head(X[pick["train"]], y[pick["train"]], cfg.train())
        for name in ("validation", "test"):
            cm = evaluation.score_head(X[pick[name]], y[pick[name]], head)
            print(f"{name} accuracy: {evaluation.accuracy(cm):.4f} (n={cm.total})")
    else:
        head = train_head(X, y, cfg.train())
    Path(cfg.model).parent.mkdir(parents=True, exist_ok=True)
    head.save(cfg.model)
    if head.history:
        print(f"final training loss: {head.history[-1]:.6f}")
    print(f"wrote {cfg.model}")
    return EXIT_OK


def _predict_inputs(paths):
    """Yield (identity, clip) for each cycle of each input WAV.

    A sibling ``.txt`` annotation splits the recording into cycles;
    otherwise the whole file is one cycle.
    """
    for p in map(Path, paths):
        clip = dataset.read_wav(p)
        ann = p.with_suffix(".txt")
        if ann.exists():
            anns = dataset.parse_annotation_file(ann.read_text(encoding="utf-8"))
            meta = dataset.RecordingMeta(0, "x", "x", "x", "x")
            for c in dataset.extract_cycles(clip, meta, anns):
                yield f"{p.name}#{c.index}", c.clip
        else:
            yield f"{p.name}#0", clip


def cmd_predict(cfg: PipelineConfig, args) -> int:
    if not Path(cfg.model).exists():
        raise DataError(f"model file {cfg.model} not found (run `train` first)")
    head = ClassifierHead.load(cfg.model)
    fx = cfg.build_extractor()
    if head.dim != fx.output_dim:
        raise DataError(f"head expects {head.dim} features, extractor produces {fx.output_dim}")
    inputs = args.inputs
    if not inputs:
        inputs = sorted(str(p) for p in Path(cfg.data_dir).glob("*.wav"))
    names = " ".join(f"p_{c.display}" for c in dataset.ClassLabel)
    print(f"cycle\tlabel\t{names}")
    for ident, clip in _predict_inputs(inputs):
        img = pipeline.clip_image(clip, cfg)
        p = predict_proba(extract_features(img, fx), head)
        label = dataset.ClassLabel(int(np.argmax(p)))
        print(f"{ident}\t{label.display}\t" + " ".join(f"{v:.6f}" for v in p))
    return EXIT_OK


def cmd_synth(cfg: PipelineConfig, args) -> int:
    cycles = synth.generate_corpus(cfg.synth())
    written = synth.write_corpus(cycles, cfg.data_dir)
    print(f"wrote {len(written)} recordings ({len(cycles)} cycles) to {cfg.data_dir}")
    return EXIT_OK


def cmd_report(cfg: PipelineConfig, args) -> int:
    path = Path(args.report or Path(cfg.out_dir) / "report.json")
    report = evaluation.MetricsReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    print(report.to_text(), end="")
    return EXIT_OK


COMMANDS = {
    "summarize": (cmd_summarize, "print per-class cycle counts for a data directory"),
    "featurize": (cmd_featurize, "build the on-disk feature-image cache"),
    "train": (cmd_train, "train the softmax head and save it"),
    "predict": (cmd_predict, "classify cycles with a saved head"),
    "cv": (cmd_cv, "patient-wise k-fold cross-validation; writes report.json/report.txt"),
    "synth": (cmd_synth, "write a synthetic corpus as WAV + annotation files"),
    "report": (cmd_report, "re-render a saved report.json as a text table"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lungsound", description="Respiratory-cycle classification toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, allow_abbrev=False)
        p.add_argument("--config", help="flat key=value config file")
        group = p.add_argument_group("config overrides")
        for key in pipeline.CONFIG_KEYS:
            flags = [f"--{key}"]
            if "_" in key:
                flags.append(f"--{key.replace('_', '-')}")
            flags += [f"--{a}" for a, target in pipeline.ALIASES.items() if target == key]
            group.add_argument(*flags, dest=f"cfg_{key}", metavar="VALUE", default=None)
        if name == "predict":
            p.add_argument("inputs", nargs="*", help="WAV files (default: all in data_dir)")
        if name == "report":
            p.add_argument("--report", help="report.json path (default: <out_dir>/report.json)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    try:
        cfg = pipeline.load_config(args.config, overrides)
        return COMMANDS[args.command][0](cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"lungsound: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, WeightLoadError, OSError, ValueError) as exc:
        print(f"lungsound {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AssertionError as exc:
        print(f"lungsound {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
