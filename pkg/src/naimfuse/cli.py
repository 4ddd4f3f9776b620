"""Command-line entry point: ``naimfuse generate | train | fuse | report``.

Exit codes: 0 success, 1 internal error, 2 bad arguments, 3 unreadable or
invalid input data, 4 missing upstream outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import (DataLoadError, SchemaError, SignalSpec, load_csv, load_embeddings, stratified_kfold_split,
                   synth_generate, write_cohort)
from .data.split import SplitError
from .fusion import (DEFAULT_GRID, FusionError, MetricsReport, MissingFoldError, alpha_sweep, evaluate,
                     evaluate_folds, format_table, write_report_json, write_sweep_csv)
from .models import NaimConfig
from .models.checkpoint import CheckpointError, save_checkpoint
from .pipeline import EXPERIMENTS, fold_dir, preset, read_predictions, run_experiment, write_predictions
from .training import write_log

logger = logging.getLogger("naimfuse")

EXIT_OK, EXIT_INTERNAL, EXIT_ARGS, EXIT_INPUT, EXIT_DEPENDENCY = 0, 1, 2, 3, 4


class ArgumentError(ValueError):
    pass


class InputError(RuntimeError):
    pass


class DependencyError(RuntimeError):
    pass


@dataclass
class RunConfig:
    out: str = "run"
    schema: str | None = None
    data: str | None = None
    embeddings: str | None = None
    input_dir: str | None = None
    experiment: str = "all"
    seed: int = 0
    folds: int = 5
    jobs: int = 1
    alpha_grid: list[float] = field(default_factory=lambda: list(DEFAULT_GRID))
    embedding_width: int | None = None
    knn_k: int = 5
    naim: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    # generate
    n: int = 100
    missing_rate: float = 0.3
    missing_mode: str = "mcar"
    prevalence: float = 0.36
    embedding_dim: int = 2048

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ArgumentError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def path(self, kind: str) -> Path | None:
        explicit = getattr(self, kind)
        if explicit:
            return Path(explicit)
        if self.input_dir:
            return Path(self.input_dir) / f"{kind}.csv"
        return None

    def experiments(self) -> list[str]:
        if self.experiment == "all":
            return list(EXPERIMENTS)
        if self.experiment not in EXPERIMENTS:
            raise ArgumentError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS} or 'all'")
        return [self.experiment]


def _grid(text: str) -> list[float]:
    try:
        grid = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha grid {text!r}") from None
    if not grid or any(not 0.0 <= a <= 1.0 for a in grid):
        raise argparse.ArgumentTypeError("alpha grid values must lie in [0, 1]")
    return grid


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="naimfuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration; flags override it")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        return p

    g = common(sub.add_parser("generate", help="write a synthetic cohort"))
    g.add_argument("--n", type=int)
    g.add_argument("--missing-rate", type=float)
    g.add_argument("--missing-mode", choices=("mcar", "label"))
    g.add_argument("--prevalence", type=float)
    g.add_argument("--embedding-dim", type=int)

    t = common(sub.add_parser("train", help="train one or all experiments over the CV folds"))
    t.add_argument("--experiment", choices=(*EXPERIMENTS, "all"))
    t.add_argument("--input-dir", help="directory holding schema.csv, data.csv, embeddings.csv")
    t.add_argument("--schema")
    t.add_argument("--data")
    t.add_argument("--embeddings")
    t.add_argument("--folds", type=int)
    t.add_argument("--jobs", type=int)
    t.add_argument("--max-epochs", type=int, help="override max epochs for every experiment")

    f = common(sub.add_parser("fuse", help="alpha sweep and cross-validated report"))
    f.add_argument("--alpha-grid", type=_grid)
    f.add_argument("--folds", type=int)

    common(sub.add_parser("report", help="print the summary table of a fused run"))
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        try:
            cfg = RunConfig.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
    overrides = {k: v for k, v in vars(args).items()
                 if v is not None and k not in ("config", "command", "verbose", "max_epochs")}
    for key, value in overrides.items():
        setattr(cfg, key, value)
    if getattr(args, "max_epochs", None) is not None:
        for exp in EXPERIMENTS:
            cfg.train.setdefault(exp, {})["max_epochs"] = args.max_epochs
    return cfg


# commands ---------------------------------------------------------------------

def cmd_generate(cfg: RunConfig) -> int:
    if not 0.0 <= cfg.missing_rate <= 1.0:
        raise ArgumentError(f"--missing-rate must lie in [0, 1], got {cfg.missing_rate}")
    if cfg.n < 1 or cfg.embedding_dim < 1 or not 0.0 < cfg.prevalence < 1.0:
        raise ArgumentError("need n >= 1, embedding-dim >= 1 and prevalence in (0, 1)")
    signal = SignalSpec(prevalence=cfg.prevalence, embedding_dim=cfg.embedding_dim)
    cohort = synth_generate(cfg.n, missing_rate=cfg.missing_rate, signal=signal, seed=cfg.seed,
                            missing_mode=cfg.missing_mode)
    out = Path(cfg.out)
    try:
        paths = write_cohort(cohort, out)
    except OSError as exc:
        raise InputError(f"cannot write to {out}: {exc}") from None
    raw = cohort.raw
    print(f"wrote {len(raw)} patients to {out}: prevalence {raw.labels.mean():.3f}, "
          f"missing rate {1 - raw.observed.mean():.3f}, embedding width {cohort.embeddings.shape[1]}")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return EXIT_OK


def _load_inputs(cfg: RunConfig, need_embeddings: bool):
    paths = {k: cfg.path(k) for k in ("schema", "data", "embeddings")}
    for kind in ("schema", "data") + (("embeddings",) if need_embeddings else ()):
        if paths[kind] is None:
            raise InputError(f"no {kind} file given (use --{kind} or --input-dir)")
        if not paths[kind].exists():
            raise InputError(f"{kind} file not found: {paths[kind]}")
    raw = load_csv(paths["data"], paths["schema"])
    if raw.labels is None:
        raise InputError(f"{paths['data']}: training data needs a label column")
    embeddings = None
    if need_embeddings:
        embeddings = load_embeddings(paths["embeddings"], raw.ids, cfg.embedding_width)
    return raw, embeddings


def cmd_train(cfg: RunConfig) -> int:
    experiments = cfg.experiments()
    if cfg.jobs < 1 or cfg.folds < 2:
        raise ArgumentError("need --jobs >= 1 and --folds >= 2")
    raw, embeddings = _load_inputs(cfg, need_embeddings="imaging" in experiments)
    try:
        plan = stratified_kfold_split(raw.labels, cfg.folds, cfg.seed)
    except SplitError as exc:
        raise InputError(str(exc)) from None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.dumps(), encoding="utf-8")
    (out / "split.json").write_text(json.dumps(plan.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
    naim_cfg = NaimConfig(**cfg.naim)
    for exp in experiments:
        train_cfg = preset(exp, seed=cfg.seed, **cfg.train.get(exp, {}))
        outputs = run_experiment(exp, raw, embeddings, plan, cfg.seed, jobs=cfg.jobs,
                                 train_config=train_cfg, naim_config=naim_cfg, knn_k=cfg.knn_k)
        imputation_lines = []
        for fo in outputs:
            d = fold_dir(out, exp, fo.fold)
            d.mkdir(parents=True, exist_ok=True)
            save_checkpoint(fo.model, d / "checkpoint.npz", schema=raw.schema,
                            extra={"experiment": exp, "fold": fo.fold, "best_epoch": fo.result.best_epoch})
            write_log(fo.result.log, d / "train_log.csv")
            write_predictions(fo, d / "predictions.csv")
            for rep in fo.imputation:
                line = f"fold {fo.fold} {rep.summary()}"
                imputation_lines.append(line)
                print(f"[{exp}] imputation {line}")
            test = evaluate(fo.proba["test"], fo.labels["test"])
            print(f"[{exp}] fold {fo.fold}: epochs {len(fo.result.log)}, best epoch {fo.result.best_epoch}, "
                  f"val loss {fo.result.best_val_loss:.4f}, test BA {test.ba:.4f}, MCC {test.mcc:.4f}"
                  + (f" (aborted: {fo.result.aborted})" if fo.result.aborted else ""))
        if imputation_lines:
            (out / exp / "imputation.txt").write_text("\n".join(imputation_lines) + "\n", encoding="utf-8")
    return EXIT_OK


def _collect(out: Path, experiment: str, folds: int):
    probs, labels, ids, missing = {}, {}, {}, []
    for k in range(folds):
        path = fold_dir(out, experiment, k) / "predictions.csv"
        if not path.exists():
            missing.append(k)
            continue
        ids[k], labels[k], probs[k] = read_predictions(path, "test")
    return probs, labels, ids, missing


def cmd_fuse(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    collected = {exp: _collect(out, exp, cfg.folds) for exp in EXPERIMENTS}
    gaps = {exp: collected[exp][3] for exp in ("imaging", "clinical-naim") if collected[exp][3]}
    if gaps:
        raise DependencyError("incomplete fold outputs: " + "; ".join(
            f"{exp} missing folds {folds}" for exp, folds in gaps.items()))
    img_p, img_y, img_ids, _ = collected["imaging"]
    cli_p, cli_y, cli_ids, _ = collected["clinical-naim"]
    for k in img_p:
        if img_ids[k] != cli_ids[k] or not np.array_equal(img_y[k], cli_y[k]):
            raise InputError(f"fold {k}: imaging and clinical test sets differ; train both with the same seed")
    reports = {
        "imaging": evaluate_folds("imaging", img_p, img_y),
        "clinical-naim": evaluate_folds("clinical-naim", cli_p, cli_y),
        "multimodal": alpha_sweep(cli_p, img_p, img_y, grid=cfg.alpha_grid),
    }
    base_p, base_y, _, base_missing = collected["clinical-baseline"]
    if not base_missing:
        reports["clinical-baseline"] = evaluate_folds("clinical-baseline", base_p, base_y)
    write_report_json(reports, out / "report.json")
    write_sweep_csv(reports["multimodal"], out / "sweep.csv")
    print(format_table(reports))
    sweep = reports["multimodal"]
    print(f"best BA alpha {sweep.best_ba_alpha:.1f}, best MCC alpha {sweep.best_mcc_alpha:.1f}")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    path = Path(cfg.out) / "report.json"
    if not path.exists():
        raise DependencyError(f"no report at {path}; run 'naimfuse fuse' first")
    payload = json.loads(path.read_text(encoding="utf-8"))
    reports = {}
    for name, body in payload.items():
        means = [{m: entry[m] for m in ("tpr", "tnr", "ba", "mcc")} for entry in body["mean"]]
        reports[name] = MetricsReport(name, body["alphas"], [], [], means,
                                      body["best_ba_alpha"], body["best_mcc_alpha"])
    print(format_table(reports))
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "fuse": cmd_fuse, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (MissingFoldError, DependencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (InputError, DataLoadError, SchemaError, CheckpointError, FusionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
