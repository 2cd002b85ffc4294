"""Command-line entry point: ``delicate <subcommand> [options] [--section.key value ...]``.

Exit codes: 0 success, 1 check or fold failure, 2 configuration error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .bench import benchmark
from .checkpoint import CheckpointError, load_checkpoint
from .chem import SmilesSyntaxError, Vocab, build_vocab
from .config import RunConfig, RunConfigError, load_config
from .corpus import CorpusCapacityError, gen_corpus, read_corpus, write_corpus
from .distill import DistillConfig, DistillConfigError, distill_run
from .evaluate import (
    FinetuneSettings,
    TaskDataset,
    TaskError,
    embed,
    embedding_scorer,
    finetune,
    tanimoto_scorer,
    vs_rank,
)
from .model import ConfigError, ModelConfig, param_count
from .pretrain import DataError, pretrain_run, tokenize_corpus

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("delicate")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _split_overrides(argv: list[str]) -> tuple[list[str], list[tuple[str, str]]]:
    """Pull ``--section.key value`` (or ``--section.key=value``) pairs out of argv."""
    rest, overrides = [], []
    i = 0
    while i < len(argv):
        arg = argv[i]
        if arg.startswith("--") and "." in arg.split("=", 1)[0]:
            key = arg[2:]
            if "=" in key:
                key, value = key.split("=", 1)
            else:
                if i + 1 >= len(argv):
                    raise CliError(f"override {arg} needs a value", EXIT_CONFIG)
                i += 1
                value = argv[i]
            overrides.append((key, value))
        else:
            rest.append(arg)
        i += 1
    return rest, overrides


# ----------------------------------------------------------------------------
# run directory


class RunDir:
    """``config.snapshot``, ``checkpoints/``, ``metrics/``, ``logs/`` under one root."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics"

    def create(self, cfg: RunConfig, command: str) -> None:
        for sub in ("checkpoints", "metrics", "logs"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        (self.root / "config.snapshot").write_text(cfg.dumps(), encoding="utf-8")
        handler = logging.FileHandler(self.root / "logs" / f"{command}.log", mode="w", encoding="utf-8")
        handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
        logging.getLogger().addHandler(handler)


# ----------------------------------------------------------------------------
# helpers


def _dtype(cfg: RunConfig):
    if cfg.run.dtype not in ("float32", "float64"):
        raise RunConfigError(f"run.dtype must be float32 or float64, got {cfg.run.dtype!r}")
    return np.dtype(cfg.run.dtype)


def _path(cfg: RunConfig, key: str, flag_value: str | None, required: bool = True) -> Path | None:
    value = flag_value or getattr(cfg.paths, key)
    if not value:
        if required:
            raise RunConfigError(f"no {key} given (use --{key} or paths.{key})")
        return None
    p = Path(value)
    if not p.exists():
        raise RunConfigError(f"{key} path {p} does not exist")
    return p


def _model_config(cfg: RunConfig, vocab_size: int) -> ModelConfig:
    m = cfg.model
    return ModelConfig(vocab_size=vocab_size, hidden_size=m.hidden_size, num_layers=m.num_layers,
                       num_heads=m.num_heads, ffn_size=m.ffn_size, max_seq_len=m.max_seq_len,
                       share_layers=m.share_layers, dropout_p=m.dropout_p)


def _read_smiles_column(path: Path, column: str = "smiles") -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise DataError(f"{path}: expected a '{column}' column")
        rows = list(reader)
    return [r[column].strip() for r in rows], rows


def _check_corpus(corpus: list[str], vocab: Vocab, max_len: int, batch_size: int) -> None:
    """Fail on untokenizable molecules or a too-small corpus before anything is written."""
    if len(corpus) < batch_size:
        raise DataError(f"corpus of {len(corpus)} molecules is smaller than one batch ({batch_size})")
    for i, smi in enumerate(corpus):
        try:
            tokenize_corpus([smi], vocab, max_len)
        except (SmilesSyntaxError, ValueError) as exc:
            raise DataError(f"corpus molecule {i} ({smi!r}): {exc}") from exc


def _read_molecules(path: Path) -> list[str]:
    if path.suffix == ".csv":
        return _read_smiles_column(path)[0]
    return read_corpus(path)


# ----------------------------------------------------------------------------
# subcommands


def cmd_corpus(args, cfg: RunConfig) -> int:
    smiles = gen_corpus(cfg.run.seed, args.n)
    write_corpus(args.out, smiles, header=f"gen_corpus(seed={cfg.run.seed}, n={args.n})")
    print(f"wrote {len(smiles)} molecules to {args.out}")
    return EXIT_OK


def cmd_vocab_build(args, cfg: RunConfig) -> int:
    corpus = _read_molecules(_path(cfg, "corpus", args.corpus))
    vocab = build_vocab(corpus)
    vocab.save(args.out)
    print(f"wrote {len(vocab)} tokens to {args.out}")
    return EXIT_OK


def cmd_pretrain(args, cfg: RunConfig) -> int:
    corpus = _read_molecules(_path(cfg, "corpus", args.corpus))
    vocab = Vocab.load(_path(cfg, "vocab", args.vocab))
    model_cfg = _model_config(cfg, len(vocab))
    dtype = _dtype(cfg)
    _check_corpus(corpus, vocab, model_cfg.max_seq_len, cfg.pretrain.batch_size)
    run = RunDir(args.run_dir)
    run.create(cfg, "pretrain")
    vocab.save(run.root / "vocab.txt")
    p = cfg.pretrain
    _, report = pretrain_run(model_cfg, corpus, p.epochs, cfg.run.seed, vocab, run_dir=run.root,
                             batch_size=p.batch_size, lr=p.lr, warmup_frac=p.warmup_frac, dtype=dtype,
                             max_steps=p.max_steps or None)
    print(f"pretrained {report.steps} steps; final train total {report.total[-1]:.4f}, "
          f"best epoch {report.best_epoch}; checkpoints in {run.checkpoints}")
    return EXIT_OK


def cmd_distill(args, cfg: RunConfig) -> int:
    if args.no_mlm:
        cfg.distill.use_mlm = False
    if args.no_hidden:
        cfg.distill.use_hidn = False
    if args.no_logits:
        cfg.distill.use_logits = False
    teacher_path = _path(cfg, "teacher", args.teacher)
    corpus = _read_molecules(_path(cfg, "corpus", args.corpus))
    vocab = Vocab.load(_path(cfg, "vocab", args.vocab))
    t_params, t_cfg = load_checkpoint(teacher_path)
    d = cfg.distill
    student_cfg = t_cfg.replace(num_layers=d.student_layers, share_layers=d.student_share_layers)
    dcfg = DistillConfig(temperature=d.temperature, use_mlm=d.use_mlm, use_hidn=d.use_hidn,
                         use_logits=d.use_logits, logits_positions=d.logits_positions, lr=d.lr,
                         batch_size=d.batch_size, warmup_frac=d.warmup_frac)
    dcfg.resolved_map(t_cfg.num_layers, student_cfg.num_layers)
    if not (d.use_mlm or d.use_hidn or d.use_logits):
        raise DistillConfigError("all distillation terms are disabled")
    if len(vocab) != t_cfg.vocab_size:
        raise DataError(f"vocabulary has {len(vocab)} tokens but the teacher expects {t_cfg.vocab_size}")
    _check_corpus(corpus, vocab, min(t_cfg.max_seq_len, student_cfg.max_seq_len), d.batch_size)
    run = RunDir(args.run_dir)
    run.create(cfg, "distill")
    vocab.save(run.root / "vocab.txt")
    result = distill_run((t_params, t_cfg), student_cfg, corpus, dcfg, d.steps, cfg.run.seed, vocab,
                         run_dir=run.root, dtype=t_params.dtype)
    last = result.trace[-1]
    print(f"distilled {len(result.trace)} steps; final L {last.total:.5f} "
          f"(mlm {last.l_mlm:.4f}, hidn {last.l_hidn:.5f}, logits {last.l_logits:.3g}); "
          f"student at {run.checkpoints / 'student.ckpt'}")
    return EXIT_OK


def cmd_finetune(args, cfg: RunConfig) -> int:
    ckpt = _path(cfg, "checkpoint", args.checkpoint)
    vocab = Vocab.load(_path(cfg, "vocab", args.vocab))
    task = TaskDataset.from_csv(_path(cfg, "task", args.task), kind=cfg.eval.task_kind)
    params, model_cfg = load_checkpoint(ckpt)
    if len(vocab) != model_cfg.vocab_size:
        raise DataError(f"vocabulary has {len(vocab)} tokens but the checkpoint expects {model_cfg.vocab_size}")
    e = cfg.eval
    settings = FinetuneSettings(lr=e.lr, batch_size=e.batch_size, patience=e.patience,
                                max_epochs=e.max_epochs, n_folds=e.n_folds)
    run = RunDir(args.run_dir)
    run.create(cfg, "finetune")
    report = finetune((params, model_cfg), task, cfg.run.seed, vocab, settings)
    report.write_csv(run.metrics / "finetune.csv")
    print(f"{task.name}: {report.metric} {report.mean:.4f} +/- {report.sem:.4f} (folds {', '.join(f'{v:.4f}' for v in report.folds)})")
    if not np.isfinite(report.folds).all():
        print("error: a fold produced no finite metric", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_screen(args, cfg: RunConfig) -> int:
    queries = _read_smiles_column(_path(cfg, "queries", args.queries))[0]
    library, rows = _read_smiles_column(_path(cfg, "library", args.library))
    try:
        active = np.array([float(r["active"]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise DataError("library.csv needs a numeric 'active' column") from exc
    if args.scorer == "embedding":
        ckpt = _path(cfg, "checkpoint", args.checkpoint)
        vocab = Vocab.load(_path(cfg, "vocab", args.vocab))
        scorer = embedding_scorer(load_checkpoint(ckpt), vocab)
    else:
        scorer = tanimoto_scorer(radius=args.radius, width=args.width)
    auc = vs_rank(queries, library, active, scorer)
    if args.run_dir:
        run = RunDir(args.run_dir)
        run.create(cfg, "screen")
        (run.metrics / "screen.csv").write_text(f"scorer,roc_auc\n{args.scorer},{auc!r}\n", encoding="utf-8")
    print(f"{args.scorer} screening ROC-AUC {auc:.4f} ({int(active.sum())} actives / {len(library)})")
    return EXIT_OK


def cmd_embed(args, cfg: RunConfig) -> int:
    ckpt = _path(cfg, "checkpoint", args.checkpoint)
    vocab = Vocab.load(_path(cfg, "vocab", args.vocab))
    smiles = _read_molecules(Path(args.input))
    matrix = embed(ckpt, smiles, vocab)
    np.save(args.out, matrix)
    print(f"wrote {matrix.shape[0]} x {matrix.shape[1]} embeddings to {args.out}")
    return EXIT_OK


def cmd_params(args, cfg: RunConfig) -> int:
    vocab_size = args.vocab_size
    base = _model_config(cfg, vocab_size)
    untied = base.replace(share_layers=False)
    tied = base.replace(share_layers=True)
    print(f"config: hidden {base.hidden_size}, ffn {base.ffn_size}, heads {base.num_heads}, "
          f"layers {base.num_layers}, vocab {vocab_size}, max_seq {base.max_seq_len}")
    print(f"untied-{base.num_layers}: {param_count(untied)}")
    print(f"tied: {param_count(tied)}")
    return EXIT_OK


def cmd_bench(args, cfg: RunConfig) -> int:
    models = []
    for path in args.checkpoint or []:
        params, model_cfg = load_checkpoint(Path(path))
        models.append((params, model_cfg, Path(path).name))
    if not models:
        from .model import init_params

        model_cfg = _model_config(cfg, args.vocab_size)
        models.append((init_params(model_cfg, cfg.run.seed, dtype=_dtype(cfg)), model_cfg, None))
    for params, model_cfg, name in models:
        report = benchmark(params, model_cfg, batch_size=args.batch_size, seq_len=args.seq_len,
                           windows=args.windows, name=name)
        print(report.line())
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .gradsuite import TOLERANCE, run_suite

    results = run_suite(seed=cfg.run.seed)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name} {r.error:.3e}")
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks below {TOLERANCE:g}")
    return EXIT_FAIL if failed else EXIT_OK


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delicate", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="INI run configuration")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corpus", help="generate the toy SMILES corpus")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("vocab-build", help="build a token vocabulary from a corpus")
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", help="MaskedLM + PhysChemPred pretraining")
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--run-dir", required=True)

    p = sub.add_parser("distill", help="general distillation into a shallower student")
    p.add_argument("--teacher")
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--no-mlm", action="store_true")
    p.add_argument("--no-hidden", action="store_true")
    p.add_argument("--no-logits", action="store_true")

    p = sub.add_parser("finetune", help="3-fold fine-tuning on a smiles,label CSV")
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--task")
    p.add_argument("--run-dir", required=True)

    p = sub.add_parser("screen", help="similarity-based virtual screening")
    p.add_argument("--queries")
    p.add_argument("--library")
    p.add_argument("--scorer", choices=("ecfp", "embedding"), default="ecfp")
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--width", type=int, default=2048)
    p.add_argument("--run-dir")

    p = sub.add_parser("embed", help="pooled embeddings for a list of molecules")
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("params", help="exact unique-parameter counts, tied and untied")
    p.add_argument("--vocab-size", type=int, default=42)

    p = sub.add_parser("bench", help="forward and train-step throughput")
    p.add_argument("--checkpoint", action="append")
    p.add_argument("--vocab-size", type=int, default=42)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seq-len", type=int, default=64)
    p.add_argument("--windows", type=int, default=5)

    sub.add_parser("gradcheck", help="finite-difference gradient checks (float64)")
    return parser


COMMANDS = {
    "corpus": cmd_corpus,
    "vocab-build": cmd_vocab_build,
    "pretrain": cmd_pretrain,
    "distill": cmd_distill,
    "finetune": cmd_finetune,
    "screen": cmd_screen,
    "embed": cmd_embed,
    "params": cmd_params,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
}

_CONFIG_ERRORS = (RunConfigError, ConfigError, DistillConfigError)
_DATA_ERRORS = (DataError, TaskError, SmilesSyntaxError, CheckpointError, CorpusCapacityError,
                FileNotFoundError, ValueError)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rest, overrides = _split_overrides(argv)
        args = build_parser().parse_args(rest)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (T.NonFiniteError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
