"""Shared-layer pretraining, distillation into a 2-layer student, then fine-tuning.

A small version of the full recipe that finishes in a few minutes on one core:
pretrain a tied 4-layer teacher, distill it into a tied 2-layer student, and
compare both on a held-out structural classification task.

Run: python3 demos/compress_and_finetune.py [--epochs 8] [--steps 400]
"""

import argparse
import time

from delicate.bench import benchmark
from delicate.chem.tokenizer import build_vocab
from delicate.corpus import gen_corpus
from delicate.distill import DistillConfig, distill_run
from delicate.evaluate import FinetuneSettings, finetune, toy_classification_task
from delicate.model import ModelConfig, param_count
from delicate.pretrain import pretrain_run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--molecules", type=int, default=1000)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    corpus = gen_corpus(args.seed, args.molecules)
    vocab = build_vocab(corpus)
    teacher_cfg = ModelConfig(vocab_size=len(vocab), hidden_size=64, num_layers=4, num_heads=4, ffn_size=256,
                              share_layers=True)
    student_cfg = teacher_cfg.replace(num_layers=2)
    print(f"corpus {len(corpus)} molecules, vocabulary {len(vocab)} tokens")
    print(f"teacher {param_count(teacher_cfg):,} unique parameters, student {param_count(student_cfg):,}")

    t0 = time.perf_counter()
    teacher, report = pretrain_run(teacher_cfg, corpus, args.epochs, args.seed, vocab)
    print(f"pretrained tied teacher: validation loss {report.val_total[0]:.3f} -> {report.val_total[-1]:.3f} "
          f"[{time.perf_counter() - t0:.0f}s]")

    t0 = time.perf_counter()
    result = distill_run((teacher, teacher_cfg), student_cfg, corpus, DistillConfig(), args.steps, args.seed, vocab)
    first, last = result.trace[0], result.trace[-1]
    print(f"distilled student: L {first.total:.3f} -> {last.total:.3f} "
          f"(mlm {last.l_mlm:.3f}, hidn {last.l_hidn:.4f}, logits {last.l_logits:.2e}) [{time.perf_counter() - t0:.0f}s]")

    task = toy_classification_task(400, 0, exclude=corpus)
    settings = FinetuneSettings(max_epochs=20)
    for name, model, cfg in (("teacher", teacher, teacher_cfg), ("student", result.params, student_cfg)):
        rep = finetune((model, cfg), task, 0, vocab, settings)
        speed = benchmark(model, cfg, windows=3, train=False).forward_tokens_per_s
        print(f"{name}: ROC-AUC {rep.mean:.3f} +/- {rep.sem:.3f}, forward {speed:,.0f} tok/s")


if __name__ == "__main__":
    main()
