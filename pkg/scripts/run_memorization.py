"""Memorization experiment: can the toy model fit 100 fixed sentences?

    python scripts/run_memorization.py [--steps 300] [--lr 1e-2] [--out runs/memorize]

Prints the initial loss next to ln V and the final/initial ratio, and
writes the loss curve (loss.csv) and checkpoints to --out when given.
"""

import argparse
import math
import random

import numpy as np

from mlmkit.bpe import BOS, EOS, encode_sequence, learn_bpe
from mlmkit.masking import MaskingConfig
from mlmkit.pretrain import AdamConfig, train_mlm
from mlmkit.synthetic import sentence
from mlmkit.transformer import ModelConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sentences", type=int, default=100)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--lr", type=float, default=1e-2)
    ap.add_argument("--merges", type=int, default=200)
    ap.add_argument("--seed", type=int, default=8)
    ap.add_argument("--out")
    args = ap.parse_args()

    rng = random.Random(args.seed)
    sentences = [sentence(rng).lower().replace("'", "' ").replace(".", " .").split() for _ in range(args.sentences)]
    table, vocab = learn_bpe(sentences, args.merges)
    seqs = [[BOS, *encode_sequence(s, vocab, table).ids, EOS] for s in sentences]
    model = ModelConfig(L=2, H=64, A=4, vocab_size=len(vocab), max_positions=64, dropout=0.0)
    adam = AdamConfig(peak_lr=args.lr, warmup_steps=args.steps // 10, total_steps=args.steps,
                      micro_batch=25, accumulation=4, checkpoint_every=max(1, args.steps // 3))
    res = train_mlm(seqs, model, adam, MaskingConfig(max_len=64), seed=0, out_dir=args.out,
                    on_step=lambda step, lr, loss: step % 50 == 0 and print(f"step {step:4d} loss {loss:.4f}"))
    losses = [loss for _, _, loss in res.curve]
    final = float(np.mean(losses[-10:]))
    print(f"V = {len(vocab)}, ln V = {math.log(len(vocab)):.4f}")
    print(f"initial loss {losses[0]:.4f}, final (mean of last 10) {final:.4f}, ratio {final / losses[0]:.3f}")


if __name__ == "__main__":
    main()
