"""Regenerate the bundled desk-scale data under data/.

    python scripts/make_synthetic_data.py [--out data] [--bytes 1000000] [--seed 0]

Writes data/raw/shard_*.txt (raw French-like text with noise and
duplicates) and data/flue/<task>/*.tsv (mini task files).
"""

import argparse
import shutil
from pathlib import Path

from mlmkit.synthetic import write_flue_data, write_raw_shards


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data")
    ap.add_argument("--bytes", type=int, default=1_000_000)
    ap.add_argument("--shards", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    for sub in ("raw", "flue"):
        shutil.rmtree(out / sub, ignore_errors=True)
    paths = write_raw_shards(out / "raw", args.bytes, args.shards, args.seed)
    write_flue_data(out / "flue", args.seed + 1)
    total = sum(p.stat().st_size for p in paths)
    print(f"wrote {len(paths)} raw shards ({total} bytes) and FLUE mini tasks under {out}")


if __name__ == "__main__":
    main()
