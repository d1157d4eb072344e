"""Run every config in configs/ and collect the CSVs in one directory.

    python scripts/run_all.py [--outdir results] [--only poisson]
"""
import argparse
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--outdir", default="results")
    ap.add_argument("--only", default="", help="substring filter on config names")
    args = ap.parse_args()
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    failed = []
    for cfg in sorted((ROOT / "configs").glob("*.cfg")):
        if args.only not in cfg.stem:
            continue
        study = next(line.split("=", 1)[1].strip() for line in cfg.read_text().splitlines()
                     if line.strip().startswith("study"))
        target = out / f"{cfg.stem}.csv"
        print(f"== {cfg.stem}", flush=True)
        cmd = [sys.executable, "-m", "intrkpm", "study", study, "--config", str(cfg),
               "--out", str(target)]
        if subprocess.run(cmd).returncode:
            failed.append(cfg.stem)
    if failed:
        print("failed:", ", ".join(failed))
        sys.exit(1)


if __name__ == "__main__":
    main()
