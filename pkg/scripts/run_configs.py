"""Run every shipped config through the CLI, one output directory per file.

    python scripts/run_configs.py [--only spectrum_1up1down] [--root runs]
"""
import argparse
import sys
from pathlib import Path

from fewfermions.cli import main
from fewfermions.config import load_config

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def run(root: Path, only=None) -> int:
    worst = 0
    for path in sorted(CONFIG_DIR.glob("*.toml")):
        if only and path.stem not in only:
            continue
        cfg = load_config(path)
        out = root / path.stem
        print(f"{path.name}: {cfg.kind}, dim {cfg.sector.dim} -> {out}", flush=True)
        code = main([cfg.kind, "--config", str(path), "--out", str(out), "--threads", "1"])
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--root", default="runs")
    ap.add_argument("--only", nargs="*")
    args = ap.parse_args()
    sys.exit(run(Path(args.root), args.only))
