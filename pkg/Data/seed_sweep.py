"""
Multi-seed structure-induction sweep

Trains the desk-synthetic preset once per seed, parses the held-out gold
sentences and compares UF1 with the RANDOM baseline on the same sentences.

Usage:
    python seed_sweep.py --seeds 1 2 3 --config desk-synthetic
"""

import argparse
import os
import sys

import pandas as pd

# ================= CONFIGURATION =================
CURRENT_DIR = os.path.dirname(os.path.abspath(__file__))  # This is Project/Data/
PROJECT_ROOT = os.path.dirname(CURRENT_DIR)               # This is Project/
sys.path.insert(0, os.path.join(PROJECT_ROOT, "Product"))
sys.path.insert(0, PROJECT_ROOT)

from config import Config
from pipeline import ExperimentPipeline
from run_config import RunConfig

SWEEP_DIR = os.path.join(PROJECT_ROOT, "Results", "seed_sweep")


def run_seed(config: str, seed: int, overrides, output_dir: str) -> dict:
    """Train one seed, then score its trees and the baselines on the gold set"""
    run = RunConfig(
        command="train",
        config_path=config,
        overrides=list(overrides) + [f"name=seed{seed}"],
        seed=seed,
        output_dir=output_dir,
    )
    pipeline = ExperimentPipeline(run)
    trained = pipeline.train()
    report = pipeline.eval_parse(checkpoint=trained["best_checkpoint"], seed=seed)
    return {
        "seed": seed,
        "valid_metric": trained["metric_value"],
        "metric_name": trained["metric_name"],
        "sentences": report["sentences"],
        "f1": report["f1"],
        "random_f1": report["baselines"]["random"],
        "lbranch_f1": report["baselines"]["lbranch"],
        "rbranch_f1": report["baselines"]["rbranch"],
        "upper_bound_f1": report["baselines"]["upper_bound"],
        "checkpoint": trained["best_checkpoint"],
    }


def main():
    parser = argparse.ArgumentParser(description="Train and parse over several seeds")
    parser.add_argument("--config", default="desk-synthetic", help="Preset name or config file")
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3], help="Seeds to run")
    parser.add_argument("--override", action="append", default=[], help="Dot-path override (repeatable)")
    parser.add_argument("--output-dir", default=SWEEP_DIR, help="Where runs and the summary go")
    args = parser.parse_args()

    Config.setup_logging()
    os.makedirs(args.output_dir, exist_ok=True)

    rows = []
    for index, seed in enumerate(args.seeds, start=1):
        print(f"\n[{index}/{len(args.seeds)}] 🌱 Seed {seed}")
        rows.append(run_seed(args.config, seed, args.override, args.output_dir))

    df = pd.DataFrame(rows)
    df["margin"] = 100.0 * (df["f1"] - df["random_f1"])
    csv_path = os.path.join(args.output_dir, "sweep_summary.csv")
    df.to_csv(csv_path, index=False)
    print(f"📄 Saved: {csv_path}")

    print("\n" + "=" * 60)
    print("STRUCTURE INDUCTION")
    print("=" * 60)
    print(f"Seeds:        {len(df)}")
    print(f"UF1:          Mean={100 * df['f1'].mean():.1f}, Std={100 * df['f1'].std():.1f}")
    print(f"RANDOM UF1:   Mean={100 * df['random_f1'].mean():.1f}")
    print(f"LBRANCH UF1:  Mean={100 * df['lbranch_f1'].mean():.1f}")
    print(f"RBRANCH UF1:  Mean={100 * df['rbranch_f1'].mean():.1f}")
    print(f"UPPER BOUND:  Mean={100 * df['upper_bound_f1'].mean():.1f}")
    print(f"Margin:       {df['margin'].mean():.1f} points over RANDOM")
    print("=" * 60)


if __name__ == "__main__":
    main()
