"""
Aggregate training logs and plot validation curves and distance bars

Usage:
    python aggregate_plot.py --runs-dir ../prpn_runs
    python aggregate_plot.py --distances distances.tsv
"""

import argparse
import glob
import json
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from scipy import interpolate

# ================= CONFIGURATION =================
CURRENT_DIR = os.path.dirname(os.path.abspath(__file__))
PROJECT_ROOT = os.path.dirname(CURRENT_DIR)

RUNS_DIR = os.path.join(PROJECT_ROOT, "prpn_runs")
PLOTS_DIR = os.path.join(PROJECT_ROOT, "Results", "plots")


def load_metric_logs(runs_dir):
    """Every metrics.jsonl under runs_dir as one DataFrame with a 'run' column"""
    frames = []
    for path in sorted(glob.glob(os.path.join(runs_dir, "**", "metrics.jsonl"), recursive=True)):
        with open(path, "r", encoding="utf-8") as f:
            records = [json.loads(line) for line in f if line.strip()]
        if not records:
            print(f"  ⚠ Empty: {path}")
            continue
        frame = pd.DataFrame(records)
        frame["run"] = os.path.basename(os.path.dirname(path))
        frames.append(frame)
        print(f"  ✓ Loaded: {path}")
    if not frames:
        return pd.DataFrame()
    return pd.concat(frames, ignore_index=True)


def validation_curves(df):
    """run -> (epochs, values) of the per-epoch validation metric"""
    valid = df[(df["split"] == "valid") & ~df["metric_name"].str.startswith("best_")]
    curves = {}
    for run, group in valid.groupby("run"):
        group = group.sort_values("epoch")
        curves[run] = (group["epoch"].to_numpy(dtype=float), group["value"].to_numpy(dtype=float))
    return curves


def interpolate_to_common_epochs(curves, num_points=100):
    usable = {run: c for run, c in curves.items() if len(c[0]) >= 2}
    if not usable:
        return None, None
    last_epoch = np.median([c[0][-1] for c in usable.values()])
    common = np.linspace(1, last_epoch, num_points)
    values = []
    for epochs, metric in usable.values():
        f = interpolate.interp1d(
            epochs, metric,
            kind="linear",
            bounds_error=False,
            fill_value=(metric[0], metric[-1]),
        )
        values.append(f(common))
    return common, np.array(values)


def plot_validation(curves, metric_name, plots_dir):
    common, values = interpolate_to_common_epochs(curves)
    fig, ax = plt.subplots(figsize=(12, 7))
    for run, (epochs, metric) in curves.items():
        ax.plot(epochs, metric, alpha=0.35, linewidth=1, marker="o", markersize=3, label=run)
    if common is not None and len(values) > 1:
        mean = values.mean(axis=0)
        ci = 1.96 * values.std(axis=0) / np.sqrt(len(values))
        ax.fill_between(common, mean - ci, mean + ci, alpha=0.3, color="#3498db", label="95% CI")
        ax.plot(common, mean, linewidth=3, color="#2c3e50", label=f"Mean (n={len(values)})")
    ax.set_xlabel("Epoch", fontsize=12)
    ax.set_ylabel(f"Validation {metric_name.upper()}", fontsize=12)
    ax.set_title("Validation curves", fontsize=14)
    ax.grid(True, linestyle="--", alpha=0.7)
    ax.legend(loc="upper right", fontsize=9)

    plt.tight_layout()
    plot_path = os.path.join(plots_dir, "validation_curves.png")
    plt.savefig(plot_path, dpi=150)
    plt.close()
    print(f"📊 Saved: {plot_path}")


def generate_summary_table(df, plots_dir):
    rows = []
    for run, group in df.groupby("run"):
        best = group[group["metric_name"].str.startswith("best_")]
        if best.empty:
            continue
        last = best.sort_values("epoch").iloc[-1]
        rows.append({
            "run": run,
            "metric_name": last["metric_name"][len("best_"):],
            "best_value": last["value"],
            "epochs": int(group["epoch"].max()),
            "steps": int(group["step"].max()),
            "final_lr": group.sort_values("step").iloc[-1]["lr"],
        })
    summary = pd.DataFrame(rows)
    csv_path = os.path.join(plots_dir, "run_summary.csv")
    summary.to_csv(csv_path, index=False)
    print(f"📄 Saved: {csv_path}")
    return summary


def read_distance_tsv(path):
    """Sentences of (token, distance) from inspect-distances output"""
    sentences, current = [], []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                if current:
                    sentences.append(current)
                current = []
                continue
            token, value = line.rsplit("\t", 1)
            current.append((token, float(value)))
    if current:
        sentences.append(current)
    return sentences


def plot_distances(sentence, plots_dir, name="distances.png"):
    """Bars between adjacent tokens: bar i sits between token i-1 and token i"""
    tokens = [token for token, _ in sentence]
    values = [d for _, d in sentence][1:]
    fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(tokens)), 4))
    ax.bar(np.arange(1, len(tokens)) - 0.5, values, width=0.6, color="#3498db")
    ax.set_xticks(np.arange(len(tokens)))
    ax.set_xticklabels([repr(t)[1:-1] if t.isspace() else t for t in tokens])
    ax.set_xlim(-0.5, len(tokens) - 0.5)
    ax.set_ylabel("Syntactic distance", fontsize=12)
    ax.grid(True, axis="y", linestyle="--", alpha=0.7)

    plt.tight_layout()
    plot_path = os.path.join(plots_dir, name)
    plt.savefig(plot_path, dpi=150)
    plt.close()
    print(f"📊 Saved: {plot_path}")


def main():
    parser = argparse.ArgumentParser(description="Aggregate metric logs and plot results")
    parser.add_argument("--runs-dir", default=RUNS_DIR, help="Directory searched for metrics.jsonl files")
    parser.add_argument("--distances", help="inspect-distances output to plot")
    parser.add_argument("--plots-dir", default=PLOTS_DIR, help="Output directory")
    args = parser.parse_args()

    os.makedirs(args.plots_dir, exist_ok=True)

    if args.distances:
        for index, sentence in enumerate(read_distance_tsv(args.distances)):
            plot_distances(sentence, args.plots_dir, name=f"distances_{index:03d}.png")
        return

    print(f"📂 Loading metric logs from {args.runs_dir}...")
    df = load_metric_logs(args.runs_dir)
    if df.empty:
        print("\n❌ No metric logs found!")
        return

    curves = validation_curves(df)
    valid = df[(df["split"] == "valid") & ~df["metric_name"].str.startswith("best_")]
    metric_name = valid["metric_name"].iloc[0] if not valid.empty else "metric"

    print("\n🎨 Generating plots...")
    plot_validation(curves, metric_name, args.plots_dir)
    summary = generate_summary_table(df, args.plots_dir)

    print("\n" + "=" * 60)
    print("SUMMARY")
    print("=" * 60)
    print(summary.to_string(index=False))
    print(f"\n✅ Done! Results saved to: {args.plots_dir}")


if __name__ == "__main__":
    main()
