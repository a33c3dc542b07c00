"""Plot CLI outputs (matplotlib, Agg backend).

    python scripts/plot_results.py forward OUT_DIR
    python scripts/plot_results.py loss RUN_DIR [RUN_DIR ...]
    python scripts/plot_results.py kernels RUN_DIR
    python scripts/plot_results.py prediction RUN_DIR

Each call writes a PNG next to the first input directory.
"""
import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from viscokernel.io import load_json, read_csv  # noqa: E402


def columns(path):
    header, data = read_csv(path)
    return {h: data[:, i] for i, h in enumerate(header)}


def forward(dirs):
    tip, en = columns(dirs[0] / "tip.csv"), columns(dirs[0] / "energy.csv")
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
    for c in ("y1", "y2", "y3"):
        a.plot(tip["t"], tip[c], label=c)
    a.set_xlabel("t")
    a.set_ylabel("tip displacement")
    a.legend()
    for c in ("kinetic", "elastic", "total", "stored"):
        b.plot(en["t"], en[c], label=c)
    b.set_xlabel("t")
    b.set_ylabel("energy")
    b.legend()
    return fig, "forward.png"


def loss(dirs):
    fig, ax = plt.subplots(figsize=(6, 4))
    for d in dirs:
        lc = columns(d / "loss.csv")
        noise = load_json(d / "result.json").get("metadata", {}).get("noise") or {}
        ax.semilogy(lc["iteration"], lc["loss"], marker="o", ms=3, label=f"noise {noise.get('level', '?')}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("J")
    ax.legend()
    return fig, "loss.png"


def kernels(dirs):
    kc = columns(dirs[0] / "kernels.csv")
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, v in kc.items():
        if name != "t":
            ax.loglog(kc["t"], v, "--" if name.startswith("truth") else "-", label=name)
    ax.set_xlabel("t")
    ax.set_ylabel("k(t)")
    ax.legend()
    return fig, "kernels.png"


def prediction(dirs):
    pc = columns(dirs[0] / "prediction.csv")
    t_meas = load_json(dirs[0] / "result.json")["metadata"]["t_meas"]
    names = sorted({n.split("_")[0] for n in pc if n != "t"})
    fig, axes = plt.subplots(1, len(names), figsize=(5 * len(names), 4), squeeze=False)
    for ax, exc in zip(axes[0], names):
        for kind, style in (("pred", "-"), ("truth", "--")):
            cols = [pc.get(f"{exc}_{kind}_y{c}") for c in (1, 2, 3)]
            if cols[0] is None:
                continue
            norm = sum(c ** 2 for c in cols) ** 0.5
            ax.plot(pc["t"], norm, style, label=kind)
        ax.axvline(t_meas, color="grey", lw=0.8)
        ax.set_title(exc)
        ax.set_xlabel("t")
        ax.set_ylabel("|tip displacement|")
        ax.legend()
    return fig, "prediction.png"


PLOTS = {"forward": forward, "loss": loss, "kernels": kernels, "prediction": prediction}


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("kind", choices=sorted(PLOTS))
    p.add_argument("dirs", nargs="+", type=Path)
    args = p.parse_args()
    fig, name = PLOTS[args.kind](args.dirs)
    fig.tight_layout()
    target = args.dirs[0] / name
    fig.savefig(target, dpi=120)
    print(target)


if __name__ == "__main__":
    main()
