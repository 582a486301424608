"""Aggregate tables (CSV) and figure-style plots (SVG) from a results file.

Output bytes depend only on the records: matplotlib's SVG id salt and the
date metadata are pinned.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

from .harness.evaluate import VAL_KEY, aggregate
from .harness.train import RunRecord

DOMAIN_ORDER = (VAL_KEY, "2Dot", "5Dot", "MNIST", "MNIST-bg")
FAMILY_COLORS = {"CNN3D": "tab:blue", "ConvLSTM": "tab:orange", "TimeSf-8": "tab:green", "TimeSf-1": "tab:red"}


def read_results(path) -> list[RunRecord]:
    runs = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if line.strip():
            try:
                runs.append(RunRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, TypeError) as e:
                raise ValueError(f"{path}:{n}: bad result record ({e})") from None
    return runs


def _ordered_domains(domains) -> list[str]:
    known = [d for d in DOMAIN_ORDER if d in domains]
    return known + sorted(d for d in domains if d not in DOMAIN_ORDER)


def aggregate_csv(runs: Sequence[RunRecord]) -> str:
    rep = aggregate(runs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family", "domain", "n", "acc_mean", "acc_std", "rr_mean", "rr_std"])
    for fam in rep.families():
        for d in _ordered_domains({dd for f, dd in rep.accuracy if f == fam}):
            a, r = rep.accuracy[(fam, d)], rep.rr.get((fam, d))
            w.writerow([fam, d, a.n, f"{a.mean:.6f}", f"{a.std:.6f}",
                        f"{r.mean:.6f}" if r else "", f"{r.std:.6f}" if r else ""])
    return buf.getvalue()


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "tslab"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _svg(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def drop_plot(runs: Sequence[RunRecord], title: str = "") -> bytes:
    """Accuracy from best val across target domains, one line per family, shaded +-std."""
    plt = _figure()
    rep = aggregate(runs)
    domains = _ordered_domains(rep.domains())
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for fam in rep.families():
        ds = [d for d in domains if (fam, d) in rep.accuracy]
        xs = [domains.index(d) for d in ds]
        m = [100 * rep.accuracy[(fam, d)].mean for d in ds]
        s = [100 * rep.accuracy[(fam, d)].std for d in ds]
        c = FAMILY_COLORS.get(fam)
        ax.plot(xs, m, marker="o", label=fam, color=c)
        ax.fill_between(xs, [a - b for a, b in zip(m, s)], [a + b for a, b in zip(m, s)], alpha=0.2, color=c)
    ax.set_xticks(range(len(domains)))
    ax.set_xticklabels(["best val" if d == VAL_KEY else d for d in domains])
    ax.set_ylabel("Accuracy (%)")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    data = _svg(fig)
    plt.close(fig)
    return data


def rr_size_plot(runs: Sequence[RunRecord], domain: str) -> bytes:
    plt = _figure()
    rep = aggregate(runs)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for fam in rep.families():
        pts = sorted((size, c) for (f, d, size), c in rep.by_size.items() if f == fam and d == domain)
        if not pts:
            continue
        xs = [p[0] for p in pts]
        m = [p[1].mean for p in pts]
        s = [p[1].std for p in pts]
        c = FAMILY_COLORS.get(fam)
        ax.plot(xs, m, marker="o", label=fam, color=c)
        ax.fill_between(xs, [a - b for a, b in zip(m, s)], [a + b for a, b in zip(m, s)], alpha=0.2, color=c)
    ax.set_xlabel("hidden units per layer / head dim")
    ax.set_ylabel("Robustness ratio (rr.)")
    ax.set_title(domain)
    ax.legend()
    fig.tight_layout()
    data = _svg(fig)
    plt.close(fig)
    return data


def family_ordering(runs: Sequence[RunRecord], domain: str) -> list[str]:
    """Families sorted by mean accuracy on ``domain``, best first (the vertical line order in a drop plot)."""
    rep = aggregate(runs)
    fams = [f for f in rep.families() if (f, domain) in rep.accuracy]
    return sorted(fams, key=lambda f: -rep.accuracy[(f, domain)].mean)


def write_report(runs: Sequence[RunRecord], out_dir) -> dict[str, Path]:
    if not runs:
        raise ValueError("no result records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    sources = sorted({r.source_domain for r in runs})
    for src in sources:
        sub = [r for r in runs if r.source_domain == src]
        p = out / f"drop_{src}.svg"
        p.write_bytes(drop_plot(sub, f"source: {src}"))
        files[p.name] = p
        targets = sorted({d for r in sub for d in r.rr if d != VAL_KEY})
        for d in targets:
            p = out / f"rr_{src}_to_{d}.svg"
            p.write_bytes(rr_size_plot(sub, d))
            files[p.name] = p
    p = out / "aggregate.csv"
    p.write_text(aggregate_csv(runs))
    files[p.name] = p
    p = out / "provenance.json"
    p.write_text(json.dumps({"runs": sorted(r.run_id for r in runs), "files": sorted(files)}, indent=1))
    files[p.name] = p
    return files
