"""Plotted values of the 2Dot-source drop plot and helpers to read lines back from an SVG."""
import re
import xml.etree.ElementTree as ET

from tslab.harness.train import RunRecord

DOMAINS = ("val", "5Dot", "MNIST", "MNIST-bg")
# percent accuracy at best val, 5Dot, MNIST, MNIST-bg
PLOTTED = {
    "CNN3D": (89.4, 73.4, 38.6, 20.0),
    "ConvLSTM": (75.3, 44.4, 41.5, 19.4),
    "TimeSf-8": (75.6, 47.5, 36.7, 18.5),
    "TimeSf-1": (54.0, 32.2, 26.8, 18.9),
}


def fixture_record(label, values, seed=0):
    if label.startswith("TimeSf"):
        heads = int(label.split("-")[1])
        cfg = {"heads": heads, "head_dim": 4, "family": "TimeSformer"}
        family = "TimeSformer"
    else:
        cfg = {"hidden": [4, 4, 4], "family": label}
        family = label
    rec = RunRecord(label.lower(), family, seed, "2Dot", cfg, {"seed": seed}, best_val_acc=values[0] / 100)
    for d, v in zip(DOMAINS, values):
        rec.evals[d] = v / 100
        rec.rr[d] = v / values[0]
    return rec


def fixture_runs():
    return [fixture_record(k, v) for k, v in PLOTTED.items()]


def svg_series(svg: bytes, npoints: int) -> list[list[tuple[float, float]]]:
    """Vertex lists of every plotted polyline with exactly ``npoints`` vertices, in drawing order."""
    ns = {"s": "http://www.w3.org/2000/svg"}
    root = ET.fromstring(svg)
    out = []
    for g in root.iter("{http://www.w3.org/2000/svg}g"):
        if not g.get("id", "").startswith("line2d"):
            continue
        path = g.find("s:path", ns)
        if path is None:
            continue
        nums = [float(v) for v in re.findall(r"-?\d+(?:\.\d+)?", path.get("d", ""))]
        pts = list(zip(nums[::2], nums[1::2]))
        if len(pts) == npoints:
            out.append(pts)
    return out
