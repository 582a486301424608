"""Closed-form parameter counts and the reconciliation against the published table."""
from __future__ import annotations

from dataclasses import dataclass

from .config import ModelConfig, cnn3d_ts, convlstm_ts, timesf_ts
from .zoo import _spatial_after_pool

# sizes listed in the published table (h for the conv families, D_h for attention)
TABLE_SIZES = (2, 4, 6, 8, 12, 16, 24, 32, 48)

PUBLISHED_TABLE = {
    "CNN3D": (1573, 3573, 6005, 8869, 15893, 24645, 47333, 76933, 156869),
    "ConvLSTM": (1497, 4429, 8801, 14613, 30557, 52261, 112949, 196677, 433253),
    "TimeSformer-8": (20451, 71557, 153413, 265989, 583301, 1023493, 2272517, 4013061, 8968709),
    "TimeSformer-1": (877, 2229, 4061, 6373, 12437, 20421, 42149, 71557, 153413),
}

# Diving48 presets: stated size and the tolerance we hold ourselves to
STATED_D48 = {
    "cnn3d-d48-4x128": (10.6e6, 0.01),
    "convlstm-d48-4x128": (14.3e6, 0.03),
    "timesf-d48": (85e6, 0.05),
}

_TABLE_CONFIGS = {
    "CNN3D": cnn3d_ts,
    "ConvLSTM": convlstm_ts,
    "TimeSformer-8": lambda n: timesf_ts(8, n),
    "TimeSformer-1": lambda n: timesf_ts(1, n),
}


def count_params(cfg: ModelConfig) -> int:
    """Trainable parameter count, computed from the architecture without building it."""
    k = cfg.num_classes
    if cfg.family == "ConvLSTM":
        total, c_in = 0, cfg.input.channels
        for h, ks in zip(cfg.hidden, cfg.kernel_sizes):
            # two gate convolutions, each with its own bias, then the norm affine
            total += 4 * h * ks * ks * (c_in + h) + 8 * h + 2 * h
            c_in = h
        _, hh, ww = _spatial_after_pool(cfg)
        feat = c_in if cfg.head == "gap" else c_in * hh * ww
        return total + feat * k + k
    if cfg.family == "CNN3D":
        total, c_in = 0, cfg.input.channels
        for h, ks in zip(cfg.hidden, cfg.kernel_sizes):
            total += h * c_in * ks ** 3 + h + 2 * h
            c_in = h
        tt, hh, ww = _spatial_after_pool(cfg)
        return total + c_in * tt * hh * ww * k + k
    d, inner, p = cfg.model_dim, cfg.inner_dim, cfg.patch_size
    attn = 2 * d + 3 * inner * d + inner * d + d  # norm, qkv (no bias), out proj
    ff = 2 * d + 8 * d * d + 8 * d + 4 * d * d + d
    layer = 2 * attn + ff
    embed = cfg.input.channels * p * p * d + d
    return embed + d + cfg.depth * layer + 2 * d + d * k + k


def ts_formula(family: str, n: int, heads: int = 1) -> int:
    """The fitted quadratics for the Temporal Shape presets (3 blocks, 5 classes, 64x64 grey)."""
    if family == "ConvLSTM":
        return 180 * n * n + 386 * n + 5
    if family == "CNN3D":
        return 54 * n * n + 676 * n + 5
    d = heads * n
    return 60 * d * d + 316 * d + 5


@dataclass(frozen=True)
class AuditRow:
    model: str
    size: int
    published: int
    computed: int
    formula: int

    @property
    def exact(self) -> bool:
        return self.published == self.computed

    @property
    def delta(self) -> int:
        return self.computed - self.published


@dataclass
class AuditReport:
    rows: list[AuditRow]
    d48: list[tuple[str, int, float, float]]  # name, computed, stated, relative error

    def column(self, model: str) -> list[AuditRow]:
        return [r for r in self.rows if r.model == model]

    def exact_count(self, model: str) -> tuple[int, int]:
        col = self.column(model)
        return sum(r.exact for r in col), len(col)

    @property
    def deviations(self) -> list[AuditRow]:
        return [r for r in self.rows if not r.exact]

    def format(self) -> str:
        lines = [f"{'model':<14} {'size':>4} {'table':>9} {'computed':>9} {'formula':>9}  match"]
        for r in self.rows:
            mark = "exact" if r.exact else f"DIFF {r.delta:+d}"
            lines.append(f"{r.model:<14} {r.size:>4} {r.published:>9} {r.computed:>9} {r.formula:>9}  {mark}")
        lines.append("")
        for model in PUBLISHED_TABLE:
            ok, n = self.exact_count(model)
            lines.append(f"{model}: {ok}/{n} exact")
        ok = sum(r.exact for r in self.rows)
        lines.append(f"total: {ok}/{len(self.rows)} exact")
        for r in self.deviations:
            lines.append(f"deviation: {r.model} size {r.size}: table lists {r.published}, architecture gives "
                         f"{r.computed} (every other row fits the same quadratic; treated as a table error)")
        lines.append("")
        for name, got, stated, rel in self.d48:
            lines.append(f"{name:<20} {got:>11,d}  stated {stated / 1e6:.1f}M  rel. diff {rel:+.2%}")
        return "\n".join(lines)


def audit_against_table() -> AuditReport:
    from .config import preset

    rows = []
    for model, values in PUBLISHED_TABLE.items():
        build = _TABLE_CONFIGS[model]
        heads = 8 if model == "TimeSformer-8" else 1
        family = model.split("-")[0]
        for n, listed in zip(TABLE_SIZES, values):
            rows.append(AuditRow(model, n, listed, count_params(build(n)), ts_formula(family, n, heads)))
    d48 = []
    for name, (stated, _tol) in STATED_D48.items():
        got = count_params(preset(name))
        d48.append((name, got, stated, got / stated - 1.0))
    return AuditReport(rows, d48)
