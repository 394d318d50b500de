"""Command-line front end: ``rfla assign | analyze | sweep``.

Configuration is one JSON document; every section is optional and unknown
keys are rejected. Outputs are written only after all inputs validate and
all results are computed, each file through a temporary name and an atomic
rename.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .analysis import (
    ASSIGNER_NAMES,
    IntervalHistogram,
    SweepRow,
    TrialConfig,
    imbalance,
    make_assigner,
    positives_per_interval,
    sweep_anchor_scale,
    sweep_beta,
    sweep_k,
)
from .baselines import (
    AnchorSet,
    AnchorSpec,
    MaxIouConfig,
    ScaleRanges,
    center_sampling_assign,
    gaussian_anchor_assign,
    generate_anchors,
    maxiou_assign,
    receptive_anchor_assign,
)
from .core import AssignmentResult, BBox
from .distances import MetricKind
from .hla import HlaConfig, hla_assign
from .receptive_field import (
    ConvLayerSpec,
    ConvStack,
    ExplicitRadius,
    PyramidLevelSpec,
    PyramidSpec,
    build_grid,
    resnet50_fpn_pyramid,
)

LABEL_COLUMNS = ("flat_id", "level", "px", "py", "er", "label", "gt_index", "stage", "score")
HISTOGRAM_COLUMNS = ("assigner", "interval_lo", "interval_hi", "n_gts", "mean_pos", "std_pos")
SWEEP_COLUMNS = ("param", "value", "mean_pos_overall", "min_interval_mean", "max_interval_mean", "imbalance")
SWEEP_PARAMS = ("k", "beta", "anchor_scale")
DEFAULT_ANALYZE = ("maxiou", "center", "rfla")


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    """Integers verbatim, floats with 17 significant digits (round-trip exact)."""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


# ---------------------------------------------------------------- config


def _check_keys(section: str, obj: Any, allowed: set[str]) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{section}: expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(unknown)}")
    return obj


def _num(section: str, key: str, v: Any) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{section}.{key}: expected a number, got {v!r}")
    return v


def _int(section: str, key: str, v: Any) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{section}.{key}: expected an integer, got {v!r}")
    return v


@dataclass
class RunConfig:
    pyramid: PyramidSpec
    assigner: str = "rfla"
    assigners: tuple[str, ...] = DEFAULT_ANALYZE
    hla: HlaConfig = field(default_factory=HlaConfig)
    anchor: AnchorSpec = field(default_factory=AnchorSpec)
    maxiou: MaxIouConfig = field(default_factory=MaxIouConfig)
    ranges: ScaleRanges | None = None
    trial: TrialConfig = field(default_factory=TrialConfig)
    workers: int = 1


def _parse_pyramid(obj: Any, trial: TrialConfig) -> PyramidSpec:
    obj = _check_keys("pyramid", obj, {"image_w", "image_h", "offset", "preset", "strides", "levels"})
    image_w = _num("pyramid", "image_w", obj.get("image_w", trial.image_w))
    image_h = _num("pyramid", "image_h", obj.get("image_h", trial.image_h))
    offset = _num("pyramid", "offset", obj.get("offset", 0.5))
    if "levels" in obj:
        if "preset" in obj or "strides" in obj:
            raise ConfigError("pyramid: give either 'levels' or 'preset'/'strides', not both")
        levels = []
        for i, lv in enumerate(obj["levels"]):
            sec = f"pyramid.levels[{i}]"
            lv = _check_keys(sec, lv, {"stride", "er", "convs"})
            if ("er" in lv) == ("convs" in lv):
                raise ConfigError(f"{sec}: give exactly one of 'er' or 'convs'")
            stride = _num(sec, "stride", lv.get("stride"))
            if "er" in lv:
                src = ExplicitRadius(_num(sec, "er", lv["er"]))
            else:
                layers = []
                for pair in lv["convs"]:
                    if not (isinstance(pair, list) and len(pair) == 2):
                        raise ConfigError(f"{sec}.convs: each layer is [kernel, stride], got {pair!r}")
                    layers.append(ConvLayerSpec(_int(sec, "convs", pair[0]), _int(sec, "convs", pair[1])))
                src = ConvStack(tuple(layers))
            levels.append(PyramidLevelSpec(stride, src))
        return PyramidSpec(image_w, image_h, tuple(levels), offset)
    preset = obj.get("preset", "resnet50_fpn")
    if preset != "resnet50_fpn":
        raise ConfigError(f"pyramid.preset: unknown preset {preset!r}")
    strides = obj.get("strides", [4, 8, 16, 32, 64])
    strides = tuple(_int("pyramid", "strides", s) for s in strides)
    spec = resnet50_fpn_pyramid(image_w, image_h, strides)
    return PyramidSpec(spec.image_w, spec.image_h, spec.levels, offset)


def parse_config(doc: Any) -> RunConfig:
    top = _check_keys(
        "config", doc, {"pyramid", "assigner", "assigners", "rfla", "anchors", "maxiou", "center", "trial", "workers"}
    )
    try:
        t = _check_keys(
            "trial",
            top.get("trial", {}),
            {"seed", "n_trials", "scale_lo", "scale_hi", "n_intervals", "aspect", "jitter", "image_w", "image_h", "gts_per_trial"},
        )
        for key in ("seed", "n_trials", "n_intervals", "gts_per_trial"):
            if key in t:
                _int("trial", key, t[key])
        for key in ("scale_lo", "scale_hi", "image_w", "image_h"):
            if key in t:
                _num("trial", key, t[key])
        trial = TrialConfig(**t)

        pyramid = _parse_pyramid(top.get("pyramid", {}), trial)

        assigner = top.get("assigner", "rfla")
        if assigner not in ASSIGNER_NAMES:
            raise ConfigError(f"assigner: unknown {assigner!r}; expected one of {', '.join(ASSIGNER_NAMES)}")
        assigners = top.get("assigners", list(DEFAULT_ANALYZE))
        if not isinstance(assigners, list) or not assigners:
            raise ConfigError("assigners: expected a non-empty list")
        for a in assigners:
            if a not in ASSIGNER_NAMES:
                raise ConfigError(f"assigners: unknown {a!r}; expected one of {', '.join(ASSIGNER_NAMES)}")
        if len(set(assigners)) != len(assigners):
            raise ConfigError("assigners: duplicate entries")

        r = _check_keys("rfla", top.get("rfla", {}), {"k", "beta", "metric"})
        hla = HlaConfig(
            _int("rfla", "k", r.get("k", 3)), _num("rfla", "beta", r.get("beta", 0.9)), r.get("metric", "kld")
        )

        a = _check_keys("anchors", top.get("anchors", {}), {"base_scale", "ratios"})
        anchor = AnchorSpec(
            _num("anchors", "base_scale", a.get("base_scale", 8.0)),
            tuple(_num("anchors", "ratios", x) for x in a.get("ratios", [0.5, 1.0, 2.0])),
        )

        m = _check_keys("maxiou", top.get("maxiou", {}), {"pos_thr", "neg_thr", "low_quality_match"})
        lq = m.get("low_quality_match", False)
        if not isinstance(lq, bool):
            raise ConfigError(f"maxiou.low_quality_match: expected true/false, got {lq!r}")
        maxiou = MaxIouConfig(_num("maxiou", "pos_thr", m.get("pos_thr", 0.5)), _num("maxiou", "neg_thr", m.get("neg_thr", 0.5)), lq)

        c = _check_keys("center", top.get("center", {}), {"ranges"})
        ranges = None
        if "ranges" in c:
            parsed = []
            for pair in c["ranges"]:
                if not (isinstance(pair, list) and len(pair) == 2):
                    raise ConfigError(f"center.ranges: each entry is [lo, hi], got {pair!r}")
                hi = math.inf if pair[1] is None else _num("center", "ranges", pair[1])
                parsed.append((_num("center", "ranges", pair[0]), hi))
            ranges = ScaleRanges(tuple(parsed))
            if len(ranges.ranges) != len(pyramid.levels):
                raise ConfigError(f"center.ranges: need {len(pyramid.levels)} ranges, one per level")

        workers = _int("config", "workers", top.get("workers", 1))
        if workers < 1:
            raise ConfigError("workers must be >= 1")
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(pyramid, assigner, tuple(assigners), hla, anchor, maxiou, ranges, trial, workers)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc)


def load_gts(path: str) -> list[BBox]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read gts file {path}: {exc.strerror}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["cx", "cy", "w", "h"]:
        raise ConfigError(f"{path}: header must be 'cx,cy,w,h', got {header!r}")
    gts = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 4:
            raise ConfigError(f"{path}: row {lineno}: expected 4 fields, got {len(row)}")
        try:
            vals = [float(cell) for cell in row]
            gts.append(BBox(*vals))
        except ValueError as exc:
            raise ConfigError(f"{path}: row {lineno}: {exc}") from exc
    return gts


# ---------------------------------------------------------------- output


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([r if isinstance(r, str) else fmt(r) for r in row])
    return buf.getvalue()


def write_outputs(out_dir: str, files: dict[str, str]) -> None:
    """Write every file via a temp name, then rename; nothing is left behind on failure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, out / name))
        for tmp, final in staged:
            os.replace(tmp, final)
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise


def label_rows(cfg: RunConfig, gts: list[BBox]):
    """Run the configured assigner on one image and build the label table rows."""
    points = build_grid(cfg.pyramid)
    name = cfg.assigner
    if name in ("maxiou", "gaussian_anchor"):
        anchors = generate_anchors(cfg.pyramid, cfg.anchor)
        if name == "maxiou":
            res = maxiou_assign(anchors, gts, cfg.maxiou)
        else:
            res = gaussian_anchor_assign(anchors, gts, cfg.hla)
        # anchors report the center and radius of the point they are tiled on
        owner = anchors.point_id
        ids = range(len(anchors))
    else:
        if name == "rfla":
            res = hla_assign(points, gts, cfg.hla)
        elif name == "center":
            res = center_sampling_assign(points, gts, cfg.ranges or ScaleRanges.doubling(len(cfg.pyramid.levels)))
        else:
            res = receptive_anchor_assign(points, gts, cfg.maxiou)
        owner = range(len(points))
        ids = points.flat_id.tolist()
    rows = []
    for row_id, i, p in zip(ids, range(len(res)), owner):
        g = int(res.gt_index[i])
        positive = g >= 0
        rows.append(
            (
                int(row_id),
                int(points.level[p]),
                float(points.px[p]),
                float(points.py[p]),
                float(points.er[p]),
                "positive" if positive else "background",
                g,
                int(res.stage[i]),
                float(res.score[i]),
            )
        )
    return rows, res


def summary_doc(cfg: RunConfig, gts: list[BBox], res: AssignmentResult) -> dict:
    counts = res.pos_counts
    best = res.max_scores
    s2 = res.stage_counts(2)
    return {
        "assigner": cfg.assigner,
        "metric": cfg.hla.metric.value,
        "num_priors": len(res),
        "gts": [
            {
                "gt_index": j,
                "cx": g.cx,
                "cy": g.cy,
                "w": g.w,
                "h": g.h,
                "positives": int(counts[j]),
                "stage2_positives": int(s2[j]),
                "max_score": float(best[j]),
            }
            for j, g in enumerate(gts)
        ],
    }


def histogram_rows(results: dict[str, IntervalHistogram]):
    for name, hist in results.items():
        for iv in hist.intervals:
            yield (name, iv.scale_lo, iv.scale_hi, iv.n_gts, iv.mean_positives, iv.stddev_positives)


_PALETTE = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2")


def histogram_svg(results: dict[str, IntervalHistogram]) -> str:
    """Grouped bar chart, one group per scale interval, one bar per assigner."""
    names = list(results)
    intervals = next(iter(results.values())).intervals
    n_iv = len(intervals)
    left, right, top, bottom = 60, 20, 40, 70
    group_w = 56
    width = left + right + group_w * n_iv
    height = 360
    plot_h = height - top - bottom
    peak = max((m for h in results.values() for m in h.populated_means()), default=0.0)
    peak = peak if peak > 0 else 1.0
    bar_w = (group_w - 8) / len(names)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="9">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left}" y="16" font-size="12">Mean positives per gt by scale interval</text>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{width - right}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<text x="{left - 4}" y="{top + 3}" text-anchor="end">{peak:.2f}</text>',
        f'<text x="{left - 4}" y="{top + plot_h + 3}" text-anchor="end">0</text>',
    ]
    for b, iv in enumerate(intervals):
        gx = left + b * group_w + 4
        for a, name in enumerate(names):
            m = results[name].intervals[b].mean_positives
            m = 0.0 if math.isnan(m) else m
            h = plot_h * m / peak
            x = gx + a * bar_w
            y = top + plot_h - h
            out.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" height="{h:.2f}" '
                f'fill="{_PALETTE[a % len(_PALETTE)]}"><title>{name} {iv.scale_lo:g}-{iv.scale_hi:g}: {m:.4f}</title></rect>'
            )
            out.append(
                f'<text x="{x + bar_w / 2:.2f}" y="{y - 2:.2f}" text-anchor="middle" font-size="6">{m:.2f}</text>'
            )
        out.append(
            f'<text x="{gx + (group_w - 8) / 2:.2f}" y="{top + plot_h + 14}" text-anchor="middle">'
            f"{iv.scale_lo:g}-{iv.scale_hi:g}</text>"
        )
    for a, name in enumerate(names):
        lx = left + a * 150
        ly = height - 20
        out.append(f'<rect x="{lx}" y="{ly - 8}" width="10" height="10" fill="{_PALETTE[a % len(_PALETTE)]}"/>')
        out.append(
            f'<text x="{lx + 14}" y="{ly}" font-size="10">{name} (imbalance {imbalance(results[name]):.4g})</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- commands


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "metric", None):
        cfg.hla = HlaConfig(cfg.hla.k, cfg.hla.beta, args.metric)
    if getattr(args, "seed", None) is not None:
        t = cfg.trial
        cfg.trial = TrialConfig(
            args.seed, t.n_trials, t.scale_lo, t.scale_hi, t.n_intervals, t.aspect, t.jitter, t.image_w, t.image_h, t.gts_per_trial
        )
    return cfg


def cmd_assign(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    gts = load_gts(args.gts)
    rows, res = label_rows(cfg, gts)
    write_outputs(
        args.out,
        {
            "labels.csv": _csv_text(LABEL_COLUMNS, rows),
            "summary.json": json.dumps(summary_doc(cfg, gts, res), indent=2, sort_keys=True) + "\n",
        },
    )
    return 0


def run_analysis(cfg: RunConfig) -> dict[str, IntervalHistogram]:
    results = {}
    for name in cfg.assigners:
        assigner = make_assigner(name, cfg.pyramid, cfg.hla, cfg.anchor, cfg.maxiou, cfg.ranges)
        results[name] = positives_per_interval(assigner, cfg.trial, cfg.workers)
    return results


def cmd_analyze(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    results = run_analysis(cfg)
    write_outputs(
        args.out,
        {
            "histogram.csv": _csv_text(HISTOGRAM_COLUMNS, histogram_rows(results)),
            "histogram.svg": histogram_svg(results),
        },
    )
    for name, hist in results.items():
        print(f"{name}: mean positives {hist.overall_mean:.4f}, imbalance {imbalance(hist):.6g}")
    return 0


def run_sweep(cfg: RunConfig, param: str, grid: list[float]) -> list[SweepRow]:
    if param == "k":
        return sweep_k([int(v) for v in grid], cfg.pyramid, cfg.trial, cfg.hla, cfg.workers)
    if param == "beta":
        return sweep_beta(grid, cfg.pyramid, cfg.trial, cfg.hla, cfg.workers)
    return sweep_anchor_scale(grid, cfg.pyramid, cfg.trial, cfg.anchor, cfg.maxiou, cfg.workers)


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    rows = run_sweep(cfg, args.param, args.grid)
    table = [
        (r.param, r.value, r.mean_pos_overall, r.min_interval_mean, r.max_interval_mean, r.imbalance) for r in rows
    ]
    write_outputs(args.out, {"sweep.csv": _csv_text(SWEEP_COLUMNS, table)})
    for r in rows:
        print(f"{r.param}={fmt(r.value)}: mean positives {r.mean_pos_overall:.4f}, stage-2 share {r.stage2_share:.4f}")
    return 0


def _seed(text: str) -> int:
    try:
        v = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed out of u64 range: {text}")
    return v


def _grid(text: str) -> list[float]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            v = float(tok)
        except ValueError:
            raise argparse.ArgumentTypeError(f"non-numeric grid value {tok!r}") from None
        if not math.isfinite(v):
            raise argparse.ArgumentTypeError(f"grid values must be finite, got {tok!r}")
        out.append(int(v) if v.is_integer() and "." not in tok and "e" not in tok.lower() else v)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfla", description="Receptive-field label assignment toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assign", help="assign one image's gts and write per-prior labels")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--gts", required=True, help="CSV with header cx,cy,w,h")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--metric", choices=[m.value for m in MetricKind])
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("analyze", help="positives-per-scale-interval study")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--metric", choices=[m.value for m in MetricKind])
    p.add_argument("--seed", type=_seed)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="sweep k, beta or anchor scale")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--grid", required=True, type=_grid, help="comma-separated values")
    p.add_argument("--metric", choices=[m.value for m in MetricKind])
    p.add_argument("--seed", type=_seed)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "sweep" and args.param == "k":
        bad = [v for v in args.grid if not (isinstance(v, int) and v >= 1)]
        if bad:
            parser.error(f"--param k needs positive integers, got {bad}")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"rfla: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
