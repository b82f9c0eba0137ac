"""Command-line front end: run experiments, compare modes, plot round logs.

Commands:
    fedmesh run --config cfg.json --out results/ [--set key=value ...]
    fedmesh compare --config cfg.json --modes fedselect_me,no_selection --out results/
    fedmesh plot --csv results/rounds.csv --out results/

The config file is JSON whose nested sections mirror SimulationConfig;
overrides address fields by dotted path (selection.capacity_k=10). The
FEDMESH_SEED environment variable, when set, overrides the config seed.
Exit codes: 0 success, 1 runtime failure, 2 invalid config or arguments.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .aggregation import CrossEdgeConfig
from .data import Dataset, generate_synthetic, ingest_csv
from .metrics import RoundRecord
from .orchestrator import (
    MODES,
    AdversaryAssignment,
    DataConfig,
    SecAggConfig,
    SimulationConfig,
    SimulationResult,
    TrainerConfig,
    derive_seed,
    run,
)
from .selection import SelectionConfig


class ConfigError(ValueError):
    """Invalid configuration; message names the offending field."""


_SECTIONS = {
    "data": DataConfig,
    "trainer": TrainerConfig,
    "selection": SelectionConfig,
    "secagg": SecAggConfig,
    "aggregation": CrossEdgeConfig,
}
_TOP_FIELDS = {
    "n_edges",
    "clients_per_edge",
    "rounds_max",
    "patience",
    "min_delta",
    "seed",
    "baseline_mode",
    "decision_threshold",
    "adversaries",
    "edge_failures",
    "security_overrides",
}


def load_config_dict(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return raw


def apply_overrides(raw: dict, assignments: Sequence[str]) -> dict:
    """Apply key=value pairs; keys are dotted paths into the config tree."""
    out = json.loads(json.dumps(raw))  # deep copy
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, _, value = item.partition("=")
        try:
            parsed: Any = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {part!r} is not a section")
        node[parts[-1]] = parsed
    return out


def _build_section(cls, raw: Any, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown field")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}")


def build_config(raw: dict) -> SimulationConfig:
    """Validate the raw dict and assemble a SimulationConfig; raises ConfigError."""
    unknown = set(raw) - _TOP_FIELDS - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown field")

    kwargs: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _build_section(cls, raw[name], name)
    for name in _TOP_FIELDS - {"adversaries", "edge_failures", "security_overrides"}:
        if name in raw:
            kwargs[name] = raw[name]
    if "adversaries" in raw:
        advs = []
        for i, item in enumerate(raw["adversaries"]):
            advs.append(_build_section(AdversaryAssignment, item, f"adversaries[{i}]"))
        kwargs["adversaries"] = tuple(advs)
    if "edge_failures" in raw:
        fails = []
        for i, item in enumerate(raw["edge_failures"]):
            if not (isinstance(item, (list, tuple)) and len(item) == 2):
                raise ConfigError(f"edge_failures[{i}]: expected [edge_id, round]")
            fails.append((int(item[0]), int(item[1])))
        kwargs["edge_failures"] = tuple(fails)
    if "security_overrides" in raw:
        try:
            kwargs["security_overrides"] = {int(k): float(v) for k, v in raw["security_overrides"].items()}
        except (TypeError, ValueError, AttributeError):
            raise ConfigError("security_overrides: expected {client_id: value} mapping")

    try:
        config = SimulationConfig(**kwargs)
        config.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    return config


def canonical_config(config: SimulationConfig) -> dict:
    return dataclasses.asdict(config)


def config_hash(config: SimulationConfig) -> str:
    blob = json.dumps(canonical_config(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def make_dataset(config: SimulationConfig) -> Dataset:
    d = config.data
    if d.csv_path is not None:
        if d.label_column is None:
            raise ConfigError("data.label_column: required when data.csv_path is set")
        dataset, dropped = ingest_csv(d.csv_path, d.label_column)
        if dropped:
            print(f"dropped {dropped} incomplete rows from {d.csv_path}", file=sys.stderr)
        return dataset
    return generate_synthetic(
        d.n_samples, d.n_features, d.class_imbalance, derive_seed(config.seed, "data"), d.label_noise
    )


# ---------------------------------------------------------------------------
# artifact writers
# ---------------------------------------------------------------------------

def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def rounds_csv_header(edge_ids: Sequence[int]) -> list[str]:
    header = [
        "round",
        "val_loss",
        "val_accuracy",
        "test_loss",
        "test_accuracy",
        "test_f1_macro",
        "test_f1_weighted",
        "test_auroc",
        "jfi",
    ]
    for e in edge_ids:
        header += [f"edge{e}_accuracy", f"edge{e}_loss"]
    return header


def write_rounds_csv(path: Path, records: Sequence[RoundRecord], edge_ids: Sequence[int]) -> None:
    lines = [",".join(rounds_csv_header(edge_ids))]
    for rec in records:
        val_loss, val_acc = rec.global_val
        test_loss, test_acc, f1m, f1w, auroc = rec.global_test
        cells = [
            str(rec.round),
            _fmt(val_loss),
            _fmt(val_acc),
            _fmt(test_loss),
            _fmt(test_acc),
            _fmt(f1m),
            _fmt(f1w),
            _fmt(auroc),
            _fmt(rec.jfi),
        ]
        for e in edge_ids:
            if e in rec.per_edge:
                acc, loss = rec.per_edge[e]
                cells += [_fmt(acc), _fmt(loss)]
            else:
                cells += ["", ""]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_events_jsonl(path: Path, events: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")


def _effective_edge_ids(config: SimulationConfig) -> list[int]:
    return [0] if config.baseline_mode == "fedavg_single" else list(range(config.n_edges))


def _run_to_dir(config: SimulationConfig, out: Path) -> SimulationResult:
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    dataset = make_dataset(config)
    result = run(config, dataset)
    edge_ids = _effective_edge_ids(config)
    write_rounds_csv(out / "rounds.csv", result.rounds, edge_ids)
    write_events_jsonl(out / "events.jsonl", result.events)
    manifest = {
        "config_hash": config_hash(config),
        "seed": config.seed,
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "artifacts": {"rounds": "rounds.csv", "events": "events.jsonl"},
        "code_version": __version__,
        "config": canonical_config(config),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return result


def cmd_run(config_path: str, output_dir: str, overrides: Sequence[str] = ()) -> int:
    try:
        raw = apply_overrides(load_config_dict(config_path), overrides)
        config = build_config(raw)
        if "FEDMESH_SEED" in os.environ:
            config = dataclasses.replace(config, seed=int(os.environ["FEDMESH_SEED"]))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        result = _run_to_dir(config, Path(output_dir))
    except Exception as exc:  # noqa: BLE001 - simulation failures map to exit 1
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    last = result.rounds[-1]
    print(
        f"completed {len(result.rounds)} rounds"
        f"{' (early stop)' if result.stopped_early else ''}; "
        f"final test accuracy {last.global_test[1]:.4f}, jfi {last.jfi:.6f}"
    )
    return 0


_COMPARE_COLUMNS = [
    "mode",
    "rounds",
    "val_loss",
    "val_accuracy",
    "test_loss",
    "test_accuracy",
    "test_f1_macro",
    "test_f1_weighted",
    "test_auroc",
    "jfi",
    "delta_test_accuracy_vs_first",
]


def cmd_compare(config_path: str, modes: Sequence[str], output_dir: str, overrides: Sequence[str] = ()) -> int:
    try:
        if len(modes) < 2:
            raise ConfigError("compare: need at least 2 modes")
        for mode in modes:
            if mode not in MODES:
                raise ConfigError(f"compare: unknown mode {mode!r} (choose from {MODES})")
        raw = apply_overrides(load_config_dict(config_path), overrides)
        base = build_config(raw)
        if "FEDMESH_SEED" in os.environ:
            base = dataclasses.replace(base, seed=int(os.environ["FEDMESH_SEED"]))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out = Path(output_dir)
    try:
        rows = []
        first_acc: float | None = None
        for mode in modes:
            config = dataclasses.replace(base, baseline_mode=mode)
            config.validate()
            result = _run_to_dir(config, out / mode)
            last = result.rounds[-1]
            test_loss, test_acc, f1m, f1w, auroc = last.global_test
            if first_acc is None:
                first_acc = test_acc
            rows.append(
                [
                    mode,
                    str(len(result.rounds)),
                    _fmt(last.global_val[0]),
                    _fmt(last.global_val[1]),
                    _fmt(test_loss),
                    _fmt(test_acc),
                    _fmt(f1m),
                    _fmt(f1w),
                    _fmt(auroc),
                    _fmt(last.jfi),
                    _fmt(test_acc - first_acc),
                ]
            )
        out.mkdir(parents=True, exist_ok=True)
        lines = [",".join(_COMPARE_COLUMNS)] + [",".join(r) for r in rows]
        (out / "compare.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    except Exception as exc:  # noqa: BLE001
        print(f"compare failed: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {out / 'compare.csv'} for modes: {', '.join(modes)}")
    return 0


# ---------------------------------------------------------------------------
# plotting (self-contained SVG, no plotting dependency)
# ---------------------------------------------------------------------------

_PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
]

_PANEL_W = 760
_PANEL_H = 300
_MARGIN_L = 62
_MARGIN_R = 150
_MARGIN_T = 42
_MARGIN_B = 40


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _panel(title: str, series: dict[str, list[tuple[float, float | None]]], y_offset: int) -> str:
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts if y is not None]
    x_min, x_max = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y_min, y_max = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x_max == x_min:
        x_min, x_max = x_min - 0.5, x_max + 0.5
    if y_max == y_min:
        pad = max(abs(y_min) * 0.1, 0.5)
        y_min, y_max = y_min - pad, y_max + pad

    plot_w = _PANEL_W - _MARGIN_L - _MARGIN_R
    plot_h = _PANEL_H - _MARGIN_T - _MARGIN_B

    def px(x: float) -> float:
        return _MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w

    def py(y: float) -> float:
        return y_offset + _MARGIN_T + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h

    parts = [f'<text x="{_MARGIN_L}" y="{y_offset + 22}" font-size="15" font-weight="bold">{_esc(title)}</text>']
    axis_y0, axis_y1 = y_offset + _MARGIN_T, y_offset + _MARGIN_T + plot_h
    parts.append(
        f'<rect x="{_MARGIN_L}" y="{axis_y0}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#444" stroke-width="1"/>'
    )
    for i in range(5):
        y_val = y_min + (y_max - y_min) * i / 4
        yy = py(y_val)
        parts.append(f'<line x1="{_MARGIN_L}" y1="{yy:.1f}" x2="{_MARGIN_L + plot_w}" y2="{yy:.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{_MARGIN_L - 6}" y="{yy + 4:.1f}" font-size="11" text-anchor="end">{y_val:.3g}</text>')
    tick_step = max(1, math.ceil((x_max - x_min) / 8))  # at most ~9 integer ticks
    for xv in range(math.ceil(x_min), math.floor(x_max) + 1, tick_step):
        parts.append(
            f'<text x="{px(xv):.1f}" y="{axis_y1 + 16}" font-size="11" text-anchor="middle">{xv}</text>'
        )
    for idx, (name, pts) in enumerate(series.items()):
        color = _PALETTE[idx % len(_PALETTE)]
        visible = [(px(x), py(y)) for x, y in pts if y is not None]
        if len(visible) > 1:
            coords = " ".join(f"{x:.1f},{y:.1f}" for x, y in visible)
            parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        for x, y in visible:
            parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="2.4" fill="{color}"/>')
        ly = axis_y0 + 14 * (idx + 1)
        parts.append(f'<rect x="{_MARGIN_L + plot_w + 8}" y="{ly - 8}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{_MARGIN_L + plot_w + 22}" y="{ly}" font-size="11">{_esc(name)}</text>')
    return "\n".join(parts)


def _write_svg(path: Path, panels: list[tuple[str, dict[str, list[tuple[float, float | None]]]]]) -> None:
    height = _PANEL_H * len(panels)
    body = "\n".join(_panel(title, series, _PANEL_H * i) for i, (title, series) in enumerate(panels))
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_PANEL_W} {height}" '
        f'width="{_PANEL_W}" height="{height}" font-family="sans-serif">\n'
        f'<rect width="{_PANEL_W}" height="{height}" fill="white"/>\n{body}\n</svg>\n'
    )
    path.write_text(svg, encoding="utf-8")


def _read_rounds_csv(path: str) -> tuple[list[dict[str, float | None]], list[int]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "round" not in reader.fieldnames:
            raise ValueError(f"{path}: not a rounds.csv (missing 'round' column)")
        edge_ids = sorted(
            int(c[len("edge") : -len("_accuracy")])
            for c in reader.fieldnames
            if c.startswith("edge") and c.endswith("_accuracy")
        )
        rows: list[dict[str, float | None]] = []
        for record in reader:
            parsed: dict[str, float | None] = {}
            for key, value in record.items():
                parsed[key] = float(value) if value not in (None, "") else None
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return rows, edge_ids


def cmd_plot(rounds_csv: str, output_dir: str) -> int:
    try:
        rows, edge_ids = _read_rounds_csv(rounds_csv)
    except (OSError, ValueError) as exc:
        print(f"plot error: {exc}", file=sys.stderr)
        return 2
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    def series_of(column: str) -> list[tuple[float, float | None]]:
        return [(row["round"] or 0.0, row.get(column)) for row in rows]

    _write_svg(
        out / "edge_metrics.svg",
        [
            ("Edge test accuracy per round", {f"edge {e}": series_of(f"edge{e}_accuracy") for e in edge_ids}),
            ("Edge test loss per round", {f"edge {e}": series_of(f"edge{e}_loss") for e in edge_ids}),
        ],
    )
    _write_svg(out / "jfi.svg", [("Fairness (JFI) per round", {"jfi": series_of("jfi")})])
    _write_svg(
        out / "global_metrics.svg",
        [
            ("Global loss per round", {"val loss": series_of("val_loss"), "test loss": series_of("test_loss")}),
            (
                "Global accuracy per round",
                {"val accuracy": series_of("val_accuracy"), "test accuracy": series_of("test_accuracy")},
            ),
        ],
    )
    _write_svg(
        out / "test_quality.svg",
        [
            (
                "Global test F1 and AUROC per round",
                {
                    "f1 macro": series_of("test_f1_macro"),
                    "f1 weighted": series_of("test_f1_weighted"),
                    "auroc": series_of("test_auroc"),
                },
            )
        ],
    )
    print(f"wrote 4 charts to {out}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fedmesh", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    p_cmp = sub.add_parser("compare", help="run several modes on the same data and seed")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--modes", required=True, help="comma-separated list of modes")
    p_cmp.add_argument("--out", required=True)
    p_cmp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    p_plot = sub.add_parser("plot", help="render SVG charts from rounds.csv")
    p_plot.add_argument("--csv", required=True)
    p_plot.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.overrides)
    if args.command == "compare":
        return cmd_compare(args.config, [m.strip() for m in args.modes.split(",") if m.strip()], args.out, args.overrides)
    return cmd_plot(args.csv, args.out)


if __name__ == "__main__":
    sys.exit(main())
