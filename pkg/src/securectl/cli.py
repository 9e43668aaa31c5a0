"""Command-line harness.

Subcommands:
  bench-sensors     reconstruction time vs. sensor count, CSV out
  bench-subspaces   reconstruction time vs. subspace count, CSV out
  closedloop        closed-loop simulation of one filter method, CSV out
  ssr               one-shot reconstruction from a scenario (+ data) file

Exit codes: 0 on success, 2 when the data admits no plausible state, the
attack model is violated, the safety program is infeasible, or an input file
is malformed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys as _sys

import numpy as np

from .errors import (
    AssumptionViolatedError,
    EmptySubspaceError,
    FilterStepError,
    NoPlausibleStateError,
    ScenarioFormatError,
)
from .harness import bench_sensors, bench_subspaces, run_closed_loop
from .plant import IoWindow, stack
from .scenario import fixture_scenario, load_scenario
from .ssr import brute_force_ssr, preprocess, ssr_combine, ssr_majority, threshold_vote
from .eigenspace import eigen_decompose
from .plant import project_data

CSV_SCHEMAS = {
    "bench-sensors": ("v1", ["p", "method", "mean_s", "std_s", "combos"]),
    "bench-subspaces": ("v1", ["r", "method", "mean_s", "std_s", "bound_combos"]),
    "closedloop": ("v1", ["step", "method", "recon_s", "cost", "h_min", "cardinality"]),
    "ssr": ("v1", ["method", "index"]),
}

_EXIT_FAILURE = (
    NoPlausibleStateError,
    EmptySubspaceError,
    AssumptionViolatedError,
    FilterStepError,
    ScenarioFormatError,
)

_PALETTE = ("#1f6fb2", "#d1495b", "#3a9d5d", "#8a5db0", "#c98a1e", "#4a4a4a")


def _parse_range(text: str) -> list[int]:
    """'8', '8,10,12', or '8:16' (inclusive)."""
    text = text.strip()
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(tok) for tok in text.split(",") if tok]


def _write_csv(path, command: str, rows: list[dict], extra_cols: list[str] | None = None):
    version, header = CSV_SCHEMAS[command]
    header = header + (extra_cols or [])
    out = open(path, "w", newline="") if path != "-" else _sys.stdout
    try:
        out.write(f"# schema: {command} {version}\n")
        writer = csv.DictWriter(out, fieldnames=header)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    finally:
        if path != "-":
            out.close()


def _fmt(value: float) -> str:
    return repr(float(value))


def _svg_plot(panels: list[dict], path: str, width: int = 760, panel_height: int = 300):
    """Minimal multi-panel polyline SVG; no plotting dependency."""
    pad_l, pad_r, pad_t, pad_b = 64, 16, 28, 40
    total_h = panel_height * len(panels)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total_h}" '
        f'font-family="monospace" font-size="11">'
    ]
    for pi, panel in enumerate(panels):
        oy = pi * panel_height
        iw, ih = width - pad_l - pad_r, panel_height - pad_t - pad_b
        xs_all = [x for _, xs, _ in panel["series"] for x in xs]
        ys_all = [y for _, _, ys in panel["series"] for y in ys]
        if panel.get("logy"):
            ys_all = [np.log10(max(y, 1e-12)) for y in ys_all]
        x_lo, x_hi = min(xs_all), max(xs_all)
        y_lo, y_hi = min(ys_all), max(ys_all)
        if x_hi == x_lo:
            x_hi = x_lo + 1.0
        if y_hi == y_lo:
            y_hi = y_lo + 1.0

        def sx(x):
            return pad_l + iw * (x - x_lo) / (x_hi - x_lo)

        def sy(y):
            if panel.get("logy"):
                y = np.log10(max(y, 1e-12))
            return oy + pad_t + ih * (1.0 - (y - y_lo) / (y_hi - y_lo))

        parts.append(
            f'<rect x="{pad_l}" y="{oy + pad_t}" width="{iw}" height="{ih}" '
            'fill="none" stroke="#999"/>'
        )
        parts.append(f'<text x="{pad_l}" y="{oy + 16}">{panel["title"]}</text>')
        parts.append(
            f'<text x="{pad_l + iw / 2:.0f}" y="{oy + panel_height - 8}" text-anchor="middle">'
            f'{panel["xlabel"]}</text>'
        )
        for frac in (0.0, 0.5, 1.0):
            xv = x_lo + frac * (x_hi - x_lo)
            yv = y_lo + frac * (y_hi - y_lo)
            yv_label = 10 ** yv if panel.get("logy") else yv
            parts.append(
                f'<text x="{sx(xv):.1f}" y="{oy + pad_t + ih + 14}" text-anchor="middle">{xv:.3g}</text>'
            )
            parts.append(
                f'<text x="{pad_l - 6}" y="{oy + pad_t + ih * (1 - frac) + 4:.1f}" '
                f'text-anchor="end">{yv_label:.3g}</text>'
            )
        for si, (label, xs, ys) in enumerate(panel["series"]):
            color = _PALETTE[si % len(_PALETTE)]
            pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            parts.append(
                f'<text x="{width - pad_r - 120}" y="{oy + pad_t + 14 + 13 * si}" '
                f'fill="{color}">{label}</text>'
            )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def _bench_svg(rows: list[dict], sweep_key: str, path: str):
    methods = sorted({row["method"] for row in rows})
    series = []
    for name in methods:
        pts = [(row[sweep_key], row["mean_s"]) for row in rows if row["method"] == name]
        pts.sort()
        series.append((name, [x for x, _ in pts], [y for _, y in pts]))
    _svg_plot(
        [{
            "title": f"mean reconstruction time vs {sweep_key}",
            "xlabel": sweep_key,
            "ylabel": "seconds",
            "series": series,
            "logy": True,
        }],
        path,
    )


def _load_scenario_arg(args) -> "Scenario":
    if getattr(args, "fixture", False):
        return fixture_scenario()
    if not args.scenario:
        raise ScenarioFormatError("provide --scenario PATH or --fixture")
    return load_scenario(args.scenario)


def _cmd_bench_sensors(args) -> int:
    rows = bench_sensors(args.n, args.s, args.q, _parse_range(args.p), args.runs, args.seed)
    out_rows = [
        {**row, "mean_s": _fmt(row["mean_s"]), "std_s": _fmt(row["std_s"])} for row in rows
    ]
    _write_csv(args.out, "bench-sensors", out_rows)
    if args.svg:
        _bench_svg(rows, "p", args.svg)
    return 0


def _cmd_bench_subspaces(args) -> int:
    rows = bench_subspaces(args.p, args.s, args.q, _parse_range(args.r), args.runs, args.seed)
    out_rows = [
        {**row, "mean_s": _fmt(row["mean_s"]), "std_s": _fmt(row["std_s"])} for row in rows
    ]
    _write_csv(args.out, "bench-subspaces", out_rows)
    if args.svg:
        _bench_svg(rows, "r", args.svg)
    return 0


def _cmd_closedloop(args) -> int:
    scn = _load_scenario_arg(args)
    result = run_closed_loop(scn, args.method, horizon=args.horizon, gamma=args.gamma)
    n = scn.sys.n
    state_cols = [f"x{k}" for k in range(n)]
    rows = []
    for rec in result.records:
        row = {
            "step": rec.step,
            "method": rec.method,
            "recon_s": _fmt(rec.recon_seconds),
            "cost": _fmt(rec.cost),
            "h_min": _fmt(rec.h_min),
            "cardinality": "" if rec.cardinality is None else rec.cardinality,
        }
        for k in range(n):
            row[state_cols[k]] = _fmt(result.states[rec.step][k])
        rows.append(row)
    _write_csv(args.out, "closedloop", rows, extra_cols=state_cols)
    if args.svg:
        steps = [rec.step for rec in result.records]
        state_series = [
            (state_cols[k], steps, [result.states[t][k] for t in steps]) for k in range(n)
        ]
        cost_series = [("cost", steps, [rec.cost for rec in result.records])]
        _svg_plot(
            [
                {"title": f"state trajectory ({args.method})", "xlabel": "step",
                 "ylabel": "x", "series": state_series},
                {"title": "per-step filter cost", "xlabel": "step",
                 "ylabel": "||u - u_nom||", "series": cost_series},
            ],
            args.svg,
        )
    return 0


def _cmd_ssr(args) -> int:
    scn = _load_scenario_arg(args)
    if args.data:
        try:
            with open(args.data) as fh:
                obj = json.load(fh)
            win = IoWindow.from_arrays(
                np.asarray(obj["inputs"], dtype=float), np.asarray(obj["outputs"], dtype=float)
            )
        except json.JSONDecodeError as exc:
            raise ScenarioFormatError(
                f"{args.data}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioFormatError(f"malformed data file: {exc}") from exc
    else:
        from .harness import open_loop_window

        win, _, _ = open_loop_window(scn)
    stacked = stack(scn.sys, win)
    if args.method == "brute":
        pset = brute_force_ssr(stacked, scn.s)
    else:
        eig = eigen_decompose(scn.sys.A)
        idx = preprocess(project_data(stacked, eig))
        if args.method == "majority":
            pset = ssr_majority(idx, scn.s)
        else:
            pset = ssr_combine(threshold_vote(idx, scn.q, scn.s), scn.s)
    n = scn.sys.n
    state_cols = [f"x{k}" for k in range(n)]
    rows = []
    for index, state in enumerate(pset):
        row = {"method": args.method, "index": index}
        for k in range(n):
            row[state_cols[k]] = _fmt(state[k])
        rows.append(row)
    _write_csv(args.out, "ssr", rows, extra_cols=state_cols)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="securectl",
        description="Safe control of linear systems under sparse sensor attacks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    bs = sub.add_parser("bench-sensors", help="time reconstruction methods over a sensor-count sweep")
    bs.add_argument("--n", type=int, default=4, help="state dimension")
    bs.add_argument("--s", type=int, default=4, help="attack budget")
    bs.add_argument("--q", type=int, default=5, help="eigen observability index")
    bs.add_argument("--p", default="8:16", help="sensor counts: '8', '8,12', or '8:16'")
    bs.add_argument("--runs", type=int, default=20, help="scenarios per sweep point")
    bs.add_argument("--seed", type=int, default=0)
    bs.add_argument("--out", default="-", help="CSV path ('-' for stdout)")
    bs.add_argument("--svg", default=None, help="optional SVG plot path")
    bs.set_defaults(func=_cmd_bench_sensors)

    br = sub.add_parser("bench-subspaces", help="time reconstruction methods over a subspace-count sweep")
    br.add_argument("--p", type=int, default=12, help="sensor count")
    br.add_argument("--s", type=int, default=5, help="attack budget")
    br.add_argument("--q", type=int, default=9, help="eigen observability index")
    br.add_argument("--r", default="2:8", help="subspace counts: '2', '2,4', or '2:8'")
    br.add_argument("--runs", type=int, default=20, help="scenarios per sweep point")
    br.add_argument("--seed", type=int, default=0)
    br.add_argument("--out", default="-", help="CSV path ('-' for stdout)")
    br.add_argument("--svg", default=None, help="optional SVG plot path")
    br.set_defaults(func=_cmd_bench_subspaces)

    cl = sub.add_parser("closedloop", help="closed-loop simulation of one filter method")
    cl.add_argument("--scenario", default=None, help="scenario JSON path")
    cl.add_argument("--fixture", action="store_true", help="use the built-in demo scenario")
    cl.add_argument("--method", default="upper-bound",
                    choices=("nominal", "brute", "decomp-ssr", "upper-bound", "partial"))
    cl.add_argument("--horizon", type=int, default=None)
    cl.add_argument("--gamma", type=float, default=None)
    cl.add_argument("--out", default="-", help="CSV path ('-' for stdout)")
    cl.add_argument("--svg", default=None, help="optional SVG plot path")
    cl.set_defaults(func=_cmd_closedloop)

    ss = sub.add_parser("ssr", help="one-shot reconstruction from a scenario (+ data) file")
    ss.add_argument("--scenario", default=None, help="scenario JSON path")
    ss.add_argument("--fixture", action="store_true", help="use the built-in demo scenario")
    ss.add_argument("--data", default=None,
                    help="JSON file with 'inputs' (t x m) and 'outputs' ((t+1) x p); "
                         "omitted: simulate the scenario open loop")
    ss.add_argument("--method", default="decomp-ssr", choices=("brute", "decomp-ssr", "majority"))
    ss.add_argument("--out", default="-", help="CSV path ('-' for stdout)")
    ss.set_defaults(func=_cmd_ssr)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _EXIT_FAILURE as exc:
        print(f"securectl {args.command}: {exc}", file=_sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
