"""Command-line driver: gen, template, match, balance, estimate, sensitivity, bench, polytope.

Stages communicate through files. Every command writes ``manifest.json``
into its output directory with the command, its configuration and SHA-256
hashes of inputs and outputs; wall-clock measurements go to a separate
``timings.json`` so the manifest is reproducible byte for byte.

Exit codes: 0 success, 2 configuration or usage error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .bench import ScalingSpec, loglog_slope, run_scaling, write_grid_csv, write_manifest, write_records_csv
from .data import DataError, Dataset, load_csv, load_schema_config, write_csv
from .design import DesignError, LevelTooSmall, MatchedDesign, MatchFailure, build_design, select_template
from .diagnostics import balance_table, smd_report
from .inference import (
    InferenceError,
    MatchedGroups,
    pair_differences,
    rosenbaum_gamma,
    simultaneous_contrasts,
    write_estimates_csv,
    write_gamma_csv,
)
from .mip import BnbConfig
from .model import ModelError
from .polytope import lemma_model, polytope_report
from .synth import SynthConfig, generate_study, schema_config, superset_rows

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


class ConfigError(ValueError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(args, out: Path, outputs: Sequence[str], inputs: Sequence[str | None] = (), timings: dict | None = None):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in {"out", "func", "input", "schema", "design", "template"}}
    doc = {
        "command": args.command,
        "version": __version__,
        "config": cfg,
        "inputs": {Path(p).name: _sha256(Path(p)) for p in inputs if p},
        "outputs": {name: _sha256(out / name) for name in outputs},
    }
    _write_json(out / "manifest.json", doc)
    if timings is not None:
        _write_json(out / "timings.json", {k: round(v, 3) for k, v in timings.items()})


def _load(args) -> tuple[Dataset, object]:
    if not args.input or not args.schema:
        raise ConfigError("--input and --schema are required")
    cfg = load_schema_config(args.schema)
    return load_csv(args.input, cfg), cfg


def _mip_cfg(args) -> BnbConfig:
    return BnbConfig(time_limit=args.time_limit, node_limit=args.node_limit, seed=args.seed)


def _load_design(args, dataset: Dataset) -> MatchedDesign:
    if not args.design:
        raise ConfigError("--design is required")
    try:
        doc = json.loads(Path(args.design).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read design {args.design}: {exc}") from exc
    return MatchedDesign.from_dict(doc, dataset)


def _outcomes(args, dataset: Dataset) -> list[str]:
    names = args.outcome or list(dataset.outcomes)
    if not names:
        raise ConfigError("dataset has no outcomes; pass --outcome")
    missing = [o for o in names if o not in dataset.outcomes]
    if missing:
        raise ConfigError(f"unknown outcome(s): {', '.join(missing)}")
    return names


# -- subcommands -------------------------------------------------------------


def cmd_gen(args) -> int:
    out = _out_dir(args)
    sizes = tuple(args.level_sizes) if args.level_sizes else (args.level_size,) * args.levels
    cfg = SynthConfig(
        level_sizes=sizes,
        seed=args.seed,
        attendance_effect=args.attendance_effect,
        template_superset=args.superset_size > 0,
        superset_size=args.superset_size,
    )
    ds = generate_study(cfg)
    sc = schema_config()
    write_csv(ds, out / "data.csv", sc)
    sc.dump(out / "schema.json")
    outputs = ["data.csv", "schema.json"]
    if args.superset_size > 0:
        _write_json(out / "template.json", {"sample": [ds.ids[i] for i in superset_rows(cfg)]})
        outputs.append("template.json")
    print(f"wrote {len(ds)} units over {len(ds.levels)} levels to {out / 'data.csv'}")
    _finish(args, out, outputs)
    return EXIT_OK


def cmd_template(args) -> int:
    ds, _ = _load(args)
    out = _out_dir(args)
    t0 = time.perf_counter()
    choice = select_template(ds.x, ds.schema, args.template_size, args.candidates, args.seed)
    doc = choice.to_dict(ds.ids)
    doc["distance"] = round(doc["distance"], 12)
    _write_json(out / "template.json", doc)
    print(f"template of {args.template_size} units, robust Mahalanobis distance {choice.distance:.6g}")
    _finish(args, out, ["template.json"], [args.input, args.schema], {"template": time.perf_counter() - t0})
    return EXIT_OK


def cmd_match(args) -> int:
    ds, _ = _load(args)
    out = _out_dir(args)
    template = None
    if args.template:
        doc = json.loads(Path(args.template).read_text(encoding="utf-8"))
        pos = {u: i for i, u in enumerate(ds.ids)}
        try:
            template = np.array(sorted(pos[u] for u in doc["sample"]), dtype=np.int64)
        except KeyError as exc:
            raise ConfigError(f"template refers to unknown unit {exc}") from None
    t0 = time.perf_counter()
    design = build_design(ds, args.template_size, args.candidates, args.seed, _mip_cfg(args),
                          workers=args.workers, template=template)
    design.write_json(out / "design.json", ds)
    design.write_groups_csv(out / "groups.csv", ds)
    timings = {"total": time.perf_counter() - t0}
    for lv in design.levels:
        m = design.matches[lv]
        timings[f"level_{lv}"] = m.wall_time
        print(f"level {lv}: imbalance {m.objective} ({m.status.value}, {m.node_count} nodes)")
    _finish(args, out, ["design.json", "groups.csv"], [args.input, args.schema, args.template], timings)
    return EXIT_OK


def cmd_balance(args) -> int:
    ds, _ = _load(args)
    design = _load_design(args, ds)
    out = _out_dir(args)
    table = balance_table(design, ds.x)
    table.write_csv(out / "balance.csv")
    table.write_json(out / "balance.json")
    report = smd_report(design, ds)
    report.write_csv(out / "smd.csv")
    for lv in design.levels:
        print(f"level {lv}: total deviation {table.deviation(lv)}")
    _finish(args, out, ["balance.csv", "balance.json", "smd.csv"], [args.input, args.schema, args.design])
    return EXIT_OK


def cmd_estimate(args) -> int:
    ds, _ = _load(args)
    design = _load_design(args, ds)
    out = _out_dir(args)
    families = {}
    summary = {}
    for o in _outcomes(args, ds):
        fam = simultaneous_contrasts(MatchedGroups.from_design(design, ds, o), args.alpha, args.mc_draws,
                                     args.seed, args.workers)
        families[o] = fam
        summary[o] = {"baseline": fam.baseline, "r_star": fam.r_star, "marginal_alpha": fam.marginal_alpha}
    write_estimates_csv(out / "estimates.csv", families)
    _write_json(out / "contrasts.json", summary)
    _finish(args, out, ["estimates.csv", "contrasts.json"], [args.input, args.schema, args.design])
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    ds, _ = _load(args)
    design = _load_design(args, ds)
    out = _out_dir(args)
    results = {}
    for o in _outcomes(args, ds):
        g = MatchedGroups.from_design(design, ds, o)
        rows = []
        for lv in g.levels[1:]:
            d = pair_differences(g, lv)
            rows.append(rosenbaum_gamma(d, args.alpha, level=lv))
        results[o] = rows
    write_gamma_csv(out / "gamma.csv", results)
    _finish(args, out, ["gamma.csv"], [args.input, args.schema, args.design])
    return EXIT_OK


def cmd_bench(args) -> int:
    out = _out_dir(args)
    if args.input:
        ds, _ = _load(args)
        levels = ds.levels
        lv = args.level or max(levels, key=lambda v: ds.level(v).size)
        level_x, pool, schema = ds.x[ds.level(lv)], ds.x, ds.schema
    else:
        ds = generate_study(SynthConfig(level_sizes=(args.level_size, args.level_size), seed=args.seed))
        level_x, pool, schema = ds.x[ds.level("2")], ds.x, ds.schema
    spec = ScalingSpec(schema, level_x, pool, list(args.factors), list(args.template_sizes), args.seed,
                       _mip_cfg(args))
    records = run_scaling(spec, log=sys.stdout)
    write_records_csv(out / "records.csv", records)
    write_grid_csv(out / "grid.csv", records)
    extra = {}
    for T in spec.template_sizes:
        try:
            extra[f"loglog_slope_T{T}"] = round(loglog_slope(records, T), 3)
        except ValueError:
            pass
    # the grid is timing data by nature; the manifest only pins the configuration
    write_manifest(out / "manifest.json", spec, {"command": "bench", "slopes": extra})
    return EXIT_OK


def cmd_polytope(args) -> int:
    out = _out_dir(args)
    if args.lemma1:
        model = lemma_model()
        reports = [polytope_report(model), polytope_report(model, 1)]
    else:
        ds, _ = _load(args)
        if not args.level:
            raise ConfigError("--level is required without --lemma1")
        choice = select_template(ds.x, ds.schema, args.template_size, args.candidates, args.seed)
        from .data import category_counts
        from .model import Formulation, build_model_from_counts

        model = build_model_from_counts(Formulation.LINEAR, category_counts(ds.x, choice.sample, ds.schema),
                                        ds.x[ds.level(args.level)])
        reports = [polytope_report(model)]
    doc = {"instance": "lemma1" if args.lemma1 else "dataset", "T": model.T, "L": model.L,
           "conventions": [r.to_dict() for r in reports]}
    _write_json(out / "polytope.json", doc)
    for r in reports:
        print(f"sum z = {r.cardinality:g}: {r.n_vertices} vertices, {r.n_fractional} fractional, "
              f"all-halves vertex {'present' if r.half_vertex_found else 'absent'}")
    _finish(args, out, ["polytope.json"], [args.input, args.schema] if not args.lemma1 else [])
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _alpha(s: str) -> float:
    v = float(s)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return v


def _positive_float(s: str) -> float:
    v = float(s)
    if not v > 0 or math.isinf(v):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="repmatch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        if data:
            sp.add_argument("--input", help="study CSV")
            sp.add_argument("--schema", help="schema config JSON")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True, help="output directory")
        return sp

    def sizing(sp):
        sp.add_argument("--template-size", type=_positive_int, default=1000)
        sp.add_argument("--candidates", type=_positive_int, default=500, help="random template draws R")

    def solver(sp):
        sp.add_argument("--time-limit", type=_positive_float, default=600.0, help="seconds per level")
        sp.add_argument("--node-limit", type=_positive_int, default=1_000_000,
                        help="branch-and-bound nodes per level (a reproducible budget)")
        sp.add_argument("--workers", type=_positive_int, default=1)

    sp = common(sub.add_parser("gen", help="write a synthetic study"), data=False)
    sp.add_argument("--levels", type=_positive_int, default=3)
    sp.add_argument("--level-size", type=_positive_int, default=2000)
    sp.add_argument("--level-sizes", type=_positive_int, nargs="+")
    sp.add_argument("--superset-size", type=int, default=0,
                    help="units copied into every level; also writes template.json listing one copy")
    sp.add_argument("--attendance-effect", type=float, default=1.5)
    sp.set_defaults(func=cmd_gen)

    sp = common(sub.add_parser("template", help="choose the template sample"))
    sizing(sp)
    sp.set_defaults(func=cmd_template)

    sp = common(sub.add_parser("match", help="match every level to the template"))
    sizing(sp)
    solver(sp)
    sp.add_argument("--template", help="template.json from the template command")
    sp.set_defaults(func=cmd_match)

    sp = common(sub.add_parser("balance", help="balance table and standardized differences"))
    sp.add_argument("--design", help="design.json from the match command")
    sp.set_defaults(func=cmd_balance)

    for name, fn, hlp in (("estimate", cmd_estimate, "simultaneous rank contrasts"),
                          ("sensitivity", cmd_sensitivity, "critical gamma per contrast")):
        sp = common(sub.add_parser(name, help=hlp))
        sp.add_argument("--design", help="design.json from the match command")
        sp.add_argument("--outcome", action="append", help="outcome column (repeatable; default all)")
        sp.add_argument("--alpha", type=_alpha, default=0.05)
        if name == "estimate":
            sp.add_argument("--mc-draws", type=_positive_int, default=100_000)
            sp.add_argument("--workers", type=_positive_int, default=1)
        sp.set_defaults(func=fn)

    sp = common(sub.add_parser("bench", help="scaling grid over template sizes and copy factors"))
    sp.add_argument("--level", help="level to enlarge (default: largest)")
    sp.add_argument("--level-size", type=_positive_int, default=5000, help="synthetic level size without --input")
    sp.add_argument("--factors", type=_positive_int, nargs="+", default=[1, 2])
    sp.add_argument("--template-sizes", type=_positive_int, nargs="+", default=[250])
    sp.add_argument("--time-limit", type=_positive_float, default=600.0)
    sp.add_argument("--node-limit", type=_positive_int, default=1_000_000)
    sp.set_defaults(func=cmd_bench)

    sp = common(sub.add_parser("polytope", help="enumerate relaxation vertices"))
    sp.add_argument("--lemma1", action="store_true", help="the built-in six-unit instance")
    sp.add_argument("--level")
    sizing(sp)
    sp.set_defaults(func=cmd_polytope)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        return args.func(args)
    except (LevelTooSmall, MatchFailure, ModelError, InferenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, DataError, DesignError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
