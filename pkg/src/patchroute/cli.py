"""Command-line front end.

Commands::

    patchroute gainmap ANNOTATIONS [--verify]
    patchroute route MAP [MAP ...]
    patchroute compare [ANNOTATIONS]
    patchroute curve [ANNOTATIONS]
    patchroute oracle [--trials N]
    patchroute tile ANNOTATIONS

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then command-line flags. Without an annotation file,
``compare`` and ``curve`` run on a seeded synthetic clustered dataset.

Exit codes: 0 success, 1 verification or oracle failure, 2 IO or config error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .coverage import APPROX_RATIO, CoverageCriterion, brute_force_optimal, coverage_curve, greedy_exact_cover
from .dataset import SceneDataset, load_annotations, save_annotations, tile_dataset
from .gainmap import BinConfig, build_gt_gainmap, read_gainmap, write_gainmap
from .geometry import PatchSpec
from .pipeline import STRATEGIES, RoutingSetup, selector
from .reports import plot_comparison, write_cdf_csv, write_curve_csv, write_marginal_csv, write_table
from .router import QueryBudgetRule, RouterConfig, Strategy, query_budget, select_patches, write_selection_csv
from .synthetic import ClusterParams, clustered_dataset, random_small_instance

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
VERIFY_TOL = 1e-6


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    grid_stride: float = 64.0
    patch_size: int = 512
    budget: int = 40
    strategy: str = Strategy.ISSGA_LINEAR.value
    bins: int = 6
    margin: float = 0.05
    iof_threshold: float = 0.5
    query_scale: float = 1.0
    query_min: int = 300
    query_max: int = 3000
    tile_target: int = 8192
    out_dir: str = "out"
    seed: int = 0
    jobs: int = field(default_factory=lambda: os.cpu_count() or 1)
    verify: bool = False
    # compare / curve
    k_max: int = 60
    summary_ks: str = "10,20,30,40,50,60"
    patch_sweep: str = "256:160,512:40,1024:10"
    plots: bool = True
    # synthetic data
    scenes: int = 100
    image_size: int = 8192
    clusters_mean: float = 6.0
    boxes_per_cluster_mean: float = 100.0
    scatter_px: float = 100.0
    background_mean: float = 0.0
    box_min_px: float = 8.0
    box_max_px: float = 48.0
    # oracle
    trials: int = 500

    def validate(self) -> "RunConfig":
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        if self.grid_stride <= 0 or self.tile_target <= 0 or self.jobs < 1:
            raise ConfigError("grid_stride, tile_target and jobs must be positive")
        if self.margin <= 0:
            raise ConfigError("margin must be positive")
        if self.budget < 1 or self.k_max < 1 or self.scenes < 0 or self.trials < 0:
            raise ConfigError("budget and k_max must be >= 1; scenes and trials >= 0")
        try:
            self.setup()
            self.query_rule()
            self.cluster_params()
            self.ks()
            self.sweep()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return self

    def patch(self) -> PatchSpec:
        return PatchSpec(self.patch_size, self.patch_size)

    def setup(self, patch: PatchSpec | None = None) -> RoutingSetup:
        return RoutingSetup(self.grid_stride, patch or self.patch(), BinConfig(self.bins), CoverageCriterion(self.iof_threshold))

    def query_rule(self) -> QueryBudgetRule:
        return QueryBudgetRule(self.query_scale, self.query_min, self.query_max, self.patch())

    def cluster_params(self) -> ClusterParams:
        return ClusterParams.from_mapping(asdict(self))

    def ks(self) -> list[int]:
        ks = {int(t) for t in self.summary_ks.split(",") if t.strip()} | {self.budget}
        return sorted(k for k in ks if 1 <= k <= self.k_max)

    def sweep(self) -> list[tuple[int, int]]:
        out = []
        for item in filter(None, (t.strip() for t in self.patch_sweep.split(","))):
            size, k = item.split(":")
            out.append((int(size), int(k)))
        return out


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, typ, raw):
    if isinstance(raw, str):
        raw = raw.strip().strip("\"'")
    try:
        if typ in (bool, "bool"):
            if isinstance(raw, bool):
                return raw
            if raw.lower() in _TRUE | _FALSE:
                return raw.lower() in _TRUE
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def parse_config_file(path: str | Path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment, ``[section]`` lines are ignored."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror or e}") from e
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    kw = {}
    for src in (file_values or {}, overrides or {}):
        for k, v in src.items():
            if k not in types:
                raise ConfigError(f"unknown config key {k!r}")
            kw[k] = _coerce(k, types[k], v)
    return RunConfig(**kw).validate()


# ---------------------------------------------------------------- output


def _use_color(stream=None) -> bool:
    stream = stream or sys.stdout
    return "NO_COLOR" not in os.environ and hasattr(stream, "isatty") and stream.isatty()


def _status(ok: bool) -> str:
    word = "PASS" if ok else "FAIL"
    if not _use_color():
        return word
    return f"\033[{32 if ok else 31}m{word}\033[0m"


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _safe_name(image_id) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", str(image_id))


def _out(cfg: RunConfig, *parts: str) -> Path:
    p = Path(cfg.out_dir, *parts)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load(path) -> SceneDataset:
    ds = load_annotations(path)
    if ds.dropped:
        print(f"warning: dropped {ds.dropped} degenerate boxes", file=sys.stderr)
    return ds


def _dataset_or_synthetic(cfg: RunConfig, path) -> tuple[SceneDataset, str]:
    if path:
        return _load(path), str(path)
    return clustered_dataset(cfg.seed, cfg.scenes, cfg.cluster_params()), "synthetic"


def _check_patch(patch: PatchSpec, ds: SceneDataset) -> None:
    for s in ds:
        try:
            patch.check_fits(s.extent)
        except ValueError as e:
            raise ConfigError(f"image {s.image_id}: {e}") from e


# ---------------------------------------------------------------- commands


def _gainmap_job(args):
    scene, setup, verify = args
    from .pipeline import scene_gainmap

    gm = scene_gainmap(scene, setup)
    diff = None
    if verify:
        naive = build_gt_gainmap(scene.boxes, setup.grid_for(scene), setup.patch, setup.bins)
        diff = float(np.max(np.abs(naive.values - gm.values))) if gm.values.size else 0.0
    return gm, diff


def _pool_map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def cmd_gainmap(cfg: RunConfig, annotations) -> int:
    ds = _load(annotations)
    setup = cfg.setup()
    _check_patch(setup.patch, ds)
    out = _out(cfg, "gainmaps")
    results = _pool_map(_gainmap_job, [(s, setup, cfg.verify) for s in ds], cfg.jobs)
    worst = 0.0
    for scene, (gm, diff) in zip(ds, results):
        write_gainmap(out / f"{_safe_name(scene.image_id)}.txt", gm)
        if diff is not None:
            worst = max(worst, diff)
    print(f"wrote {len(results)} gain maps to {out}")
    if cfg.verify:
        ok = worst <= VERIFY_TOL
        print(f"{_status(ok)} verify: max |fast - naive| = {worst:.3e} (tolerance {VERIFY_TOL:g})")
        return EXIT_OK if ok else EXIT_FAIL
    return EXIT_OK


def cmd_route(cfg: RunConfig, maps) -> int:
    if cfg.strategy not in {s.value for s in Strategy}:
        raise ConfigError(f"route needs a gain-map strategy, not {cfg.strategy!r}")
    patch = cfg.patch()
    rcfg = RouterConfig(cfg.budget, patch, Strategy(cfg.strategy))
    out = _out(cfg, "selections")
    rows = []
    for path in maps:
        try:
            gm = read_gainmap(path)
        except ValueError as e:
            raise OSError(str(e)) from e
        try:
            patch.check_fits(gm.grid.extent)
        except ValueError as e:
            raise ConfigError(f"{path}: {e}") from e
        if cfg.budget > gm.grid.size:
            raise ConfigError(f"{path}: budget {cfg.budget} exceeds {gm.grid.size} grid cells")
        t0 = time.perf_counter()
        sel = select_patches(gm, rcfg)
        dt = time.perf_counter() - t0
        write_selection_csv(out / f"{Path(path).stem}.csv", sel)
        rows.append((Path(path).name, cfg.budget, cfg.strategy, f"{dt:.6f}", query_budget(gm, cfg.query_rule())))
    write_table(Path(cfg.out_dir) / "route_summary.csv", ["file", "K", "strategy", "runtime_s", "query_budget"], rows)
    print(f"routed {len(rows)} maps with {cfg.strategy}, K={cfg.budget}; selections in {out}")
    return EXIT_OK


def _meta(cfg: RunConfig, source: str, ds: SceneDataset, extra: dict | None = None) -> dict:
    return {
        "version": __version__,
        "source": source,
        "images": len(ds),
        "objects": ds.n_boxes,
        "grid_stride_px": cfg.grid_stride,
        "grid_stride_note": "gain-map stride is an assumption (default 64 px, 8192 px image -> 128 x 128 grid)",
        "iof_threshold": cfg.iof_threshold,
        "coverage_predicate": "object covered when intersection / object area >= iof_threshold",
        "config": asdict(cfg) | {"jobs": None, "out_dir": None},
        **(extra or {}),
    }


def _write_meta(path: Path, meta: dict) -> None:
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _write_curve_set(out: Path, name: str, curve, budget: int) -> None:
    write_curve_csv(out / f"curve_{name}.csv", curve)
    write_marginal_csv(out / f"marginal_{name}.csv", curve)
    write_cdf_csv(out / f"cdf_{name}.csv", curve.per_image_rates(min(budget, curve.k_max)))


def cmd_curve(cfg: RunConfig, annotations=None) -> int:
    ds, source = _dataset_or_synthetic(cfg, annotations)
    setup = cfg.setup()
    _check_patch(setup.patch, ds)
    out = _out(cfg)
    curve = coverage_curve(ds.scenes, selector(cfg.strategy, setup), cfg.k_max, setup.criterion, cfg.jobs)
    _write_curve_set(out, cfg.strategy, curve, cfg.budget)
    _write_meta(out / f"curve_{cfg.strategy}.meta.json", _meta(cfg, source, ds))
    k = min(cfg.budget, cfg.k_max)
    print(f"{cfg.strategy}: avg coverage {curve.avg_rate[k - 1]:.4f} at K={k} (tau={cfg.iof_threshold})")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, annotations=None) -> int:
    ds, source = _dataset_or_synthetic(cfg, annotations)
    setup = cfg.setup()
    _check_patch(setup.patch, ds)
    out = _out(cfg)
    curves = {}
    for name in STRATEGIES:
        curves[name] = coverage_curve(ds.scenes, selector(name, setup), cfg.k_max, setup.criterion, cfg.jobs)
        _write_curve_set(out, name, curves[name], cfg.budget)

    rows = [
        (name, k, float(c.avg_rate[k - 1]), c.object_rate(k))
        for name, c in curves.items()
        for k in cfg.ks()
    ]
    write_table(out / "summary.csv", ["strategy", "K", "avg_rate", "object_rate"], rows)

    sweep_rows = []
    for size, k in cfg.sweep():
        patch = PatchSpec(size, size)
        _check_patch(patch, ds)
        s_setup = cfg.setup(patch)
        for name in STRATEGIES:
            c = coverage_curve(ds.scenes, selector(name, s_setup), k, s_setup.criterion, cfg.jobs)
            sweep_rows.append((size, k, name, float(c.avg_rate[-1]), c.object_rate(k)))
    if sweep_rows:
        write_table(out / "patch_sweep.csv", ["patch_size", "K", "strategy", "avg_rate", "object_rate"], sweep_rows)

    _write_meta(out / "meta.json", _meta(cfg, source, ds, {"strategies": list(STRATEGIES)}))
    if cfg.plots:
        plot_comparison(out, curves, cfg.budget)

    k = min(cfg.budget, cfg.k_max)
    print(f"object coverage at K={k}, tau={cfg.iof_threshold}, {len(ds)} images, {ds.n_boxes} objects")
    for name, c in curves.items():
        print(f"  {name:<16s} {c.object_rate(k):.4f}   avg/image {c.avg_rate[k - 1]:.4f}")
    print(f"reports in {out}")
    return EXIT_OK


def cmd_oracle(cfg: RunConfig) -> int:
    rng = np.random.default_rng(cfg.seed)
    crit = CoverageCriterion(cfg.iof_threshold)
    failures = 0
    for t in range(cfg.trials):
        inst = random_small_instance(rng)
        opt, _ = brute_force_optimal(inst, crit)
        got = int(greedy_exact_cover(list(inst.boxes), list(inst.rects), inst.budget, crit).scores.sum())
        ok = math.ceil(APPROX_RATIO * opt) <= got <= opt
        if inst.budget == len(inst.rects):
            ok = ok and got == opt
        if not ok:
            failures += 1
            print(f"{_status(False)} trial {t}: greedy {got}, optimum {opt}, budget {inst.budget}")
    print(f"{_status(failures == 0)} {cfg.trials - failures}/{cfg.trials} trials within bound (seed {cfg.seed})")
    return EXIT_OK if failures == 0 else EXIT_FAIL


def cmd_tile(cfg: RunConfig, annotations) -> int:
    ds = _load(annotations)
    tiled = tile_dataset(ds, cfg.tile_target)
    out = _out(cfg) / "tiled.json"
    save_annotations(tiled, out)
    print(f"{len(ds)} images -> {len(tiled)} tiles of {cfg.tile_target} px; {tiled.n_boxes} boxes; wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _common() -> argparse.ArgumentParser:
    """Flags accepted before or after the command name."""
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--grid-stride", type=float, help="gain-map cell size in pixels (default 64)")
    p.add_argument("--patch-size", type=int, help="square patch side in pixels (default 512)")
    p.add_argument("--budget", "-K", type=int, help="patches per image (default 40)")
    p.add_argument("--strategy", choices=STRATEGIES, help="selection strategy (default issga-linear)")
    p.add_argument("--margin", type=float, help="peak margin for the loss (default 0.05)")
    p.add_argument("--iof-threshold", type=float, help="coverage threshold tau (default 0.5)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--out-dir", help="output directory (default ./out)")
    p.add_argument("--verify", action="store_true", help="cross-check fast gain maps against the naive builder")
    p.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="patchroute", description="Sparse patch routing on gain maps.", parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gainmap", parents=[common], help="write ground-truth gain maps for an annotation file")
    p.add_argument("annotations")

    p = sub.add_parser("route", parents=[common], help="select patches on gain-map files")
    p.add_argument("maps", nargs="+")

    for name, text in (("compare", "compare all strategies"), ("curve", "coverage-vs-K for one strategy")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("annotations", nargs="?", help="COCO-style JSON; synthetic scenes when omitted")
        p.add_argument("--k-max", type=int, default=argparse.SUPPRESS)
        p.add_argument("--scenes", type=int, default=argparse.SUPPRESS, help="synthetic scene count")
        if name == "compare":
            p.add_argument("--no-plots", dest="plots", action="store_false", default=argparse.SUPPRESS)

    p = sub.add_parser("oracle", parents=[common], help="check greedy against brute force on small instances")
    p.add_argument("--trials", type=int, default=argparse.SUPPRESS)

    p = sub.add_parser("tile", parents=[common], help="split large images into fixed-size tiles")
    p.add_argument("annotations")
    p.add_argument("--tile-target", type=int, default=argparse.SUPPRESS)
    return parser


_POSITIONAL = {"command", "annotations", "maps", "config"}


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    try:
        file_values = parse_config_file(args["config"]) if "config" in args else {}
        cfg = build_config(file_values, {k: v for k, v in args.items() if k not in _POSITIONAL})
        cmd = args["command"]
        if cmd == "gainmap":
            return cmd_gainmap(cfg, args["annotations"])
        if cmd == "route":
            return cmd_route(cfg, args["maps"])
        if cmd == "compare":
            return cmd_compare(cfg, args.get("annotations"))
        if cmd == "curve":
            return cmd_curve(cfg, args.get("annotations"))
        if cmd == "oracle":
            return cmd_oracle(cfg)
        return cmd_tile(cfg, args["annotations"])
    except ConfigError as e:
        _err(str(e))
        return EXIT_CONFIG
    except (OSError, ValueError) as e:
        # AnnotationError is a ValueError; remaining ValueErrors come from bad input files
        _err(str(e))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
