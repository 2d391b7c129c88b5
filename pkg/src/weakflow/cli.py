"""Command-line entry point: ``weakflow <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure (config, geometry, numeric or I/O
error, reported with its category), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import TrainConfig, config_from_dict, dump_config, parse_config
from .errors import ConfigError, WeakflowError

log = logging.getLogger("weakflow")

THREADS_ENV = "WEAKFLOW_NUM_THREADS"


# ------------------------------------------------------------------ helpers
def _set_threads() -> None:
    n = os.environ.get(THREADS_ENV)
    if n:
        import torch

        try:
            torch.set_num_threads(int(n))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {n!r}")


def _prepare_out(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _attach_log(out: Path) -> None:
    h = logging.FileHandler(out / "run.log")
    h.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("weakflow").addHandler(h)


def _load_config(args, require_geometry: bool = False) -> TrainConfig:
    cfg = parse_config(args.config) if getattr(args, "config", None) else config_from_dict({})
    if getattr(args, "geometry", None):
        cfg.geometry.kind = args.geometry
    return cfg.validate(require_geometry=require_geometry)


def _geometry(cfg: TrainConfig):
    from .geometry import geometry_from_config

    return geometry_from_config({**vars(cfg.geometry), "area_seed": cfg.seed_for("geometry")})


def _default_out(name: str) -> Path:
    return Path("runs") / f"{name}-{time.strftime('%Y%m%d-%H%M%S')}"


def write_manifest(out: Path, cfg: TrainConfig, geometry, extra: dict | None = None) -> dict:
    from .trainer import DEVIATIONS

    manifest = {
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": {"root": cfg.seed, **{k: cfg.seed_for(k) for k in ("geometry", "placement", "batch", "init")}},
        "geometry_digest": geometry.digest,
        "deviations": DEVIATIONS,
        "outputs": {"config": "config.yaml", "log": "run.log"},
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    manifest.update(extra or {})
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    path.chmod(0o444)
    return manifest


# -------------------------------------------------------------- subcommands
def cmd_inspect_geometry(args) -> int:
    from .geometry import fluid_volume_fraction

    cfg = _load_config(args, require_geometry=True)
    g = _geometry(cfg)
    info = {
        "kind": g.kind,
        "box": g.box,
        "digest": g.digest,
        "areas": {k: v for k, v in g.area_breakdown.items()},
        "wall_area": g.wall_area,
        "boundary_area": g.boundary_area,
        "fluid_volume_fraction": fluid_volume_fraction(g),
    }
    print(json.dumps(info, indent=2, default=float))
    if args.out:
        out = _prepare_out(args.out, args.force)
        (out / "geometry.json").write_text(json.dumps(info, indent=2, default=float))
    return 0


def cmd_place(args) -> int:
    from .trainer import make_placement

    cfg = _load_config(args, require_geometry=True)
    if args.skeleton:
        cfg.cv.skeleton = args.skeleton
    out = _prepare_out(args.out or _default_out("place"), args.force)
    g = _geometry(cfg)
    plan = make_placement(g, cfg)
    plan.write(out)
    print(json.dumps(plan.summary(), indent=2, default=float))
    print(f"wrote centers_large.csv, centers_medium.csv, centers_small.csv, radii.json to {out}")
    return 0


def cmd_train(args) -> int:
    from .trainer import train

    cfg = _load_config(args, require_geometry=True)
    out = Path(args.out or _default_out("train"))
    if args.resume is None:
        out = _prepare_out(out, args.force)
    _attach_log(out)
    g = _geometry(cfg)
    dump_config(cfg, out / "config.yaml")
    if not (out / "manifest.json").exists():
        write_manifest(out, cfg, g)

    def progress(rep):
        if rep.epoch % max(1, cfg.optim.epochs // 20) == 0 or rep.epoch == cfg.optim.epochs - 1:
            log.info("epoch %d gate %d lr %g total %.6g", rep.epoch, rep.gate, rep.lr, rep.total)
            print(f"epoch {rep.epoch:6d}  gate {rep.gate}  total {rep.total:.6g}", flush=True)

    res = train(cfg, out_dir=out, resume=args.resume, geometry=g, on_epoch=progress)
    print(f"finished {len(res.history)} epochs; outputs in {out}")
    return 0


def _find_config(ckpt: Path):
    for d in (ckpt.parent, ckpt.parent.parent):
        if (d / "config.yaml").exists():
            return d / "config.yaml"
    return None


def cmd_eval(args) -> int:
    from .evaluation import (
        HagenPoiseuille, export_field, field_errors, load_field_csv, make_eval_grid, mass_flow_rates, plot_profile,
    )
    from .model import FieldModel

    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    if not args.config and not args.geometry:
        args.config = _find_config(ckpt)
    cfg = _load_config(args, require_geometry=True)
    g = _geometry(cfg)
    model, _ = FieldModel.load(ckpt)
    out = _prepare_out(args.out or _default_out("eval"), args.force)
    report = {"checkpoint": str(ckpt), "geometry": g.kind, "grid": {"cells_across_short_side": args.grid}}

    ref = args.reference
    if ref is None or ref == "hagen-poiseuille":
        pts = make_eval_grid(g, args.grid)
        export_field(model, pts, out / "field.csv")
        if ref is not None:
            if g.kind != "circular_pipe":
                raise ConfigError("--reference hagen-poiseuille requires a circular_pipe geometry")
            hp = HagenPoiseuille.for_reynolds(g.pipe_radius, cfg.physics.re,
                                              mean_velocity=float(cfg.physics.inlet_velocity[0]), axis=g.axis,
                                              x_out=float(g.hi[0]), p_out=cfg.physics.p_out)
            report["errors"] = field_errors(model, hp, pts)
    elif ref.startswith("csv:"):
        pts, u_ref, p_ref = load_field_csv(ref[4:])
        report["grid"] = {"imported": ref[4:], "n_points": len(pts)}
        report["errors"] = field_errors(model, (u_ref, p_ref), pts)
        export_field(model, pts, out / "field.csv")
    else:
        raise ConfigError(f"--reference must be 'hagen-poiseuille' or 'csv:<path>', got {ref!r}")

    fr = mass_flow_rates(model, g, args.stations, args.samples, seed=cfg.seed)
    report["mass_flow"] = {"x": fr.x.tolist(), "ratio": fr.ratio.tolist(), "q_in": fr.q_in,
                           "max_abs_deviation": float(np.abs(fr.ratio - 1).max()),
                           "std_ratio": float(fr.ratio.std())}
    plot_profile({"model": fr.pairs()}, out / "mass_flow.svg", title=f"{g.kind}: Q(x)/Q_in")
    with open(out / "mass_flow.csv", "w") as fh:
        fh.write("x,Q,Q_over_Qin,stderr\n")
        for x, q, r, e in zip(fr.x, fr.q, fr.ratio, fr.stderr):
            fh.write(",".join(f"{float(v):.17g}" for v in (x, q, r, e)) + "\n")
    (out / "eval.json").write_text(json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))
    return 0


def cmd_selftest(args) -> int:
    from .diagnostics import directional_gradient_check, hessian_fd_error, jacobian_fd_error
    from .evaluation import divergence_theorem_selftest
    from .geometry import LevelSetGeometry
    from .model import FieldModel

    rows = []
    for kind in ("plane_channel", "gyroid"):
        rep = divergence_theorem_selftest(LevelSetGeometry(kind), trials=args.trials, seed=args.seed)
        rows.append((f"divergence theorem ({kind})", rep.pass_rate, rep.pass_rate >= 0.95, ">= 0.95"))
    model = FieldModel(width=16, depth=2, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    ej = jacobian_fd_error(model, rng.uniform(0, 1, (100, 3)))
    rows.append(("input Jacobian vs FD", ej, ej < 1e-5, "< 1e-5"))
    eh = hessian_fd_error(model, rng.uniform(0, 1, (50, 3)))
    rows.append(("velocity Hessian vs FD", eh, eh < 1e-3, "< 1e-3"))
    x0 = rng.uniform(0, 1, (32, 3))

    def probe(m):
        from .residuals import continuity_terms, momentum_terms

        ev = m.evaluate(x0, "laplacian")
        return (continuity_terms(ev) ** 2).mean() + (momentum_terms(ev, 100.0) ** 2).sum(dim=1).mean()

    eg = directional_gradient_check(model, probe, n_dirs=10, eps=1e-6, seed=args.seed)
    rows.append(("parameter gradient vs directional FD", eg, eg < 1e-4, "< 1e-4"))
    width = max(len(r[0]) for r in rows)
    for name, val, ok, tol in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {val:.3e}  ({tol})")
    return 0 if all(r[2] for r in rows) else 1


# --------------------------------------------------------------------- main
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weakflow", description="Multi-scale weak-form flow training toolkit")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--geometry", help="geometry kind (overrides geometry.kind)")
        if out:
            sp.add_argument("--out", help="output directory")
            sp.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")

    sp = sub.add_parser("inspect-geometry", help="report areas and volume fraction of a geometry")
    common(sp)
    sp.set_defaults(func=cmd_inspect_geometry)

    sp = sub.add_parser("place", help="place control-volume centers and choose radii")
    common(sp)
    sp.add_argument("--skeleton", help="skeleton CSV to use instead of extracting one")
    sp.set_defaults(func=cmd_place)

    sp = sub.add_parser("train", help="run two-stage training")
    common(sp)
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--grid", type=int, default=32, help="grid cells across the shortest box side")
    sp.add_argument("--reference", help="hagen-poiseuille or csv:<path>")
    sp.add_argument("--stations", type=int, default=10)
    sp.add_argument("--samples", type=int, default=4096, help="cross-section samples per station")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("selftest", help="divergence-theorem and derivative suites")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _set_threads()
        return args.func(args)
    except WeakflowError as exc:
        print(f"{exc.category} error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
