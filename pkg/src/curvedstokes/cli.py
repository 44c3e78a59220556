"""Command-line entry point: ``curvedstokes <subcommand> [options]``."""
import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import RunConfig, run_cavity, run_convergence_study, run_patch

logger = logging.getLogger("curvedstokes")


def _common(p):
    p.add_argument("--degree", type=int, help="velocity degree k (1, 2 or 3)")
    p.add_argument("--alpha", type=float, help="interior penalty (default 20)")
    p.add_argument("--nu", type=float, help="viscosity (default 1)")
    p.add_argument("--rhs-mode", choices=("direct", "pullback"), dest="rhs_mode")
    p.add_argument("--tol", type=float, help="MINRES relative tolerance (default 1e-12)")
    p.add_argument("--solver", choices=("minres", "direct"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--no-plots", action="store_false", dest="plots", default=None)
    p.add_argument("--no-timings", action="store_false", dest="timings", default=None,
                   help="leave the seconds column empty (byte-reproducible CSV)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="curvedstokes",
                                     description="Divergence-free parametric BDM/IPDG Stokes solver")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convergence", help="manufactured-solution convergence study on the ball")
    _common(p)
    p.add_argument("--levels", type=int, help="number of refinement levels")
    p.add_argument("--start-level", type=int, dest="start_level")
    p.add_argument("--geometry", choices=("straight", "curved", "both"))

    p = sub.add_parser("cavity", help="lid-driven cavity around a ball")
    _common(p)
    p.add_argument("--target-tets", type=int, dest="cavity_target_tets")
    p.add_argument("--geometry", choices=("curved",))

    p = sub.add_parser("patch", help="polynomial patch test on a cube")
    _common(p)

    p = sub.add_parser("inspect-mesh", help="mesh diagnostics as JSON")
    p.add_argument("path", nargs="?", help="mesh file (tetmesh or gmsh 2.2)")
    p.add_argument("--format", choices=("tetmesh", "gmsh"), default="tetmesh")
    p.add_argument("--ball-level", type=int, help="inspect the generated ball mesh instead")
    p.add_argument("--cavity", action="store_true", help="inspect the generated cavity mesh")
    p.add_argument("--target-tets", type=int, default=27889)
    return parser


def resolve_config(args, experiment):
    cfg = RunConfig.from_json(args.config) if getattr(args, "config", None) else RunConfig()
    keys = ("degree", "alpha", "nu", "rhs_mode", "tol", "solver", "out", "plots", "levels",
            "start_level", "geometry", "cavity_target_tets", "timings")
    overrides = {k: getattr(args, k, None) for k in keys}
    return cfg.updated(experiment=experiment, **overrides)


def _inspect(args):
    from .geometry import CurvedMesh, verify_jacobian_bounds
    from .mesh import generate_ball_mesh, generate_cavity_mesh, load_mesh, validate_topology
    if args.ball_level is not None:
        mesh = generate_ball_mesh(level=args.ball_level)
    elif args.cavity:
        mesh = generate_cavity_mesh(target_tets=args.target_tets)
    elif args.path:
        mesh = load_mesh(args.path, format=args.format)
    else:
        raise SystemExit("inspect-mesh needs a path, --ball-level or --cavity")
    diag = validate_topology(mesh)
    out = {"vertices": mesh.n_vertices, "tets": mesh.n_elements, "faces": mesh.n_faces,
           "boundary_faces": int(len(mesh.boundary_faces)), "h": mesh.mesh_size,
           "diagnostics": diag.as_dict()}
    if mesh.boundary_geometry is not None and mesh.boundary_geometry.kind != "identity":
        out["curved_map"] = verify_jacobian_bounds(CurvedMesh(mesh, degree=2)).as_dict()
    print(json.dumps(out, indent=2, default=float))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "inspect-mesh":
        return _inspect(args)
    experiment = {"convergence": "ball", "cavity": "cavity", "patch": "patch"}[args.command]
    cfg = resolve_config(args, experiment)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    if args.command == "convergence":
        records = run_convergence_study(cfg)
        for geom, rec in records.items():
            for row in rec.rows():
                print(geom, json.dumps(row))
    elif args.command == "cavity":
        rep, _, _ = run_cavity(cfg)
        print(json.dumps({"tets": rep.extra["n_tets"], "div_l2": rep.div_norm,
                          "div_max": rep.div_max, "plane_flux": rep.extra["plane_flux"],
                          "iters": rep.iterations}))
    else:
        rep, _, _ = run_patch(cfg)
        print(json.dumps({"err_u_energy": rep.energy_error_u, "err_p_l2": rep.l2_error_p,
                          "div_l2": rep.div_norm}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
