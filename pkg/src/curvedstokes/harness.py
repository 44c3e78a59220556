"""Manufactured solutions, error norms, and the end-to-end experiments."""
from dataclasses import asdict, dataclass, field, fields, replace
import csv
import json
import logging
import math
from pathlib import Path
import time

import numpy as np

from .assembly import (FaceQuadratureCache, assemble_a_dg, assemble_div, assemble_energy_gram,
                       assemble_pressure_mass, assemble_stokes, side_traces)
from .geometry import CurvedMesh, ExactGeometry
from .mesh import generate_ball_mesh, generate_cavity_mesh, generate_cube_mesh, uniform_refine
from .quadrature import tet_quadrature, tri_quadrature
from .solver import (DEFAULT_TOL, PreconditionerConfig, direct_solve, estimate_coercivity,
                     estimate_inf_sup, minres_solve)
from .spaces import DofMap, iter_chunks, piola_divergence, piola_gradients, piola_values

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["level", "h", "dofs_u", "dofs_p", "err_u_energy", "err_p_l2", "div_l2",
               "rate_u", "rate_p", "iters", "seconds"]


# ---------------------------------------------------------------------------
# manufactured solutions

def _stack(*cols):
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


@dataclass
class ManufacturedSolution:
    """Exact Stokes pair with its gradient and source f = -nu lap u + grad p."""
    name: str
    u: object
    p: object
    grad_u: object
    f: object
    divergence_free: bool = True

    def divergence(self, x):
        return np.trace(self.grad_u(x), axis1=-2, axis2=-1)


def example_ball(nu=1.0):
    """u = (sin y, cos z, -x), p = |x|^2 - 3/5 on the unit ball."""
    def u(x):
        return _stack(np.sin(x[..., 1]), np.cos(x[..., 2]), -x[..., 0])

    def p(x):
        return (x ** 2).sum(axis=-1) - 0.6

    def grad_u(x):
        z = np.zeros(x.shape[:-1])
        return np.stack([_stack(z, np.cos(x[..., 1]), z),
                         _stack(z, z, -np.sin(x[..., 2])),
                         _stack(z - 1.0, z, z)], axis=-2)

    def f(x):
        return _stack(nu * np.sin(x[..., 1]) + 2 * x[..., 0],
                      nu * np.cos(x[..., 2]) + 2 * x[..., 1],
                      2 * x[..., 2])

    return ManufacturedSolution("ball", u, p, grad_u, f)


def patch_solution(k, nu=1.0):
    """Divergence-free polynomial velocity of degree k and pressure of degree k-1.

    u = (y^k + x, z^k - y, x^k), p = (x + y + z)^(k-1).
    """
    def u(x):
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        return _stack(Y ** k + X, Z ** k - Y, X ** k)

    def dpow(t):
        return k * t ** (k - 1)

    def grad_u(x):
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        z = np.zeros_like(X)
        return np.stack([_stack(z + 1.0, dpow(Y), z),
                         _stack(z, z - 1.0, dpow(Z)),
                         _stack(dpow(X), z, z)], axis=-2)

    def p(x):
        return x.sum(axis=-1) ** (k - 1) if k > 1 else np.zeros(x.shape[:-1])

    def lap(t):
        return k * (k - 1) * t ** (k - 2) if k > 1 else np.zeros_like(t)

    def f(x):
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        s = x.sum(axis=-1)
        gp = (k - 1) * s ** (k - 2) if k > 1 else np.zeros_like(s)
        return _stack(-nu * lap(Y) + gp, -nu * lap(Z) + gp, -nu * lap(X) + gp)

    return ManufacturedSolution(f"patch-k{k}", u, p, grad_u, f)


def lid_velocity(x, tol=1e-12):
    """(1, 0, 0) on the lid z = 1, zero elsewhere."""
    lid = np.abs(x[..., 2] - 1.0) < tol
    out = np.zeros(x.shape)
    out[..., 0] = lid
    return out


# ---------------------------------------------------------------------------
# error norms

@dataclass
class ErrorReport:
    level: int
    h: float
    dofs_u: int
    dofs_p: int
    energy_error_u: float = float("nan")
    l2_error_p: float = float("nan")
    div_norm: float = float("nan")
    div_max: float = float("nan")
    iterations: int = 0
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("energy_error_u", "l2_error_p", "div_norm"):
            v = getattr(self, name)
            if not (math.isnan(v) or (v >= 0 and math.isfinite(v))):
                raise ValueError(f"{name} must be finite and non-negative")


def _velocity_vector(coeffs):
    return coeffs.velocity if hasattr(coeffs, "velocity") else np.asarray(coeffs)


def energy_norm_error(u_exact, grad_exact, velocity, cmesh, dofmap, quad_degree=None):
    """||u - u_h|| in the broken H^1 seminorm plus h_F-weighted face jumps.

    ``u_exact``/``grad_exact`` may be None for the norm of u_h itself.
    """
    velocity = _velocity_vector(velocity)
    k = dofmap.degree
    deg = quad_degree or min(2 * k + 4, 14)
    rule = tet_quadrature(deg)
    b = dofmap.basis
    vhat, ghat = b.values(rule.points), b.gradients(rule.points)
    vol = 0.0
    for elems in iter_chunks(cmesh.n_elements, 256):
        geo = cmesh.evaluate(elems, rule.points, second=True)
        G = piola_gradients(geo, vhat, ghat, ~cmesh.is_affine[elems])
        c = velocity[dofmap.l2g[elems]] * dofmap.sign[elems]
        gh = np.einsum("eb,eqbij->eqij", c, G)
        d = gh if grad_exact is None else grad_exact(geo["x"]) - gh
        vol += float(np.einsum("q,eq,eqij,eqij->", rule.weights, geo["det"], d, d))
    return math.sqrt(vol + _jump_sum(u_exact, velocity, cmesh, dofmap, deg))


def _jump_sum(u_exact, velocity, cmesh, dofmap, deg):
    mesh = cmesh.mesh
    frule = tri_quadrature(deg)
    total = 0.0
    for faces in iter_chunks(mesh.n_faces, 2048):
        bnd = mesh.is_boundary_face[faces]
        for group, interior in ((faces[~bnd], True), (faces[bnd], False)):
            if not group.size:
                continue
            cache = FaceQuadratureCache(cmesh, group, deg, second=False)
            vals = []
            for s in cache.sides:
                V, _ = side_traces(cmesh, dofmap, s, frule, gradients=False)
                c = velocity[dofmap.l2g[s.elems]] * dofmap.sign[s.elems]
                vals.append(np.einsum("fb,fqbi->fqi", c, V))
            if interior:
                jump = vals[0] - vals[1]
            else:
                jump = -vals[0] if u_exact is None else u_exact(cache.points) - vals[0]
            total += float(np.einsum("fq,fqi,fqi->", cache.ds / cache.h[:, None], jump, jump))
    return total


def _pressure_values(pressure, cmesh, dofmap, rule):
    psi = dofmap.pbasis.values(rule.points)
    for elems in iter_chunks(cmesh.n_elements, 2048):
        geo = cmesh.evaluate(elems, rule.points, second=False)
        yield geo, np.einsum("qb,eb->eq", psi, pressure[dofmap.p_l2g[elems]])


def pressure_l2_error(p_exact, pressure, cmesh, dofmap, quad_degree=None):
    """L2(Omega_h) distance after removing the Omega_h mean of both pressures."""
    pressure = pressure.pressure if hasattr(pressure, "pressure") else np.asarray(pressure)
    rule = tet_quadrature(quad_degree or min(2 * dofmap.degree + 4, 14))
    diffs, weights = [], []
    for geo, ph in _pressure_values(pressure, cmesh, dofmap, rule):
        pe = p_exact(geo["x"]) if p_exact is not None else 0.0
        diffs.append((pe - ph).ravel())
        weights.append((rule.weights * geo["det"]).ravel())
    d, w = np.concatenate(diffs), np.concatenate(weights)
    d = d - (w @ d) / w.sum()
    return math.sqrt(float(w @ (d * d)))


def divergence_l2(velocity, cmesh, dofmap, quad_degree=None):
    """(||div u_h||_{L2(Omega_h)}, max |div u_h| over volume quadrature points)."""
    velocity = _velocity_vector(velocity)
    rule = tet_quadrature(quad_degree or 2 * dofmap.degree + 2)
    divhat = dofmap.basis.divergence(rule.points)
    total, peak = 0.0, 0.0
    for elems in iter_chunks(cmesh.n_elements, 2048):
        geo = cmesh.evaluate(elems, rule.points, second=False)
        d = np.einsum("eb,eqb->eq", velocity[dofmap.l2g[elems]] * dofmap.sign[elems],
                      piola_divergence(geo, divhat))
        total += float(np.einsum("q,eq,eq->", rule.weights, geo["det"], d * d))
        peak = max(peak, float(np.abs(d).max()))
    return math.sqrt(total), peak


def plane_flux(velocity, cmesh, dofmap, axis=2, value=0.5, quad_degree=None, tol=1e-10):
    """Flux of u_h through the mesh faces lying in the plane x_axis = value.

    Returns (flux, total face area). Faces are oriented along +e_axis.
    """
    velocity = _velocity_vector(velocity)
    mesh = cmesh.mesh
    on = np.all(np.abs(mesh.vertices[mesh.faces][:, :, axis] - value) < tol, axis=1)
    faces = np.flatnonzero(on)
    if not faces.size:
        raise ValueError("no mesh faces lie in the requested plane")
    deg = quad_degree or 2 * dofmap.degree + 2
    rule = tri_quadrature(deg)
    cache = FaceQuadratureCache(cmesh, faces, deg, second=False)
    s = cache.sides[0]
    V, _ = side_traces(cmesh, dofmap, s, rule, gradients=False)
    c = velocity[dofmap.l2g[s.elems]] * dofmap.sign[s.elems]
    u = np.einsum("fb,fqbi->fqi", c, V)
    return float(np.einsum("fq,fq->", cache.ds, u[..., axis])), float(cache.ds.sum())


# ---------------------------------------------------------------------------
# configuration

@dataclass
class RunConfig:
    experiment: str = "ball"
    degree: int = 2
    alpha: float = 20.0
    nu: float = 1.0
    levels: int = 3
    start_level: int = 0
    geometry: str = "curved"
    rhs_mode: str = "direct"
    quad_degree: int = None
    solver: str = "minres"
    velocity_block: str = "exact"
    pressure_block: str = "mass-matrix-inner-cg"
    tol: float = DEFAULT_TOL
    max_iters: int = 2000
    cavity_target_tets: int = 27889
    ball_center: tuple = (0.5, 0.5, 0.5)
    ball_radius: float = 0.25
    out: str = "out"
    plots: bool = True
    # wall-clock seconds in the CSV; off gives byte-reproducible output
    timings: bool = True

    def __post_init__(self):
        if self.experiment not in ("ball", "cavity", "patch", "custom"):
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.degree not in (1, 2, 3):
            raise ValueError("degree must be 1, 2 or 3")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.geometry not in ("curved", "straight", "both"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.rhs_mode not in ("direct", "pullback"):
            raise ValueError(f"unknown rhs mode {self.rhs_mode!r}")
        if self.solver not in ("minres", "direct"):
            raise ValueError(f"unknown solver {self.solver!r}")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def updated(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def preconditioner(self):
        return PreconditionerConfig(self.velocity_block, self.pressure_block)


@dataclass
class ConvergenceRecord:
    geometry: str
    reports: list
    rates_u: list
    rates_p: list
    timings: bool = True

    def rows(self):
        out = []
        for i, r in enumerate(self.reports):
            out.append({
                "level": r.level, "h": r.h, "dofs_u": r.dofs_u, "dofs_p": r.dofs_p,
                "err_u_energy": r.energy_error_u, "err_p_l2": r.l2_error_p,
                "div_l2": r.div_norm,
                "rate_u": "" if i == 0 else self.rates_u[i - 1],
                "rate_p": "" if i == 0 else self.rates_p[i - 1],
                "iters": r.iterations,
                "seconds": round(r.seconds, 3) if self.timings else "",
            })
        return out

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for row in self.rows():
                w.writerow({k: _fmt(v) for k, v in row.items()})
        return path


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6e}"
    return v


def effective_h(cmesh):
    """(|Omega_h| / n_elements)^(1/3), which halves exactly under 1:8 refinement."""
    rule = tet_quadrature(2)
    vol = 0.0
    for elems in iter_chunks(cmesh.n_elements, 4096):
        vol += float((rule.weights * cmesh.evaluate(elems, rule.points, second=False)["det"]).sum())
    return (vol / cmesh.n_elements) ** (1.0 / 3.0)


def observed_rates(errors, hs=None, halving_tol=0.1):
    """log2(e_L / e_{L+1}); with ``hs`` the mesh sizes must halve within tolerance."""
    rates = []
    for i in range(len(errors) - 1):
        if hs is not None:
            ratio = hs[i + 1] / hs[i]
            if abs(ratio - 0.5) > 0.5 * halving_tol:
                raise ValueError(f"mesh size ratio {ratio:.3f} between levels {i} and {i + 1} "
                                 "is not a halving")
        rates.append(math.log2(errors[i] / errors[i + 1]) if errors[i + 1] > 0 else float("inf"))
    return rates


# ---------------------------------------------------------------------------
# experiments

def build_discretization(mesh, config, geometry="curved"):
    k = config.degree
    if geometry == "curved":
        cmesh = CurvedMesh(mesh, degree=k)
    else:
        cmesh = CurvedMesh(mesh, geometry=ExactGeometry("identity"), degree=1)
    return cmesh, DofMap(mesh, k)


def solve_system(system, config):
    if config.solver == "direct":
        return direct_solve(system)
    sol, rep = minres_solve(system, config.preconditioner(), config.tol, config.max_iters)
    if not rep.converged:
        raise RuntimeError(f"MINRES did not converge ({rep.relative_residual:.2e})")
    return sol, rep


def boundary_data(sol_exact, mesh):
    """Dirichlet data known on the exact boundary, carried to Gamma_h by projection."""
    geom = mesh.boundary_geometry
    if geom is None or geom.kind == "identity":
        return sol_exact.u
    return lambda x: sol_exact.u(geom.project(x))


def solve_manufactured(mesh, sol_exact, config, geometry="curved", level=0):
    """Assemble, solve and measure one level; returns (ErrorReport, fields, context)."""
    t0 = time.perf_counter()
    cmesh, dofmap = build_discretization(mesh, config, geometry)
    g = boundary_data(sol_exact, mesh)
    system = assemble_stokes(cmesh, dofmap, sol_exact.f, g, config.alpha, config.nu,
                             config.rhs_mode, config.quad_degree)
    fields_, srep = solve_system(system, config)
    seconds = time.perf_counter() - t0
    div, divmax = divergence_l2(fields_, cmesh, dofmap)
    rep = ErrorReport(
        level=level, h=mesh.mesh_size, dofs_u=dofmap.n_velocity, dofs_p=dofmap.n_pressure,
        energy_error_u=energy_norm_error(sol_exact.u, sol_exact.grad_u, fields_, cmesh, dofmap),
        l2_error_p=pressure_l2_error(sol_exact.p, fields_, cmesh, dofmap),
        div_norm=div, div_max=divmax, iterations=srep.iterations, seconds=seconds,
        extra={"h_eff": effective_h(cmesh), "relative_residual": srep.relative_residual})
    logger.info("level %d %s: e_u=%.3e e_p=%.3e div=%.2e iters=%d (%.1fs)", level, geometry,
                rep.energy_error_u, rep.l2_error_p, div, rep.iterations, seconds)
    return rep, fields_, (cmesh, dofmap, system)


def run_convergence_study(config, write=True):
    """Manufactured-solution convergence on the ball for the configured geometry (or both)."""
    geoms = ("straight", "curved") if config.geometry == "both" else (config.geometry,)
    sol = example_ball(config.nu)
    records = {}
    for geom in geoms:
        reports = []
        mesh = generate_ball_mesh(level=config.start_level)
        for i in range(config.levels):
            level = config.start_level + i
            if i:
                mesh = uniform_refine(mesh)
            try:
                rep, _, _ = solve_manufactured(mesh, sol, config, geom, level)
            except Exception:
                logger.exception("level %d failed; returning partial record", level)
                break
            reports.append(rep)
        hs = [r.extra["h_eff"] for r in reports]
        rec = ConvergenceRecord(geom, reports,
                                observed_rates([r.energy_error_u for r in reports], hs),
                                observed_rates([r.l2_error_p for r in reports], hs),
                                timings=config.timings)
        records[geom] = rec
        if write:
            out = Path(config.out)
            rec.write_csv(out / f"convergence_{geom}_k{config.degree}.csv")
    if write and config.plots:
        from .plotting import plot_convergence
        plot_convergence(records, Path(config.out) / f"convergence_k{config.degree}.png")
    return records


def run_patch(config, n=2):
    """Polynomial solution on a straight cube mesh; errors should be at round-off level."""
    mesh = generate_cube_mesh(n)
    cfg = config.updated(geometry="straight")
    sol = patch_solution(cfg.degree, cfg.nu)
    rep, fields_, ctx = solve_manufactured(mesh, sol, cfg, "straight", 0)
    if cfg.out and cfg.experiment == "patch":
        rec = ConvergenceRecord("patch", [rep], [], [], timings=cfg.timings)
        rec.write_csv(Path(cfg.out) / f"patch_k{cfg.degree}.csv")
    return rep, fields_, ctx


def stability_constants(mesh, config, alphas=None, inf_sup=True):
    """Numerical inf-sup constant on the zero-normal-trace space and coercivity of a_DG.

    Returns a dict with ``inf_sup`` and ``coercivity`` (one value per penalty
    in ``alphas``, default ``[config.alpha]``), both relative to the energy norm.
    """
    cmesh, dofmap = build_discretization(mesh, config, "curved")
    E = assemble_energy_gram(cmesh, dofmap, config.quad_degree)
    out = {"coercivity": {}}
    for a in (alphas if alphas is not None else [config.alpha]):
        A = assemble_a_dg(cmesh, dofmap, a, config.quad_degree)
        out["coercivity"][float(a)] = estimate_coercivity(A, E)
    if inf_sup:
        free = dofmap.free_velocity_dofs
        B = assemble_div(cmesh, dofmap, config.quad_degree)[:, free]
        out["inf_sup"] = estimate_inf_sup(B, E[free][:, free],
                                          assemble_pressure_mass(cmesh, dofmap, config.quad_degree),
                                          constant=dofmap.constant_pressure_vector())
    return out


def streamline_seeds(n=11, start=(0.0, 0.5, 0.8), end=(1.0, 0.5, 0.8)):
    """Seed metadata for streamlines along the line source of the cavity example."""
    t = np.linspace(0.0, 1.0, n)
    pts = np.asarray(start)[None] + t[:, None] * (np.asarray(end) - np.asarray(start))[None]
    return {"type": "line", "start": list(start), "end": list(end), "points": pts.tolist()}


def run_cavity(config, write=True):
    """Lid-driven flow in the unit cube around a ball; f = 0."""
    t0 = time.perf_counter()
    mesh = generate_cavity_mesh(config.ball_center, config.ball_radius, config.cavity_target_tets)
    cmesh = CurvedMesh(mesh, degree=config.degree)
    dofmap = DofMap(mesh, config.degree)
    system = assemble_stokes(cmesh, dofmap, None, lid_velocity, config.alpha, config.nu,
                             config.rhs_mode, config.quad_degree)
    fields_, srep = solve_system(system, config)
    div, divmax = divergence_l2(fields_, cmesh, dofmap)
    flux, area = plane_flux(fields_, cmesh, dofmap, 2, config.ball_center[2])
    rep = ErrorReport(level=0, h=mesh.mesh_size, dofs_u=dofmap.n_velocity,
                      dofs_p=dofmap.n_pressure, div_norm=div, div_max=divmax,
                      iterations=srep.iterations, seconds=time.perf_counter() - t0,
                      extra={"n_tets": mesh.n_elements, "plane_flux": flux, "plane_area": area,
                             "relative_residual": srep.relative_residual,
                             "streamline_seeds": streamline_seeds()})
    logger.info("cavity: %d tets, div=%.2e, mid-plane flux=%.2e", mesh.n_elements, div, flux)
    if write:
        from .vtk import export_vtk
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        export_vtk(fields_, cmesh, dofmap, out / "cavity.vtk")
        with open(out / "cavity.json", "w") as fh:
            json.dump(_report_json(rep), fh, indent=2)
        with open(out / "cavity.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n_tets", "dofs_u", "dofs_p", "div_l2", "div_max", "plane_flux",
                        "iters", "seconds"])
            w.writerow([mesh.n_elements, rep.dofs_u, rep.dofs_p, _fmt(div), _fmt(divmax),
                        _fmt(flux), rep.iterations,
                        round(rep.seconds, 3) if config.timings else ""])
    return rep, fields_, (cmesh, dofmap, system)


def _report_json(rep):
    d = asdict(rep)
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}
