"""Convergence studies: one refinement ladder per configuration, written as CSV."""
from __future__ import annotations

import io
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .assembly import (BiharmonicForm, EigenstrainForm, ElasticityForm, HeatForm, PoissonForm,
                       assemble_foreground, reduce_system)
from .classic import assemble_classic, classic_errors, strip_enrichment
from .extraction import (build_enrichment, compute_double_extraction, compute_enriched_extraction,
                         compute_extraction)
from .manufactured import (PLATE_DOMAIN, THREE_MATERIAL_BREAKS, manufactured_data,
                           three_material_material)
from .mesh import (Circle, Mesh, build_levelset_mesh, build_midground_space,
                   build_uniform_quad_mesh, restrict_midground)
from .pointcloud import make_nodes
from .rkpm import RKPMBasis
from .solve import (DegenerateFit, elastic_error_norms, error_norms, fit_rates, has_interface,
                    interface_jump, push_forward, solve, solve_min_norm)
from .space import LagrangeSpace

STUDIES = ("poisson", "biharmonic", "plate_hole", "three_material", "inclusion")
LEVELSET_STUDIES = ("plate_hole", "inclusion")
UNIT_LADDER = (1 / 8, 1 / 16, 1 / 32, 1 / 64)
# halving sequence from the coarsest spacing 0.625 (8 base cells across the plate)
PLATE_LADDER = tuple(0.625 * 0.5**i for i in range(5))
COLUMNS = ("study", "n", "k", "fg_ratio", "refine", "h", "NP", "nu",
           "L2", "H1", "H2", "energy", "rate_L2", "rate_H1", "rate_H2")
# "h" overrides the length scale of every Nitsche penalty
PENALTY_NAMES = {
    "poisson": ("c_pen", "h"),
    "biharmonic": ("alpha", "beta", "h"),
    "three_material": ("beta_d", "gamma", "h"),
    "plate_hole": ("beta", "h"),
    "inclusion": ("beta", "h"),
}


class StudyError(RuntimeError):
    """A refinement level failed; carries the study context in its message."""


@dataclass
class StudyConfig:
    study: str = "poisson"
    n: int = 1
    fg_ratio: float = 1.0
    p_ref: int = 0
    refine_levels: int = 0
    interpolation: str = "single"
    enrich: bool = False
    classic: bool = False
    solver: str = "direct"      # direct | lstsq (minimum norm, for singular systems)
    epsilon: float = 0.5
    seed: int = 0
    levels: int = 4
    penalties: dict = field(default_factory=dict)
    threads: int = 1
    out: str | None = None

    @property
    def k(self) -> int:
        return self.n + self.p_ref

    def validate(self) -> "StudyConfig":
        if self.study not in STUDIES:
            raise ValueError(f"unknown study {self.study!r}")
        if self.n not in (1, 2):
            raise ValueError("order n must be 1 or 2")
        if self.p_ref < 0 or self.fg_ratio <= 0 or self.levels < 1:
            raise ValueError("p_ref >= 0, fg_ratio > 0 and levels >= 1 required")
        if self.solver not in ("direct", "lstsq"):
            raise ValueError("solver must be direct or lstsq")
        if self.interpolation not in ("single", "double"):
            raise ValueError("interpolation must be single or double")
        if self.interpolation == "double" and self.study not in LEVELSET_STUDIES:
            raise ValueError("double interpolation needs a level-set mesh with a midground")
        if self.refine_levels and self.study not in LEVELSET_STUDIES:
            raise ValueError("refine_levels applies to level-set studies only")
        if self.enrich and self.study not in ("three_material", "inclusion"):
            raise ValueError("enrichment needs a multi-material study")
        if self.classic and self.study not in ("poisson", "three_material"):
            raise ValueError("the classic baseline covers poisson and three_material only")
        if self.classic and (self.fg_ratio != 1.0 or self.p_ref):
            raise ValueError("fg_ratio and p_ref have no meaning for the classic baseline")
        bad = set(self.penalties) - set(PENALTY_NAMES[self.study])
        if bad:
            raise ValueError(f"unknown penalty {sorted(bad)} for {self.study}")
        if self.levels > len(self.ladder(all_levels=True)):
            raise ValueError("more levels requested than the ladder provides")
        return self

    def ladder(self, all_levels: bool = False) -> tuple:
        lad = PLATE_LADDER if self.study in LEVELSET_STUDIES else UNIT_LADDER
        return lad if all_levels else lad[: self.levels]

    def header(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, dict):
                v = ",".join(f"{a}={v[a]!r}" for a in sorted(v)) or "-"
            out.append(f"# {f.name}={v}")
        return out


# ------------------------------------------------------------------ config io
def _coerce(name: str, text: str):
    kinds = {f.name: f.type for f in fields(StudyConfig)}
    if name not in kinds:
        raise ValueError(f"unknown config key {name!r}")
    t = kinds[name]
    if name == "penalties":
        out = {}
        for item in filter(None, (s.strip() for s in text.split(","))):
            if item == "-":
                continue
            key, val = item.split("=", 1)
            out[key.strip()] = float(val)
        return out
    if t == "bool":
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{name} expects a boolean, got {text!r}")
        return text.lower() in ("true", "1", "yes")
    if t == "int":
        return int(text)
    if t == "float":
        return float(text)
    if text in ("None", ""):
        return None
    return text


def load_config(path: str | Path, **overrides) -> StudyConfig:
    """Flat ``key = value`` file (``#`` comments); keyword overrides win."""
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = _coerce(key, val)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return StudyConfig(**values).validate()


# ------------------------------------------------------------------ one level
@dataclass
class LevelResult:
    h: float
    NP: int
    nu: int
    L2: float
    H1: float = math.nan
    H2: float = math.nan
    energy: float = math.nan
    jump: float = math.nan
    seconds: float = 0.0
    mesh: Mesh | None = field(default=None, repr=False)
    values: dict | None = field(default=None, repr=False)


def _solve(cfg: StudyConfig, system):
    return solve_min_norm(system) if cfg.solver == "lstsq" else solve(system)


def _grid_nodes(cfg: StudyConfig, domain, h):
    m = int(round(domain.width / h))
    return make_nodes(m + 1, m + 1, domain, cfg.n, cfg.epsilon, cfg.seed)


def _scalar_values(space, u):
    return {"u": (space.dof_coords, u.reshape(-1, 1))}


def _poisson_like(cfg: StudyConfig, h: float, keep: bool):
    data = manufactured_data(cfg.study)
    ex = data.exact
    nodes = _grid_nodes(cfg, data.domain, h)
    basis = RKPMBasis(nodes, cfg.n)
    h_fg = h * cfg.fg_ratio
    mesh, space = build_uniform_quad_mesh(data.domain, h_fg, cfg.k)
    pen = dict(cfg.penalties)
    if cfg.study == "poisson":
        form = PoissonForm(ex.source, ex.value, pen.pop("h", nodes.avg_spacing), **pen)
        order = 1
    else:
        # biharmonic penalties scale with the foreground element size
        form = BiharmonicForm(ex.source, ex.value, ex.grad, pen.pop("h", h_fg), **pen)
        order = 2
    M = compute_extraction(basis, space)
    d = _solve(cfg, reduce_system(assemble_foreground(form, mesh, space), M))
    sol = push_forward(d, M, 1, space)
    e = error_norms(sol.u_fg, ex, space, order)
    return LevelResult(h, len(nodes), space.n_dofs, e["L2"], e["H1"], e["H2"],
                       mesh=mesh if keep else None,
                       values=_scalar_values(space, sol.u_fg) if keep else None)


def _three_material(cfg: StudyConfig, h: float, keep: bool):
    data = manufactured_data("three_material")
    ex = data.exact
    nodes = _grid_nodes(cfg, data.domain, h)
    basis = RKPMBasis(nodes, cfg.n)
    h_fg = h * cfg.fg_ratio
    pen = dict(cfg.penalties)
    if cfg.classic:
        form = HeatForm(data.params["kappa"], ex.source, ex.value, pen.pop("h", h), **pen)
        enr = strip_enrichment(nodes, THREE_MATERIAL_BREAKS, 3) if cfg.enrich else None
        kw = dict(breaks=THREE_MATERIAL_BREAKS, material_fn=three_material_material,
                  enrichment=enr)
        d = _solve(cfg, assemble_classic(form, basis, data.domain, **kw))
        e = classic_errors(basis, d, ex, data.domain, **kw)
        return LevelResult(h, len(nodes), 0, e["L2"], e["H1"])
    mesh, space = build_uniform_quad_mesh(data.domain, h_fg, cfg.k,
                                          "DG" if cfg.enrich else "CG",
                                          x_breaks=THREE_MATERIAL_BREAKS,
                                          material_fn=three_material_material)
    form = HeatForm(data.params["kappa"], ex.source, ex.value, pen.pop("h", h_fg), **pen)
    if cfg.enrich:
        M = compute_enriched_extraction(basis, space, build_enrichment(mesh, basis))
    else:
        M = compute_extraction(basis, space)
    d = _solve(cfg, reduce_system(assemble_foreground(form, mesh, space), M))
    sol = push_forward(d, M, 1, space)
    e = error_norms(sol.u_fg, ex, space, 1)
    return LevelResult(h, len(nodes), space.n_dofs, e["L2"], e["H1"],
                       mesh=mesh if keep else None,
                       values=_scalar_values(space, sol.u_fg) if keep else None)


def _classic_poisson(cfg: StudyConfig, h: float):
    data = manufactured_data("poisson")
    ex = data.exact
    nodes = _grid_nodes(cfg, data.domain, h)
    basis = RKPMBasis(nodes, cfg.n)
    pen = dict(cfg.penalties)
    form = PoissonForm(ex.source, ex.value, pen.pop("h", nodes.avg_spacing), **pen)
    d = _solve(cfg, assemble_classic(form, basis, data.domain))
    e = classic_errors(basis, d, ex, data.domain)
    return LevelResult(h, len(nodes), 0, e["L2"], e["H1"])


def _elastic(cfg: StudyConfig, h: float, keep: bool):
    data = manufactured_data(cfg.study)
    ex = data.exact
    p = data.params
    nodes = _grid_nodes(cfg, PLATE_DOMAIN, h)
    basis = RKPMBasis(nodes, cfg.n)
    nb = int(round(PLATE_DOMAIN.width / h))
    # keep the circle off base-grid vertices
    full = build_levelset_mesh(PLATE_DOMAIN, nb, nb, Circle((0.0, 0.0), p["R"] + 1e-12),
                               cfg.refine_levels)
    hn = cfg.penalties.get("h", nodes.avg_spacing)
    beta = cfg.penalties.get("beta", 10.0)
    double = cfg.interpolation == "double"
    if cfg.study == "plate_hole":
        mesh = full.restrict([1])
        space = LagrangeSpace(mesh, cfg.k, "CG")
        if double:
            mid = restrict_midground(build_midground_space(full, cfg.k, check=False), mesh)
            M = compute_double_extraction(basis, mid, space).M
        else:
            M = compute_extraction(basis, space)

        def traction(x, n, mat=None):
            return np.einsum("...ij,...j->...i", ex.stress(x), n)

        # the plate keeps the outside label 1 of the level-set mesh
        lam, mu, eps0 = (p["lam"],) * 2, (p["mu"],) * 2, ()
        form = ElasticityForm(lam, mu, hn, beta, traction=traction,
                              traction_tags=("right", "top", "hole"),
                              symmetry_tags=("left", "bottom"))
    else:
        mesh = full
        lam, mu, eps0 = p["lam"], p["mu"], (p["eps0"], 0.0)
        if cfg.enrich:
            space = LagrangeSpace(mesh, cfg.k, "DG")
            mid = build_midground_space(mesh, cfg.k) if double else None
            enr = build_enrichment(mesh, basis, mid)
            M = compute_enriched_extraction(basis, space, enr, mid)
        else:
            space = LagrangeSpace(mesh, cfg.k, "CG")
            if double:
                M = compute_double_extraction(basis, build_midground_space(mesh, cfg.k), space).M
            else:
                M = compute_extraction(basis, space)
        form = EigenstrainForm(lam, mu, hn, beta, u_bar=ex.value,
                               dirichlet_tags=("right", "top"),
                               symmetry_tags=("left", "bottom"), eps0=eps0)
    d = _solve(cfg, reduce_system(assemble_foreground(form, mesh, space), M))
    sol = push_forward(d, M, 2, space)
    e = elastic_error_norms(sol.u_fg, ex, space, lam, mu, eps0)
    jump = interface_jump(sol.u_fg, space, 2) if has_interface(mesh) else math.nan
    values = {"u": (space.dof_coords, sol.u_fg.reshape(2, -1).T)} if keep else None
    return LevelResult(h, len(nodes), space.n_dofs, e["L2"], e["H1"], math.nan, e["energy"],
                       jump, mesh=mesh if keep else None, values=values)


def run_level(cfg: StudyConfig, h: float, keep: bool = False) -> LevelResult:
    t0 = time.perf_counter()
    if cfg.study in LEVELSET_STUDIES:
        res = _elastic(cfg, h, keep)
    elif cfg.study == "three_material":
        res = _three_material(cfg, h, keep)
    elif cfg.classic:
        res = _classic_poisson(cfg, h)
    else:
        res = _poisson_like(cfg, h, keep)
    res.seconds = time.perf_counter() - t0
    return res


# ---------------------------------------------------------------------- report
@dataclass
class ConvergenceReport:
    config: StudyConfig
    rows: list
    rates: dict

    def csv_text(self) -> str:
        cfg = self.config
        buf = io.StringIO()
        for line in cfg.header():
            buf.write(line + "\n")
        buf.write(",".join(COLUMNS) + "\n")
        refine = cfg.refine_levels if cfg.study in LEVELSET_STUDIES else 0
        for i, r in enumerate(self.rows):
            last = i == len(self.rows) - 1
            vals = [cfg.study, cfg.n, 0 if cfg.classic else cfg.k,
                    _num(cfg.fg_ratio), refine, _num(r.h), r.NP, r.nu,
                    _num(r.L2), _num(r.H1), _num(r.H2), _num(r.energy)]
            for norm in ("L2", "H1", "H2"):
                vals.append(_num(self.rates.get(norm, math.nan)) if last else "")
            buf.write(",".join(str(v) for v in vals) + "\n")
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.csv_text())

    def series(self, norm: str) -> np.ndarray:
        return np.array([getattr(r, norm) for r in self.rows])

    def last_rate(self, norm: str) -> float:
        return self.rates.get(norm + "_last", math.nan)


def _num(v) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.10g}"


def rates_for(h, rows) -> dict:
    out = {}
    for norm in ("L2", "H1", "H2", "energy"):
        e = [getattr(r, norm) for r in rows]
        try:
            slope, last = fit_rates(h, e)
        except DegenerateFit:
            continue
        out[norm], out[norm + "_last"] = slope, last
    return out


def run_study(cfg: StudyConfig, log=None) -> ConvergenceReport:
    """Run every level of the ladder; a failing level raises StudyError."""
    cfg.validate()
    rows = []
    for h in cfg.ladder():
        try:
            res = run_level(cfg, h)
        except Exception as exc:       # surface the module error with study context
            raise StudyError(f"study={cfg.study} n={cfg.n} h={h:.6g}: "
                             f"{type(exc).__name__}: {exc}") from exc
        if log is not None:
            log(f"{cfg.study} h={h:.6g} NP={res.NP} nu={res.nu} L2={res.L2:.4e} "
                f"({res.seconds:.1f}s)")
        rows.append(res)
    report = ConvergenceReport(cfg, rows, rates_for([r.h for r in rows], rows))
    if cfg.out:
        report.write(cfg.out)
    return report


def config_dict(cfg: StudyConfig) -> dict:
    return asdict(cfg)
