"""Declarative experiment descriptions: the flat sectioned config format, the
named scenario registry, and CSV/snapshot emission."""

import hashlib
import math
import os
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .grids import Field, Grid, write_snapshot
from .kernels import Kernel, KernelError, discretize
from .media import Medium, MediumError, classify
from .solver import Probes, SolverConfig, run


class ConfigError(ValueError):
    """A scenario file or spec failed validation; carries a location hint."""

    def __init__(self, message, line=None, field=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field {field}")
        super().__init__(f"{message}" + (f" ({', '.join(loc)})" if loc else ""))
        self.line = line
        self.field = field


# ---------------------------------------------------------------------------
# scenario description


@dataclass
class KernelSpec:
    family: str
    params: dict
    trunc_tol: float = 1e-12
    renormalize: bool = True


@dataclass
class MediumSpec:
    family: str
    params: dict


@dataclass
class GridSpec:
    dim: int
    half_extent: float
    points_per_axis: int


@dataclass
class InitialSpec:
    family: str
    params: dict
    truncate_radius: float | None = None


@dataclass
class OutputSpec:
    directory: str = "out"
    csv: str = "diagnostics.csv"
    snapshots: str = "none"    # none | last | all


@dataclass
class ProbeSpec:
    lp_p: float = 2.0
    lp_radius: float | None = None
    dist_target: str = "auto"  # auto | e_rho | zero


@dataclass
class Scenario:
    name: str
    kernel: KernelSpec
    medium: MediumSpec
    grid: GridSpec
    initial: InitialSpec
    solver: SolverConfig
    outputs: OutputSpec = dc_field(default_factory=OutputSpec)
    probes: ProbeSpec = dc_field(default_factory=ProbeSpec)
    asserted: bool = True   # exploratory scenarios carry no acceptance claims


# ---------------------------------------------------------------------------
# construction of domain objects from specs

_KERNEL_PARAMS = {
    "gaussian": ("sigma",),
    "laplace": ("scale",),
    "uniform-ball": ("radius",),
    "tabulated": ("radii", "values"),
}

_MEDIUM_PARAMS = {
    "constant": ("value",),
    "power-decay": ("amplitude", "exponent"),
    "gaussian-decay": ("amplitude", "sigma"),
    "exponential-decay": ("amplitude", "scale"),
}

_INITIAL_PARAMS = {
    "constant": ("value",),
    "gaussian-bump": ("height", "width"),
    "indicator": ("radius", "value"),
    "quadratic": ("power",),
    "table": ("radii", "values"),
}


def _check_params(kind, family, params, table):
    if family not in table:
        raise ConfigError(f"unknown {kind} family {family!r}", field=f"{kind}.family")
    allowed = set(table[family])
    given = set(params)
    missing = allowed - given
    extra = given - allowed
    if family == "indicator":
        missing -= {"value"}
    if family == "quadratic":
        missing -= {"power"}
    if missing:
        raise ConfigError(f"{kind} family {family!r} missing parameter(s) "
                          f"{sorted(missing)}", field=kind)
    if extra:
        raise ConfigError(f"{kind} family {family!r} does not take {sorted(extra)}",
                          field=kind)


def build_kernel(spec, dim):
    _check_params("kernel", spec.family, spec.params, _KERNEL_PARAMS)
    p = spec.params
    try:
        if spec.family == "gaussian":
            return Kernel.gaussian(p["sigma"], dim)
        if spec.family == "laplace":
            return Kernel.laplace(p["scale"], dim)
        if spec.family == "uniform-ball":
            return Kernel.uniform_ball(p["radius"], dim)
        return Kernel.tabulated(p["radii"], p["values"], dim)
    except KernelError as exc:
        raise ConfigError(str(exc), field="kernel") from exc


def build_medium(spec, dim):
    _check_params("medium", spec.family, spec.params, _MEDIUM_PARAMS)
    p = spec.params
    try:
        if spec.family == "constant":
            return Medium.constant(p["value"], dim)
        if spec.family == "power-decay":
            return Medium.power_decay(p["amplitude"], p["exponent"], dim)
        if spec.family == "gaussian-decay":
            return Medium.gaussian_decay(p["amplitude"], p["sigma"], dim)
        return Medium.exponential_decay(p["amplitude"], p["scale"], dim)
    except MediumError as exc:
        raise ConfigError(str(exc), field="medium") from exc


def build_grid(spec):
    return Grid(spec.dim, spec.half_extent, spec.points_per_axis)


def build_initial(spec, grid):
    _check_params("initial", spec.family, spec.params, _INITIAL_PARAMS)
    p = spec.params
    r = grid.radius()
    if spec.family == "constant":
        vals = np.full(grid.shape, float(p["value"]))
    elif spec.family == "gaussian-bump":
        vals = p["height"] * np.exp(-0.5 * (r / p["width"]) ** 2)
    elif spec.family == "indicator":
        vals = np.where(r <= p["radius"] * (1 + 1e-12),
                        float(p.get("value", 1.0)), 0.0)
    elif spec.family == "quadratic":
        vals = (1.0 + r * r) ** float(p.get("power", 1.0))
    else:
        vals = np.interp(r, np.asarray(p["radii"], dtype=float),
                         np.asarray(p["values"], dtype=float))
    if spec.truncate_radius is not None:
        vals = np.where(r <= spec.truncate_radius * (1 + 1e-12), vals, 0.0)
    return Field(grid, vals, copy=False)


def build_stencil(spec, grid):
    kern = build_kernel(spec, grid.dim)
    policy = "renormalize" if spec.renormalize else "raw"
    try:
        return discretize(kern, grid.spacing, policy=policy, trunc_tol=spec.trunc_tol)
    except KernelError as exc:
        raise ConfigError(str(exc), field="kernel") from exc


def validate_scenario(sc):
    """Cross-field validation; raises ConfigError on the first failure."""
    try:
        grid = build_grid(sc.grid)
    except Exception as exc:
        raise ConfigError(str(exc), field="grid") from exc
    kern = build_kernel(sc.kernel, grid.dim)
    medium = build_medium(sc.medium, grid.dim)
    try:
        sc.solver.validate()
    except Exception as exc:
        raise ConfigError(str(exc), field="solver") from exc
    R = kern.truncation_radius(sc.kernel.trunc_tol)
    if R > 2.0 * grid.half_extent:
        raise ConfigError(
            f"stencil truncation radius {R:.3g} exceeds the grid size 2L="
            f"{2 * grid.half_extent:g}", field="kernel")
    if sc.solver.boundary == "mask" and sc.solver.mask_radius > grid.half_extent:
        raise ConfigError("mask_radius exceeds the grid half extent", field="solver")
    if sc.probes.dist_target == "e_rho" and classify(medium).integrable is not True:
        raise ConfigError("E_rho undefined: the medium is not integrable",
                          field="probes.dist_target")
    if sc.probes.lp_radius is not None and sc.probes.lp_radius > grid.half_extent:
        raise ConfigError("lp_radius exceeds the grid half extent", field="probes")
    return grid, kern, medium


# ---------------------------------------------------------------------------
# flat sectioned text format

_SECTIONS = ("scenario", "kernel", "medium", "grid", "initial", "solver",
             "outputs", "probes")

_SECTION_KEYS = {
    "scenario": {"name", "asserted"},
    "kernel": {"family", "sigma", "scale", "radius", "radii", "values",
               "trunc_tol", "renormalize"},
    "medium": {"family", "value", "amplitude", "exponent", "sigma", "scale"},
    "grid": {"dim", "half_extent", "points_per_axis"},
    "initial": {"family", "value", "height", "width", "radius", "power",
                "radii", "values", "truncate_radius"},
    "solver": {"scheme", "dt", "t_end", "boundary", "mask_radius",
               "snapshot_every", "floor_alpha", "picard_tol"},
    "outputs": {"directory", "csv", "snapshots"},
    "probes": {"lp_p", "lp_radius", "dist_target"},
}

_STRING_KEYS = {"name", "family", "scheme", "boundary", "directory", "csv",
                "snapshots", "dist_target"}
_BOOL_KEYS = {"renormalize", "asserted"}
_INT_KEYS = {"dim", "points_per_axis", "snapshot_every"}
_LIST_KEYS = {"radii", "values"}


def _parse_value(key, raw, line_no):
    raw = raw.strip()
    if key in _STRING_KEYS:
        return raw
    if key in _BOOL_KEYS:
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"expected a boolean for {key!r}, got {raw!r}", line=line_no)
    if key in _LIST_KEYS:
        try:
            return [float(tok) for tok in raw.split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad number list for {key!r}: {raw!r}",
                              line=line_no) from exc
    try:
        if key in _INT_KEYS:
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad number for {key!r}: {raw!r}", line=line_no) from exc


def parse_scenario_text(text, name_hint="scenario"):
    """Parse the flat sectioned key-value format into a validated Scenario.

    Unknown sections and keys are errors; duplicate keys name the offending
    line. No silent defaults exist for physics-bearing fields.
    """
    sections: dict[str, dict] = {}
    current = None
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current not in _SECTIONS:
                raise ConfigError(f"unknown section [{current}]", line=line_no)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", line=line_no)
            sections[current] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}", line=line_no)
        if current is None:
            raise ConfigError("key outside of any section", line=line_no)
        key, raw_val = (part.strip() for part in line.split("=", 1))
        if key not in _SECTION_KEYS[current]:
            raise ConfigError(f"unknown key {key!r} in section [{current}]",
                              line=line_no)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r} in section [{current}]",
                              line=line_no)
        sections[current][key] = _parse_value(key, raw_val, line_no)

    for required in ("kernel", "medium", "grid", "initial", "solver"):
        if required not in sections:
            raise ConfigError(f"missing section [{required}]")

    def split_family(section, kind):
        data = dict(sections[section])
        if "family" not in data:
            raise ConfigError(f"section [{section}] needs a family", field=kind)
        fam = data.pop("family")
        return fam, data

    kern_data = dict(sections["kernel"])
    fam = kern_data.pop("family", None)
    if fam is None:
        raise ConfigError("section [kernel] needs a family", field="kernel")
    trunc_tol = kern_data.pop("trunc_tol", 1e-12)
    renorm = kern_data.pop("renormalize", True)
    kernel = KernelSpec(fam, kern_data, trunc_tol, renorm)

    med_fam, med_params = split_family("medium", "medium")
    medium = MediumSpec(med_fam, med_params)

    g = sections["grid"]
    for key in ("dim", "half_extent", "points_per_axis"):
        if key not in g:
            raise ConfigError(f"section [grid] needs {key}", field="grid")
    grid = GridSpec(g["dim"], g["half_extent"], g["points_per_axis"])

    init_data = dict(sections["initial"])
    ifam = init_data.pop("family", None)
    if ifam is None:
        raise ConfigError("section [initial] needs a family", field="initial")
    trunc_r = init_data.pop("truncate_radius", None)
    initial = InitialSpec(ifam, init_data, trunc_r)

    s = dict(sections["solver"])
    solver = SolverConfig(
        scheme=s.get("scheme", "exponential"),
        dt=s.get("dt", 0.1),
        t_end=s.get("t_end", 1.0),
        boundary=s.get("boundary", "zero-extend"),
        mask_radius=s.get("mask_radius"),
        snapshot_every=s.get("snapshot_every", 1),
        floor_alpha=s.get("floor_alpha"),
        picard_tol=s.get("picard_tol", 1e-10),
    )

    out = sections.get("outputs", {})
    outputs = OutputSpec(out.get("directory", "out"),
                         out.get("csv", "diagnostics.csv"),
                         out.get("snapshots", "none"))
    if outputs.snapshots not in ("none", "last", "all"):
        raise ConfigError(f"outputs.snapshots must be none|last|all, got "
                          f"{outputs.snapshots!r}", field="outputs")

    pr = sections.get("probes", {})
    probes = ProbeSpec(pr.get("lp_p", 2.0), pr.get("lp_radius"),
                       pr.get("dist_target", "auto"))
    if probes.dist_target not in ("auto", "e_rho", "zero"):
        raise ConfigError(f"probes.dist_target must be auto|e_rho|zero",
                          field="probes")

    meta = sections.get("scenario", {})
    sc = Scenario(meta.get("name", name_hint), kernel, medium, grid, initial,
                  solver, outputs, probes, asserted=meta.get("asserted", True))
    validate_scenario(sc)
    return sc


def parse_scenario(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    stem = os.path.splitext(os.path.basename(path))[0]
    return parse_scenario_text(text, name_hint=stem)


def _format_value(key, value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_scenario(sc):
    """Canonical text form; parse(emit(s)) is structurally equal to s."""
    lines = ["[scenario]", f"name = {sc.name}",
             f"asserted = {_format_value('asserted', sc.asserted)}", ""]
    lines.append("[kernel]")
    lines.append(f"family = {sc.kernel.family}")
    for k, v in sc.kernel.params.items():
        lines.append(f"{k} = {_format_value(k, v)}")
    lines.append(f"trunc_tol = {_format_value('trunc_tol', sc.kernel.trunc_tol)}")
    lines.append(f"renormalize = {_format_value('renormalize', sc.kernel.renormalize)}")
    lines.append("")
    lines.append("[medium]")
    lines.append(f"family = {sc.medium.family}")
    for k, v in sc.medium.params.items():
        lines.append(f"{k} = {_format_value(k, v)}")
    lines.append("")
    lines.append("[grid]")
    lines.append(f"dim = {sc.grid.dim}")
    lines.append(f"half_extent = {_format_value('half_extent', sc.grid.half_extent)}")
    lines.append(f"points_per_axis = {sc.grid.points_per_axis}")
    lines.append("")
    lines.append("[initial]")
    lines.append(f"family = {sc.initial.family}")
    for k, v in sc.initial.params.items():
        lines.append(f"{k} = {_format_value(k, v)}")
    if sc.initial.truncate_radius is not None:
        lines.append(f"truncate_radius = "
                     f"{_format_value('truncate_radius', sc.initial.truncate_radius)}")
    lines.append("")
    lines.append("[solver]")
    lines.append(f"scheme = {sc.solver.scheme}")
    lines.append(f"dt = {_format_value('dt', sc.solver.dt)}")
    lines.append(f"t_end = {_format_value('t_end', sc.solver.t_end)}")
    lines.append(f"boundary = {sc.solver.boundary}")
    if sc.solver.mask_radius is not None:
        lines.append(f"mask_radius = {_format_value('mask_radius', sc.solver.mask_radius)}")
    lines.append(f"snapshot_every = {sc.solver.snapshot_every}")
    if sc.solver.floor_alpha is not None:
        lines.append(f"floor_alpha = {_format_value('floor_alpha', sc.solver.floor_alpha)}")
    lines.append(f"picard_tol = {_format_value('picard_tol', sc.solver.picard_tol)}")
    lines.append("")
    lines.append("[outputs]")
    lines.append(f"directory = {sc.outputs.directory}")
    lines.append(f"csv = {sc.outputs.csv}")
    lines.append(f"snapshots = {sc.outputs.snapshots}")
    lines.append("")
    lines.append("[probes]")
    lines.append(f"lp_p = {_format_value('lp_p', sc.probes.lp_p)}")
    if sc.probes.lp_radius is not None:
        lines.append(f"lp_radius = {_format_value('lp_radius', sc.probes.lp_radius)}")
    lines.append(f"dist_target = {sc.probes.dist_target}")
    lines.append("")
    return "\n".join(lines)


def config_hash(sc):
    return hashlib.sha256(emit_scenario(sc).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# named scenario registry (one per headline result)


def registry():
    """Built-in scenarios, one per headline long-time result."""
    scenarios = {}

    scenarios["existence-uniqueness"] = Scenario(
        name="existence-uniqueness",
        kernel=KernelSpec("gaussian", {"sigma": 1.0}, trunc_tol=1e-8),
        medium=MediumSpec("power-decay", {"amplitude": 1.0, "exponent": 2.0}),
        grid=GridSpec(1, 5.0, 41),
        initial=InitialSpec("gaussian-bump", {"height": 1.0, "width": 0.7}),
        solver=SolverConfig(scheme="picard-oracle", dt=1e-3, t_end=1.0,
                            boundary="zero-extend", snapshot_every=1,
                            floor_alpha=0.3),
        outputs=OutputSpec("out/existence-uniqueness"),
        probes=ProbeSpec(lp_radius=2.0),
    )

    scenarios["isothermalization"] = Scenario(
        name="isothermalization",
        kernel=KernelSpec("gaussian", {"sigma": 2.0}),
        medium=MediumSpec("power-decay", {"amplitude": 1.0, "exponent": 2.0}),
        grid=GridSpec(1, 50.0, 801),
        initial=InitialSpec("gaussian-bump", {"height": 1.0, "width": 2.0}),
        solver=SolverConfig(scheme="exponential", dt=0.25, t_end=500.0,
                            boundary="mask", mask_radius=50.0,
                            snapshot_every=80),
        outputs=OutputSpec("out/isothermalization"),
        probes=ProbeSpec(lp_radius=5.0),
    )

    scenarios["flux-decay"] = Scenario(
        name="flux-decay",
        kernel=KernelSpec("gaussian", {"sigma": 1.0}),
        medium=MediumSpec("constant", {"value": 1.0}),
        grid=GridSpec(1, 25.0, 501),
        initial=InitialSpec("gaussian-bump", {"height": 1.0, "width": 1.0}),
        solver=SolverConfig(scheme="exponential", dt=0.1, t_end=30.0,
                            boundary="mask", mask_radius=20.0,
                            snapshot_every=10),
        outputs=OutputSpec("out/flux-decay"),
        probes=ProbeSpec(lp_radius=5.0),
    )

    scenarios["quadratic-growth"] = Scenario(
        name="quadratic-growth",
        kernel=KernelSpec("gaussian", {"sigma": 1.0}),
        medium=MediumSpec("power-decay", {"amplitude": 1.0, "exponent": 2.0}),
        grid=GridSpec(1, 30.0, 601),
        initial=InitialSpec("quadratic", {"power": 1.0}, truncate_radius=12.0),
        solver=SolverConfig(scheme="exponential", dt=0.2, t_end=50.0,
                            boundary="zero-extend", snapshot_every=25,
                            floor_alpha=2.0 ** -12),
        outputs=OutputSpec("out/quadratic-growth"),
        probes=ProbeSpec(lp_radius=5.0),
    )

    scenarios["unbounded-isothermalization"] = Scenario(
        name="unbounded-isothermalization",
        kernel=KernelSpec("gaussian", {"sigma": 1.0}),
        medium=MediumSpec("power-decay", {"amplitude": 1.0, "exponent": 2.0}),
        grid=GridSpec(1, 30.0, 601),
        initial=InitialSpec("quadratic", {"power": 0.4}, truncate_radius=12.0),
        solver=SolverConfig(scheme="exponential", dt=0.2, t_end=200.0,
                            boundary="mask", mask_radius=30.0,
                            snapshot_every=50),
        outputs=OutputSpec("out/unbounded-isothermalization"),
        probes=ProbeSpec(lp_radius=5.0),
    )

    scenarios["infinite-isothermalization"] = Scenario(
        name="infinite-isothermalization",
        kernel=KernelSpec("gaussian", {"sigma": 1.0}),
        medium=MediumSpec("power-decay", {"amplitude": 1.0, "exponent": 2.0}),
        grid=GridSpec(1, 30.0, 601),
        initial=InitialSpec("quadratic", {"power": 1.0}, truncate_radius=14.0),
        solver=SolverConfig(scheme="exponential", dt=0.2, t_end=300.0,
                            boundary="zero-extend", snapshot_every=50),
        outputs=OutputSpec("out/infinite-isothermalization"),
        probes=ProbeSpec(lp_radius=5.0),
    )

    scenarios["open-problem-explore"] = Scenario(
        name="open-problem-explore",
        kernel=KernelSpec("gaussian", {"sigma": 1.0}),
        medium=MediumSpec("constant", {"value": 1.0}),
        grid=GridSpec(1, 30.0, 601),
        initial=InitialSpec("quadratic", {"power": 1.0}, truncate_radius=20.0),
        solver=SolverConfig(scheme="exponential", dt=0.2, t_end=50.0,
                            boundary="zero-extend", snapshot_every=25),
        outputs=OutputSpec("out/open-problem-explore"),
        probes=ProbeSpec(lp_radius=5.0, dist_target="zero"),
        asserted=False,
    )

    for sc in scenarios.values():
        validate_scenario(sc)
    return scenarios


# ---------------------------------------------------------------------------
# execution + emission

CSV_COLUMNS = ("t", "mass", "lyapunov_F", "sup_u", "inf_u", "dist_L1rho_to_E",
               "lp_local_p", "lp_local_val", "u_at_origin")


def _csv_text(sc, traj, medium):
    cls = classify(medium)
    floor_txt = ("none" if cls.decay_floor is None
                 else f"({cls.decay_floor[0]!r},{cls.decay_floor[1]!r})")
    mass_txt = "inf" if cls.total_mass in (None, math.inf) else repr(cls.total_mass)
    lines = [
        "# isoflow diagnostics v1",
        f"# scenario = {sc.name}",
        f"# config_sha256 = {config_hash(sc)}",
        f"# medium: family={sc.medium.family} integrable={cls.integrable} "
        f"total_mass={mass_txt} decay_floor={floor_txt}",
        ",".join(CSV_COLUMNS),
    ]
    for rec in traj.diagnostics:
        row = (rec.t, rec.mass, rec.lyapunov_F, rec.sup_u, rec.inf_u,
               rec.dist_L1rho, rec.lp_local_p, rec.lp_local_val, rec.u_at_origin)
        lines.append(",".join(format(v, ".17g") for v in row))
    return "\n".join(lines) + "\n"


def run_scenario(sc, out_dir=None):
    """Execute a scenario and emit its CSV (and snapshots, if requested).

    Returns (trajectory, csv_path).
    """
    grid, _, medium = validate_scenario(sc)
    stencil = build_stencil(sc.kernel, grid)
    u0 = build_initial(sc.initial, grid)
    probes = Probes(sc.probes.lp_p, sc.probes.lp_radius, sc.probes.dist_target)
    traj = run(u0, medium, stencil, sc.solver, probes)

    directory = out_dir or sc.outputs.directory
    os.makedirs(directory, exist_ok=True)
    csv_path = os.path.join(directory, sc.outputs.csv)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(_csv_text(sc, traj, medium))
    if sc.outputs.snapshots == "last":
        t, u = traj.snapshots[-1]
        write_snapshot(os.path.join(directory, "snapshot_final.isof"), u, t)
    elif sc.outputs.snapshots == "all":
        for i, (t, u) in enumerate(traj.snapshots):
            write_snapshot(os.path.join(directory, f"snapshot_{i:05d}.isof"), u, t)
    return traj, csv_path


def with_param(sc, dotted_key, value):
    """Scenario copy with one overridden solver/probe parameter."""
    key = dotted_key.split(".")[-1]
    if hasattr(sc.solver, key):
        return replace(sc, solver=replace(sc.solver, **{key: value}))
    if hasattr(sc.probes, key):
        return replace(sc, probes=replace(sc.probes, **{key: value}))
    raise ConfigError(f"cannot sweep unknown parameter {dotted_key!r}")
