"""Error-component sweeps, the integrated test and the channel study."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..coefficient import (DilationParams, System, TensorField, dilate_local,
                           dilate_structure_aware, wrap)
from ..decompose import (emd_sift, fit_monomials, hybrid_dilate, interior_mask, lowpass_split,
                         stretch_mode)
from ..fem import (FluxField, Mesh, NodalField, assemble, build_mesh, flux, h1_semi_error,
                   h1_semi_norm, l2_error, l2_norm, solve)
from ..homogenize import closed_form_field, tensor_table
from .config import ConfigError, ExperimentConfig
from .report import ErrorReport, format_value

__all__ = [
    "homogenized_reference",
    "solve_on",
    "relative_errors",
    "hybrid_field",
    "run_dilation_sweep",
    "run_homogenization_sweep",
    "run_discretization_sweep",
    "run_integrated_test",
    "run_channel_study",
    "solve_configured",
    "IntegratedReport",
    "ChannelReport",
]

_TABLES: dict = {}


def homogenized_reference(cfg: ExperimentConfig, system: System) -> TensorField:
    """Homogenized tensor of ``system`` as a field of ``x``.

    Closed forms are used for layered (any tilt) and channel media; the
    heterogeneous system, or ``reference = tensor-table``, goes through a
    tabulated cell-problem solve that is cached per parameter set.
    """
    if system.name == "het" or cfg.reference == "tensor-table":
        key = (system.name, tuple(sorted(system.params.items())), cfg.grid_n, cfg.cell_n)
        if key not in _TABLES:
            _TABLES[key] = tensor_table(system.field, cfg.grid_n, cfg.cell_n).as_field()
        return _TABLES[key]
    if system.name == "channel":
        return closed_form_field(system.field, "separable")
    return closed_form_field(system.field, "layered", system.params.get("theta", 0.0))


def solve_on(mesh: Mesh, A: TensorField, f, cfg: ExperimentConfig) -> NodalField:
    return solve(assemble(mesh, A, f), rel_tol=cfg.rel_tol, method=cfg.solver)


def relative_errors(u: NodalField, ref: NodalField):
    """Relative L2 and H1-seminorm distances of ``u`` from ``ref``."""
    return l2_error(u, ref) / l2_norm(ref), h1_semi_error(u, ref) / h1_semi_norm(ref)


def _aligned_n(h_target: float, n_cells: int) -> int:
    q = max(1, math.ceil(1.0 / (h_target * n_cells) - 1e-9))
    return q * n_cells


def _cells(L: float) -> int:
    try:
        return DilationParams(L).n_cells
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# error components


def run_dilation_sweep(cfg: ExperimentConfig) -> ErrorReport:
    """``u_{0,D}`` (dilated homogenized tensor) against ``u_0`` for each ``L``."""
    system = cfg.make_system()
    Abar = homogenized_reference(cfg, system)
    values = cfg.values or [0.2, 0.1, 0.05, 0.025]
    q = max(1, round(1.0 / cfg.mesh_fraction))
    report = ErrorReport("dilation", metadata=dict(system=system.name, m=cfg.m, nu=cfg.nu,
                                                   q=q, **system.params))
    for L in values:
        t0 = time.perf_counter()
        params = cfg.dilation(L=L)
        n = q * _cells(L)
        mesh = build_mesh(system.dim, n)
        u0 = solve_on(mesh, Abar, system.source, cfg)
        uD = solve_on(mesh, dilate_local(Abar, params), system.source, cfg)
        report.add(L, *relative_errors(uD, u0), time.perf_counter() - t0, n=n)
    return report


def run_homogenization_sweep(cfg: ExperimentConfig) -> ErrorReport:
    """Dilated oscillatory solution against the dilated homogenized one, per ``eps``.

    The reported parameter is the effective scale ``m * eps``.
    """
    system = cfg.make_system()
    Abar = homogenized_reference(cfg, system)
    values = cfg.values or [1 / 16, 1 / 32, 1 / 64]
    m = cfg.m
    dilated = m > 1 and cfg.method in ("local", "structure-aware")
    report = ErrorReport("homogenization", metadata=dict(system=system.name, m=m, L=cfg.L,
                                                         nu=cfg.nu, method=cfg.method,
                                                         **system.params))
    for eps in values:
        t0 = time.perf_counter()
        s = system.with_eps(eps)
        h_target = cfg.mesh_fraction * m * eps
        if dilated:
            params = cfg.dilation()
            n = _aligned_n(h_target, params.n_cells)
            A, H = dilate_local(s.coefficient(), params), dilate_local(Abar, params)
        else:
            n = math.ceil(1.0 / h_target - 1e-9)
            A, H = wrap(s.field, m * eps), Abar
        cfg.check_scale(1.0 / n, eps, m, cfg.L if dilated else None)
        mesh = build_mesh(s.dim, n)
        u = solve_on(mesh, A, s.source, cfg)
        u0 = solve_on(mesh, H, s.source, cfg)
        report.add(m * eps, *relative_errors(u, u0), time.perf_counter() - t0, n=n, eps=eps)
    return report


def run_discretization_sweep(cfg: ExperimentConfig) -> ErrorReport:
    """Dilated oscillatory problem on aligned meshes ``h = L/q`` against a fine one."""
    system = cfg.make_system()
    eps, m = system.eps, cfg.m
    params = cfg.dilation()
    cells = params.n_cells
    if cfg.method == "partial":
        A = wrap(system.field, m * eps)
    elif m > 1:
        A = dilate_local(system.coefficient(), params)
    else:
        A = system.coefficient()
    qs = [int(round(q)) for q in (cfg.values or [8, 16, 32, 64])]
    q_ref = cfg.q_ref or (64 if system.dim == 1 else 4) * max(qs)
    if any(q_ref % q for q in qs) or q_ref < 4 * max(qs):
        raise ConfigError(f"q_ref={q_ref} must be a multiple of every q and >= 4*max(q)")
    for q in qs:
        cfg.check_scale(1.0 / (q * cells), eps, m, params.L if m > 1 else None)
    t0 = time.perf_counter()
    ref = solve_on(build_mesh(system.dim, q_ref * cells), A, system.source, cfg)
    report = ErrorReport("discretization",
                         metadata=dict(system=system.name, eps=eps, m=m, L=params.L,
                                       q_ref=q_ref, ref_seconds=time.perf_counter() - t0))
    for q in qs:
        t0 = time.perf_counter()
        n = q * cells
        u = solve_on(build_mesh(system.dim, n), A, system.source, cfg)
        report.add(1.0 / n, *relative_errors(u, ref), time.perf_counter() - t0, q=q, n=n)
    return report


# ---------------------------------------------------------------------------
# hybrid dilation


def _hybrid_entry_1d(values, x, m, width, degree, threshold):
    hc = hybrid_dilate(values, m, width, degree, x=x, threshold=threshold, origin=0.0)
    return hc, hc.modes.smooth


def hybrid_field(A_eps: TensorField, m: float, eps_estimate: float, theta: float = 0.0,
                 degree: int = 3, threshold: float = 1e-3, n_samples: int = 8193,
                 n_rows: int = 33):
    """Hybrid dilation built from point samples of ``A_eps`` only.

    In 1D the whole trace goes through :func:`hybrid_dilate`. In 2D the field
    is assumed layered across ``(cos theta, -sin theta)``: the smooth part is
    fitted from rows mollified along the dominant direction of that normal,
    and the oscillatory remainder is decomposed along the segment joining the
    corners where the normal coordinate ``X1`` is smallest and largest. The
    result is ``p(x) + S(X1(x))`` per tensor entry.

    Returns
    -------
    field : TensorField
    fits : dict
        Sparse polynomial of the smooth part per entry ``(i, j)``.
    """
    d = A_eps.dim
    width = 4.0 * eps_estimate
    if d == 1:
        x = np.linspace(0.0, 1.0, n_samples)
        vals = A_eps(x)[:, 0, 0]
        hc, poly = _hybrid_entry_1d(vals, x, m, width, degree, threshold)
        return TensorField(lambda p: hc(p[:, 0]), 1, name="hybrid"), {(0, 0): poly}

    normal = np.array([math.cos(theta), -math.sin(theta)])
    along = 0 if abs(normal[0]) >= abs(normal[1]) else 1
    w = width / abs(normal[along])
    s = np.linspace(0.0, 1.0, n_samples)
    r = np.linspace(0.0, 1.0, n_rows)
    grid = np.empty((n_rows, n_samples, 2))
    grid[..., along] = s[None, :]
    grid[..., 1 - along] = r[:, None]
    pts = grid.reshape(-1, 2)
    inner = interior_mask(s, w)
    samples = A_eps(pts).reshape(n_rows, n_samples, 2, 2)

    corners = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    X = corners @ normal
    c_lo, c_hi = corners[np.argmin(X)], corners[np.argmax(X)]
    X1 = np.linspace(X.min(), X.max(), n_samples)
    seg = c_lo + np.linspace(0.0, 1.0, n_samples)[:, None] * (c_hi - c_lo)
    seg_vals = A_eps(seg)
    origin = 0.0 if X1[0] <= 0.0 <= X1[-1] else X1[0]

    polys, stretched = {}, {}
    for i in range(2):
        for j in range(i, 2):
            rows = samples[..., i, j]
            smooth = np.stack([lowpass_split(row, w, x=s)[0] for row in rows])
            keep = np.broadcast_to(inner[None, :], smooth.shape).ravel()
            poly = fit_monomials(smooth.ravel()[keep], degree, threshold, x=pts[keep])
            polys[(i, j)] = poly
            rest = seg_vals[:, i, j] - poly(seg)
            imfs, remainder = emd_sift(rest, x=X1)
            total = remainder.copy()
            for imf in imfs:
                total += stretch_mode(imf, m, x=X1, origin=origin)
            stretched[(i, j)] = total

    def func(x):
        xn = x @ normal
        out = np.empty((len(x), 2, 2))
        for (i, j), poly in polys.items():
            out[:, i, j] = poly(x) + np.interp(xn, X1, stretched[(i, j)])
            out[:, j, i] = out[:, i, j]
        return out

    return TensorField(func, 2, name="hybrid"), polys


# ---------------------------------------------------------------------------
# integrated test


@dataclass
class IntegratedReport:
    """Per-method error reports against ``m`` plus error-budget rows."""

    reports: dict = field(default_factory=dict)
    budget: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def ratio(self, a: str, b: str) -> np.ndarray:
        return self.reports[a].l2 / self.reports[b].l2

    def __str__(self):
        return "\n".join(str(r) for r in self.reports.values())


def run_integrated_test(cfg: ExperimentConfig) -> IntegratedReport:
    """Local (for each ``L`` rule), partial and hybrid dilation against ``u_0`` over ``m``.

    Each row is measured on a fine mesh refining the test mesh, where the
    homogenized solution ``u_0`` and, for local dilation, the dilated
    oscillatory and dilated homogenized solutions are also computed, so the
    three error components add up by the triangle inequality.
    """
    system = cfg.make_system()
    eps, dim = system.eps, system.dim
    Aeps = system.coefficient()
    Abar = homogenized_reference(cfg, system)
    f = system.source
    frac = cfg.mesh_fraction if cfg.mesh_rule == "meps" else 1 / 6.5
    cap = 1 << 15 if dim == 1 else 512
    theta = system.params.get("theta", 0.0)
    hybrid_ok = system.name == "layered"
    out = IntegratedReport(metadata=dict(system=system.name, eps=eps, nu=cfg.nu,
                                         fraction=frac, **system.params))
    u0_cache = {}

    def u0_on(nf):
        if nf not in u0_cache:
            u0_cache[nf] = solve_on(build_mesh(dim, nf), Abar, f, cfg)
        return u0_cache[nf]

    def fine_n(n):
        k = max(2, math.ceil(cap / n)) if dim == 1 else max(1, cap // n)
        return n * k

    def report(name):
        if name not in out.reports:
            out.reports[name] = ErrorReport(name, metadata=dict(out.metadata))
        return out.reports[name]

    for m in cfg.m_values:
        me = m * eps
        h_target = frac * me
        for fac in cfg.L_factors:
            t0 = time.perf_counter()
            L = 1.0 / max(1, round(1.0 / (fac * me)))
            params = DilationParams(L, m, cfg.nu)
            q = max(1, round(L / h_target))
            n = q * params.n_cells
            cfg.check_scale(1.0 / n, eps, m, L)
            AD = dilate_local(Aeps, params)
            uh = solve_on(build_mesh(dim, n), AD, f, cfg)
            nf = fine_n(n)
            mesh_f = build_mesh(dim, nf)
            u0 = u0_on(nf)
            uD = solve_on(mesh_f, AD, f, cfg)
            u0D = solve_on(mesh_f, dilate_local(Abar, params), f, cfg)
            norm0 = l2_norm(u0)
            comps = dict(disc=l2_error(uh, uD) / norm0, homog=l2_error(uD, u0D) / norm0,
                         dilation=l2_error(u0D, u0) / norm0)
            l2, h1 = relative_errors(uh, u0)
            report(f"local_L{fac:g}").add(m, l2, h1, time.perf_counter() - t0, L=L, n=n,
                                           n_fine=nf, **comps)
            out.budget.append(dict(m=m, L=L, total=l2, **comps))

        n = max(2, math.ceil(1.0 / h_target - 1e-9))
        mesh = build_mesh(dim, n)
        nf = fine_n(n)
        t0 = time.perf_counter()
        up = solve_on(mesh, wrap(system.field, me), f, cfg)
        report("partial").add(m, *relative_errors(up, u0_on(nf)), time.perf_counter() - t0,
                              n=n, n_fine=nf)
        if hybrid_ok:
            t0 = time.perf_counter()
            Ahyb, fits = hybrid_field(Aeps, m, eps, theta)
            uhy = solve_on(mesh, Ahyb, f, cfg)
            report("hybrid").add(m, *relative_errors(uhy, u0_on(nf)), time.perf_counter() - t0,
                                 n=n, n_fine=nf)
            out.fits[m] = {k: p.terms() for k, p in fits.items()}
    return out


# ---------------------------------------------------------------------------
# channel study


@dataclass
class ChannelReport:
    """u- and e1-flux errors of naive and structure-aware dilation."""

    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        cols = ["variable", "m", "L", "u_naive", "u_aware", "flux_naive", "flux_aware",
                "seconds"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                vals = [r["variable"]] + [format_value(r[c]) for c in cols[1:]]
                fh.write(",".join(vals) + "\n")

    def __str__(self):
        lines = ["channel: variable m L u_naive u_aware flux_naive flux_aware"]
        for r in self.rows:
            lines.append(f"  {r['variable']} {r['m']:g} {r['L']:.4g} {r['u_naive']:.4e} "
                         f"{r['u_aware']:.4e} {r['flux_naive']:.4e} {r['flux_aware']:.4e}")
        return "\n".join(lines)


def _flux_error(F: FluxField, ref: FluxField, component: int = 0) -> float:
    area = F.mesh.area
    diff = F.component(component) - ref.component(component)
    return math.sqrt(np.sum(area * diff ** 2) / np.sum(area * ref.component(component) ** 2))


def run_channel_study(cfg: ExperimentConfig, keep_fields: bool = False) -> ChannelReport:
    """Naive against structure-aware dilation of the channel system.

    Sweeps ``m`` at the configured ``L`` and ``L`` at the configured ``m``;
    errors are relative to the homogenized solution and its flux.
    """
    system = cfg.make_system()
    if system.structure is None:
        raise ConfigError("the channel study needs a system with a structure component")
    eps = system.eps
    Abar = homogenized_reference(cfg, system)
    n = cfg.mesh_n
    mesh = build_mesh(2, n)
    u0 = solve_on(mesh, Abar, system.source, cfg)
    v0 = flux(u0, Abar)
    report = ChannelReport(metadata=dict(n=n, **system.params, eps=eps))
    if keep_fields:
        report.fields["reference"] = (u0, v0)
    m_values = cfg.m_values
    L_values = cfg.L_values or [1 / 4, 1 / 6, 1 / 8]
    cases = [("m", m, cfg.L) for m in m_values] + [("L", cfg.m, L) for L in L_values]
    for variable, m, L in cases:
        t0 = time.perf_counter()
        params = DilationParams(L, m, cfg.nu)
        if n % params.n_cells:
            raise ConfigError(f"mesh n={n} is not aligned with L={L:g}")
        cfg.check_scale(1.0 / n, eps, m, L)
        naive = dilate_local(system.coefficient(), params)
        aware = dilate_structure_aware(system.structured(), params)
        un = solve_on(mesh, naive, system.source, cfg)
        ua = solve_on(mesh, aware, system.source, cfg)
        fn, fa = flux(un, naive), flux(ua, aware)
        norm0 = l2_norm(u0)
        report.rows.append(dict(
            variable=variable, m=m, L=L,
            u_naive=l2_error(un, u0) / norm0, u_aware=l2_error(ua, u0) / norm0,
            flux_naive=_flux_error(fn, v0), flux_aware=_flux_error(fa, v0),
            seconds=time.perf_counter() - t0))
        if keep_fields:
            report.fields[(variable, m, L)] = (un, fn, ua, fa)
    return report


# ---------------------------------------------------------------------------
# single solve


def configured_coefficient(cfg: ExperimentConfig, system: System) -> TensorField:
    """The coefficient selected by ``cfg.method``."""
    eps, m = system.eps, cfg.m
    if cfg.method == "none":
        return system.coefficient()
    if cfg.method == "local":
        return dilate_local(system.coefficient(), cfg.dilation())
    if cfg.method == "partial":
        return wrap(system.field, m * eps)
    if cfg.method == "structure-aware":
        return dilate_structure_aware(system.structured(), cfg.dilation())
    theta = system.params.get("theta", 0.0)
    return hybrid_field(system.coefficient(), m, eps, theta)[0]


def configured_mesh_n(cfg: ExperimentConfig, system: System) -> int:
    aligned = cfg.method in ("local", "structure-aware")
    if cfg.mesh_rule == "n":
        n = cfg.mesh_n
    elif cfg.mesh_rule == "L":
        n = max(1, round(1.0 / cfg.mesh_fraction)) * _cells(cfg.L)
        aligned = False
    else:
        h = cfg.mesh_fraction * cfg.m * system.eps
        n = _aligned_n(h, _cells(cfg.L)) if aligned else math.ceil(1.0 / h - 1e-9)
        aligned = False
    if aligned and n % _cells(cfg.L):
        raise ConfigError(f"mesh n={n} is not aligned with L={cfg.L:g}")
    return n


def solve_configured(cfg: ExperimentConfig):
    """Solve the configured problem; returns ``(u, A)``."""
    system = cfg.make_system()
    A = configured_coefficient(cfg, system)
    n = configured_mesh_n(cfg, system)
    L = cfg.L if cfg.method in ("local", "structure-aware") else None
    if cfg.method != "none":
        cfg.check_scale(1.0 / n, system.eps, cfg.m, L)
    u = solve_on(build_mesh(system.dim, n), A, system.source, cfg)
    return u, A
