"""Experiment drivers: epsilon sweeps, decoupling, and the per-module reports.

Independent runs (one per epsilon) go through :func:`map_runs`, which uses a
process pool when ``SEMISCATTER_WORKERS`` asks for more than one worker.
Results are reduced in input order, so reports do not depend on the worker
count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from functools import partial

import numpy as np

from . import conventions
from .classical import classical_scatter, flow_from_initial, flow_from_minus_infinity, hessian_along
from .config import ExperimentConfig, PacketConfig, gaussian_profile
from .envelope import (
    EnvelopeProblem,
    envelope_solve,
    evolve,
    integrated_law_residual,
    momentum_norm,
)
from .numerics import ComplexField, TimeMesh, UniformGrid, fit_power_law, l2_norm
from .potential import morawetz_threshold, morawetz_weight, nested_riemann_C
from .quadratic import dispersion_rate, riccati_solve
from .report import Report
from .semiclassical import (
    SemiclassicalProblem,
    error_sup,
    interpolate_separable,
    lab_problem,
    packet_to_lab,
    reconstruct,
    to_moving_frame,
)

WORKERS_ENV = "SEMISCATTER_WORKERS"


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def map_runs(fn, items):
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _grid(cfg: ExperimentConfig) -> UniformGrid:
    return UniformGrid(cfg.dim, float(cfg.grid.L), int(cfg.grid.N))


# --------------------------------------------------------------------------
# convergence sweep


def convergence_problem(cfg: ExperimentConfig, eps: float) -> SemiclassicalProblem:
    pk = cfg.packets[0]
    T, end = cfg.time.T, cfg.time.end
    traj = flow_from_minus_infinity(cfg.potential, pk.q, pk.p, T, tol=cfg.tolerances.ode, t_end=end,
                                    n_samples=max(801, cfg.time.n_samples))
    u_minus = gaussian_profile(pk, _grid(cfg))
    lam = cfg.options.get("envelope_lam")
    return SemiclassicalProblem(eps, cfg.alpha_value, cfg.sigma, cfg.potential, traj, u_minus,
                                cfg.time.dt, envelope_lam=lam)


def converge_single(cfg: ExperimentConfig, eps: float) -> dict:
    prob = convergence_problem(cfg, eps)
    mesh = TimeMesh.uniform(-cfg.time.T, cfg.time.end, cfg.time.dt, cfg.time.n_samples)
    rep = error_sup(prob, mesh, cfg.hash())
    reasons = []
    if rep.initial_phase_defect > cfg.tolerances.init_phase:
        reasons.append(f"initial phase defect {rep.initial_phase_defect:.3g} above {cfg.tolerances.init_phase}")
    worst_mass = max(rep.mass_drift.values())
    if worst_mass > 1e-12:
        reasons.append(f"mass drift {worst_mass:.3g} above 1e-12")
    return {
        "eps": eps,
        "sup_error": rep.sup,
        "times": rep.times.tolist(),
        "errors": rep.errors.tolist(),
        "initial_phase_defect": rep.initial_phase_defect,
        "mass_drift": worst_mass,
        "certified": not reasons,
        "reasons": reasons,
    }


def _slope_targets(cfg, fit, targets):
    tg = cfg.targets
    if tg.slope is not None:
        targets["slope_in_range"] = fit is not None and abs(fit.slope - tg.slope) <= tg.slope_tol
    if tg.min_slope is not None:
        targets["slope_at_least"] = fit is not None and fit.slope >= tg.min_slope


def run_convergence(cfg: ExperimentConfig) -> Report:
    """Sup-in-window error against epsilon and its log-log slope."""
    if cfg.kind not in ("converge", "semiclassical"):
        raise ValueError("run_convergence needs kind=converge")
    if not cfg.packets:
        raise ValueError("convergence needs one packet")
    runs = map_runs(partial(converge_single, cfg), cfg.eps)
    valid = [r for r in runs if r["certified"]]
    excluded = [{"eps": r["eps"], "reasons": r["reasons"]} for r in runs if not r["certified"]]
    floor = cfg.tolerances.floor
    summary = {"alpha": cfg.alpha_value, "alpha_c": cfg.alpha_c, "excluded": excluded,
               "sup_errors": {repr(r["eps"]): r["sup_error"] for r in runs}}
    targets = {}
    fit = None
    if valid and all(r["sup_error"] < floor for r in valid):
        summary["fit"] = "degenerate: at numerical floor"
    elif len(valid) < 3:
        summary["fit"] = f"failed: only {len(valid)} certified runs"
        if cfg.targets.slope is not None or cfg.targets.min_slope is not None:
            targets["enough_points"] = False
    else:
        fit = fit_power_law([(r["eps"], r["sup_error"]) for r in valid])
        summary["fit"] = {"slope": fit.slope, "intercept": fit.intercept, "residual": fit.residual}
    if cfg.targets.floor_control:
        targets["at_floor"] = bool(valid) and all(r["sup_error"] < floor for r in valid)
    _slope_targets(cfg, fit, targets)
    if cfg.targets.monotone:
        errs = [r["sup_error"] for r in valid]
        targets["monotone"] = len(errs) >= 2 and all(b < a for a, b in zip(errs, errs[1:]))
    if cfg.targets.min_ratio is not None:
        errs = [r["sup_error"] for r in valid]
        ratios = [a / b for a, b in zip(errs, errs[1:])]
        summary["successive_ratios"] = ratios
        targets["ratio_at_least"] = len(valid) == len(runs) >= 2 and all(q >= cfg.targets.min_ratio for q in ratios)
    table = (("eps", "sup_error", "initial_phase_defect", "mass_drift", "certified"),
             tuple((r["eps"], r["sup_error"], r["initial_phase_defect"], r["mass_drift"], int(r["certified"]))
                   for r in runs))
    plots = [("sup error vs eps", "eps", "sup_error", [r["eps"] for r in runs], [r["sup_error"] for r in runs])]
    plots += [(f"error(t) eps={r['eps']!r}", "t", "error", r["times"], r["errors"]) for r in runs]
    return Report(cfg.kind, cfg.hash(), summary, targets, table, plots)


# --------------------------------------------------------------------------
# decoupling


def free_two_packet_profile(u1: ComplexField, u2: ComplexField, packet1, packet2, eps: float,
                            t: float) -> ComplexField:
    """``u1(t,y) + u2(t, y + (t dp + dq)/sqrt(eps)) exp(i phi2)`` for free trajectories.

    ``dq = q01 - q02``, ``dp = p01 - p02`` and
    ``phi2 = p02.dq / eps - dp.y / sqrt(eps) - t |dp|^2 / (2 eps)``.
    """
    q1, p1 = np.asarray(packet1.q), np.asarray(packet1.p)
    q2, p2 = np.asarray(packet2.q), np.asarray(packet2.p)
    dq, dp = q1 - q2, p1 - p2
    s = math.sqrt(eps)
    grid = u1.grid
    shift = (t * dp + dq) / s
    shifted = interpolate_separable(u2, [grid.axis + shift[j] for j in range(grid.dim)])
    phi = np.full(grid.shape, float(p2 @ dq) / eps - t * float(dp @ dp) / (2 * eps))
    for j in range(grid.dim):
        phi = phi - dp[j] * grid.coords[j] / s
    return u1.with_values(u1.values + shifted * np.exp(1j * phi))


def interaction_norm(envelopes, centers, eps: float, sigma: int) -> float:
    """``sum_{l1+l2 = 2 sigma + 1} || |u1|^l1 (y) |u2|^l2 (y + (q1-q2)/sqrt(eps)) ||`` on packet 1's grid.

    Summed over all ordered pairs of distinct packets.
    """
    s = math.sqrt(eps)
    order = 2 * int(sigma) + 1
    total = 0.0
    for j, uj in enumerate(envelopes):
        for k, uk in enumerate(envelopes):
            if k <= j:
                continue
            grid = uj.grid
            shift = (np.asarray(centers[j]) - np.asarray(centers[k])) / s
            vk = np.abs(interpolate_separable(uk, [grid.axis + shift[a] for a in range(grid.dim)]))
            vj = np.abs(uj.values)
            for l1 in range(1, order):
                l2 = order - l1
                total += l2_norm(uj.with_values(vj**l1 * vk**l2))
    return total


def _lab_grid_for(cfg, trajs, envs, eps, sample_times):
    """Box containing every trajectory plus 6 envelope widths.

    The resolved band covers every packet's momentum plus the largest relative
    momentum (demodulating into one packet's frame shifts the others by
    ``(p_k - p_j)/eps``) plus 8 rms bandwidths of the profiles.
    """
    opts = cfg.options
    s = math.sqrt(eps)
    reach, kmax = 0.0, 0.0
    for t in sample_times:
        ps, band = [], 0.0
        for traj, env in zip(trajs, envs):
            u = env[round(float(t), 9)]
            m = l2_norm(u)
            width = momentum_norm(u, 1) / m
            q, p = traj.center(float(t))
            ps.append(p)
            reach = max(reach, float(np.max(np.abs(q))) + 6 * s * max(width, 1.0))
            coeffs = np.abs(conventions.forward(u.values)) ** 2
            krms = math.sqrt(float(np.sum(u.grid.freq_sq * coeffs) / np.sum(coeffs)))
            band = max(band, 8 * krms / s)
        pmax = max(float(np.max(np.abs(p))) for p in ps)
        dpmax = max(float(np.max(np.abs(a - b))) for a in ps for b in ps)
        kmax = max(kmax, (pmax + dpmax) / eps + band)
    L = float(opts.get("lab_L", 2 ** math.ceil(math.log2(reach))))
    N = int(opts.get("lab_N", 2 ** math.ceil(math.log2(2 * L * kmax / math.pi))))
    N = max(N, 64)
    max_N = int(opts.get("max_lab_N", 8192 if cfg.dim == 1 else 128))
    if N > max_N:
        raise ValueError(f"laboratory grid needs N={N} points per axis for L={L:g} (limit {max_N}); "
                         f"required L={reach:.3g}")
    return UniformGrid(cfg.dim, L, N)


def decouple_single(cfg: ExperimentConfig, eps: float) -> dict:
    Tw = cfg.time.T
    samples = np.linspace(0.0, Tw, cfg.time.n_samples)
    spec = cfg.potential
    opts = cfg.options
    nonlinear = bool(opts.get("nonlinear", True))
    alpha, sigma = cfg.alpha_value, cfg.sigma
    env_lam = opts.get("envelope_lam", 1.0 if abs(alpha - cfg.alpha_c) < 1e-12 else 0.0) if nonlinear else 0.0
    traj_mesh = TimeMesh(0.0, Tw, 0.1, tuple(np.linspace(0.0, Tw, 801)))
    trajs = [flow_from_initial(spec, pk.q, pk.p, traj_mesh, tol=cfg.tolerances.ode) for pk in cfg.packets]
    ygrid = _grid(cfg)
    profiles = [gaussian_profile(pk, ygrid) for pk in cfg.packets]
    envs = []
    for traj, a in zip(trajs, profiles):
        Q = None if spec.is_zero else hessian_along(spec, traj)
        prob = EnvelopeProblem(ygrid, env_lam, sigma, Q, cfg.time.dt)
        run = {0.0: a}
        run.update({round(f.time_stamp, 9): f for f in evolve(a, prob, samples[1:])})
        envs.append(run)
    lab = _lab_grid_for(cfg, trajs, envs, eps, samples)
    lab_dt = float(opts.get("lab_dt_factor", 0.1)) * eps
    lab_prob = lab_problem(spec, eps, alpha, sigma, lab, lab_dt)
    if not nonlinear:
        lab_prob = lab_prob.with_(lam=0.0)

    def lab_run(indices):
        psi0 = sum(packet_to_lab(profiles[j], trajs[j].q[0], trajs[j].p[0], 0.0, eps, lab).values
                   for j in indices)
        psi0 = ComplexField(lab, psi0, 0.0)
        yield psi0
        yield from evolve(psi0, lab_prob, samples[1:])

    errors, inter, formula_err = [], [], []
    check_formula = spec.is_zero and len(cfg.packets) == 2 and bool(opts.get("phase_formula", True))
    for psi in lab_run(range(len(cfg.packets))):
        t = round(psi.time_stamp, 9)
        us = [env[t] for env in envs]
        phis = sum(reconstruct(u, traj, eps, lab, gauge=0.0).values for u, traj in zip(us, trajs))
        errors.append(l2_norm(psi.with_values(psi.values - phis)))
        centers = [traj.center(psi.time_stamp)[0] for traj in trajs]
        inter.append(interaction_norm(us, centers, eps, int(round(sigma))))
        if check_formula:
            u_num = to_moving_frame(psi, trajs[0], eps, ygrid, gauge=0.0)
            pred = free_two_packet_profile(us[0], us[1], cfg.packets[0], cfg.packets[1], eps,
                                           psi.time_stamp)
            formula_err.append(l2_norm(u_num.with_values(u_num.values - pred.values)))
    single_lab = None
    if opts.get("single_lab_budget", False):
        single_lab = 0.0
        for psi in lab_run([0]):
            t = round(psi.time_stamp, 9)
            phi = reconstruct(envs[0][t], trajs[0], eps, lab, gauge=0.0)
            single_lab = max(single_lab, l2_norm(psi.with_values(psi.values - phi.values)))
    # the converge pipeline's functional for packet 1 alone (co-moving frame)
    base_prob = SemiclassicalProblem(eps, alpha if nonlinear else math.inf, sigma, spec, trajs[0],
                                     profiles[0], cfg.time.dt, envelope_lam=env_lam)
    baseline = error_sup(base_prob, TimeMesh(0.0, Tw, cfg.time.dt, tuple(samples)), cfg.hash())
    inter_arr = np.array(inter)
    peak = int(np.argmax(inter_arr))
    tail = [(float(samples[i]), float(inter_arr[i])) for i in range(peak, len(samples))
            if samples[i] > 0 and inter_arr[i] > 1e-300]
    decay = fit_power_law(tail).slope if len(tail) >= 3 else None
    return {
        "eps": eps,
        "sup_error": float(max(errors)),
        "times": samples.tolist(),
        "errors": errors,
        "interaction": inter,
        "interaction_decay_exponent": decay,
        "single_packet_baseline": baseline.sup,
        "single_packet_lab_error": single_lab,
        "phase_formula_error": float(max(formula_err)) if formula_err else None,
        "lab_grid": {"N": lab.points_per_axis, "L": lab.half_width, "dt": lab_dt},
    }


def run_decoupling(cfg: ExperimentConfig) -> Report:
    """Full laboratory solve of the packet superposition against the sum of single-packet approximations."""
    if cfg.kind != "decouple":
        raise ValueError("run_decoupling needs kind=decouple")
    runs = map_runs(partial(decouple_single, cfg), cfg.eps)
    errs = [r["sup_error"] for r in runs]
    summary = {
        "sup_errors": {repr(r["eps"]): r["sup_error"] for r in runs},
        "single_packet_baseline": {repr(r["eps"]): r["single_packet_baseline"] for r in runs},
        "single_packet_lab_error": {repr(r["eps"]): r["single_packet_lab_error"] for r in runs},
        "phase_formula_error": {repr(r["eps"]): r["phase_formula_error"] for r in runs},
        "interaction_decay_exponent": {repr(r["eps"]): r["interaction_decay_exponent"] for r in runs},
        "dimension": cfg.dim,
        "lab_grids": {repr(r["eps"]): r["lab_grid"] for r in runs},
    }
    if len(runs) >= 3 and all(e > 0 for e in errs):
        fit = fit_power_law([(r["eps"], r["sup_error"]) for r in runs])
        summary["empirical_rate"] = fit.slope
    targets = {}
    if cfg.targets.monotone:
        targets["monotone"] = all(b < a for a, b in zip(errs, errs[1:]))
    checked = [r for r in runs if r["phase_formula_error"] is not None and r["single_packet_lab_error"] is not None]
    if checked:
        targets["phase_formula_within_budget"] = all(
            r["phase_formula_error"] <= max(10 * r["single_packet_lab_error"], 1e-8) for r in checked)
    table = (("eps", "sup_error", "single_packet_baseline", "phase_formula_error", "interaction_decay_exponent"),
             tuple((r["eps"], r["sup_error"], r["single_packet_baseline"],
                    "" if r["phase_formula_error"] is None else r["phase_formula_error"],
                    "" if r["interaction_decay_exponent"] is None else r["interaction_decay_exponent"])
                   for r in runs))
    plots = [(f"decoupling error eps={r['eps']!r}", "t", "error", r["times"], r["errors"]) for r in runs]
    plots += [(f"interaction norm eps={r['eps']!r}", "t", "interaction", r["times"], r["interaction"])
              for r in runs]
    return Report(cfg.kind, cfg.hash(), summary, targets, table, plots)


# --------------------------------------------------------------------------
# module reports


def run_classical_table(cfg: ExperimentConfig) -> Report:
    tol = float(cfg.options.get("tol", 1e-8))
    rows, results = [], []
    for pk in cfg.packets:
        res = classical_scatter(cfg.potential, pk.q, pk.p, tol=tol)
        d = res.to_dict()
        results.append(d)
        rows.append(tuple(pk.q) + tuple(pk.p) + tuple(res.q_plus) + tuple(res.p_plus)
                    + (res.S_plus, res.delta_plus, res.residual, int(res.converged)))
    n = cfg.dim
    header = tuple(f"q_minus_{i}" for i in range(n)) + tuple(f"p_minus_{i}" for i in range(n)) \
        + tuple(f"q_plus_{i}" for i in range(n)) + tuple(f"p_plus_{i}" for i in range(n)) \
        + ("S_plus", "delta_plus", "residual", "converged")
    targets = {"all_converged": all(r["converged"] for r in results)}
    return Report(cfg.kind, cfg.hash(), {"scatter": results}, targets, (header, tuple(rows)), [])


def _riccati_pieces(cfg, tol):
    pk = cfg.packets[0]
    T = cfg.time.T
    t0 = float(cfg.options.get("t0", -20.0))
    traj = flow_from_minus_infinity(cfg.potential, pk.q, pk.p, T, tol=cfg.tolerances.ode, t_end=t0,
                                    T0=min(T, float(cfg.options.get("T0", 25.0))), n_samples=2001)
    Q = hessian_along(cfg.potential, traj)
    return riccati_solve(Q, t0=t0, T_end=-T, tol=tol, n_samples=cfg.time.n_samples)


def run_riccati_report(cfg: ExperimentConfig) -> Report:
    """Asymptotic residual ``sup |t^2 (M1 - I/t)|``, its tolerance stability, and the dispersion exponent."""
    tol = float(cfg.options.get("riccati_tol", 1e-10))
    ric = _riccati_pieces(cfg, tol)
    ric_half = _riccati_pieces(cfg, tol / 2)
    ts, h, fit = dispersion_rate(ric)
    change = abs(ric_half.asymptotic_residual - ric.asymptotic_residual) / max(ric.asymptotic_residual, 1e-300)
    norms = np.linalg.norm(ric.R, 2, axis=(1, 2))
    h_map = dict(zip(np.round(ts, 9), h))
    rows = tuple((float(t), float(r), float(h_map.get(round(float(t), 9), math.nan)))
                 for t, r in zip(ric.times, norms))
    summary = {"asymptotic_residual": ric.asymptotic_residual,
               "asymptotic_residual_half_tol": ric_half.asymptotic_residual,
               "relative_change": change, "dispersion_exponent": fit.slope, "dim": cfg.dim,
               "symmetry_defect": ric.symmetry_defect()}
    targets = {"residual_stable": math.isfinite(ric.asymptotic_residual) and change < 0.05,
               "dispersion_exponent": abs(fit.slope - cfg.dim / 2) <= 0.05}
    plots = [("scaled residual", "t", "t^2 |M1 - I/t|", [r[0] for r in rows], [r[1] for r in rows]),
             ("dispersion", "t", "h", ts.tolist(), h.tolist())]
    return Report(cfg.kind, cfg.hash(), summary, targets, (("t", "scaled_residual", "h"), rows), plots)


def run_morawetz_report(cfg: ExperimentConfig) -> Report:
    mus = [float(m) for m in cfg.options.get("mu", [2.5, 3.0, 4.0])]
    eta = float(cfg.options.get("eta", 1.0))
    rows, ok = [], True
    for mu in mus:
        C, M_max = morawetz_threshold(mu)
        brute = nested_riemann_C(mu)
        w = morawetz_weight(mu, eta=eta)
        viol = w.invariant_violations()
        rel = abs(C - brute) / brute
        good = rel < 1e-4 and not any(viol.values())
        ok &= good
        rows.append((mu, C, brute, rel, M_max, w.K, w.h_prime_sup, int(not any(viol.values()))))
    header = ("mu", "C", "C_bruteforce", "relative_difference", "M_max", "K", "sup_h_prime", "invariants_ok")
    return Report(cfg.kind, cfg.hash(), {"eta": eta}, {"thresholds_and_invariants": ok},
                  (header, tuple(rows)), [])


def run_envelope_diag(cfg: ExperimentConfig) -> Report:
    """Diagnostics of one envelope solve: mass, J-norm, momenta, pseudo-conformal law."""
    opts = cfg.options
    grid = _grid(cfg)
    lam = float(opts.get("lam", 1.0))
    t0 = float(opts.get("t0", 0.0))
    t1 = cfg.time.end if cfg.time.t_end is not None else cfg.time.T
    Q = None
    if not cfg.potential.is_zero and cfg.packets:
        pk = cfg.packets[0]
        T_traj = max(abs(t0), abs(t1)) + 1.0
        traj = flow_from_minus_infinity(cfg.potential, pk.q, pk.p, T_traj, tol=cfg.tolerances.ode,
                                        t_end=T_traj, n_samples=2001)
        Q = hessian_along(cfg.potential, traj)
    pk0 = cfg.packets[0] if cfg.packets else PacketConfig((0.0,) * cfg.dim, (0.0,) * cfg.dim)
    u0 = gaussian_profile(pk0, grid)
    prob = EnvelopeProblem(grid, lam, cfg.sigma, Q, cfg.time.dt)
    mesh = TimeMesh.uniform(t0, t1, cfg.time.dt, cfg.time.n_samples)
    traj = envelope_solve(u0, prob, mesh, keep_fields=False)
    diag = traj.diagnostics
    cols = diag.as_columns()
    integ = integrated_law_residual(diag)
    header = tuple(cols) + ("law_integrated",)
    rows = tuple(tuple(float(cols[c][i]) for c in cols) + (float(integ[i]),) for i in range(diag.times.size))
    drift = diag.mass_drift()
    summary = {"mass_drift": drift, "max_law_integrated": float(np.max(np.abs(integ))),
               "energy_relative_drift": float(np.max(np.abs(diag.energy / diag.energy[0] - 1.0))),
               "warnings": diag.warnings}
    targets = {"mass_conserved": drift <= 1e-12}
    plots = [("J-norm", "t", "Jnorm", diag.times.tolist(), diag.j_norm.tolist()),
             ("mass", "t", "mass", diag.times.tolist(), diag.mass.tolist())]
    return Report(cfg.kind, cfg.hash(), summary, targets, (header, rows), plots)


def run_semiclassical(cfg: ExperimentConfig) -> Report:
    """One error functional per epsilon with the per-time table of the last one."""
    reports = []
    for eps in cfg.eps:
        r = converge_single(cfg, eps)
        reports.append(r)
    last = reports[-1]
    summary = {"runs": [{k: r[k] for k in ("eps", "sup_error", "initial_phase_defect", "mass_drift", "certified")}
                        for r in reports],
               "config_hash": cfg.hash()}
    targets = {"certified": all(r["certified"] for r in reports)}
    rows = tuple(zip(last["times"], last["errors"]))
    return Report("semiclassical", cfg.hash(), summary, targets, (("t", "error"), rows),
                  [("error", "t", "error", last["times"], last["errors"])])


RUNNERS = {
    "converge": run_convergence,
    "decouple": run_decoupling,
    "classical_table": run_classical_table,
    "riccati_report": run_riccati_report,
    "morawetz_report": run_morawetz_report,
    "envelope_diag": run_envelope_diag,
    "semiclassical": run_semiclassical,
}


def run_experiment(cfg: ExperimentConfig) -> Report:
    return RUNNERS[cfg.kind](cfg)
