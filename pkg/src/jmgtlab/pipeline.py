"""End-to-end runs driven by an ExperimentConfig: simulate, extract, invert, report."""
from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, evaluate_field, scalar_value
from .errors import DomainError, NotSwitchedOffError, ValidationError
from .inversion import (Experiment, ObservationOp, forward_residues, image_norm, newton_kappa,
                        observed_closed_form, observed_residues, reconstruct)
from .model import CoefficientField, Cutoff, SpatialProfile, TimeProfile, ZeroSource, build_excitation
from .residues import modal_residue_closed_form, poles as pole_pair
from .solver import Direction, Solver, linear_tail
from .spectral import Grid, build_basis

log = logging.getLogger(__name__)

VARIANT_MAP = {"kappa-only": "sound-speed", "kappa-c0": "sound-speed", "kappa-b0": "attenuation"}


# bundled configurations -----------------------------------------------------

BUNDLED = {
    # one damped mode from initial data; residues have a closed form
    "linear-oscillator": {
        "name": "linear-oscillator",
        "n_modes": 8,
        "excitation": {"kind": "none"},
        "initial": {"u0": "sin(x)", "u1": "-0.5*sin(x)", "u2": "-0.75*sin(x)"},
        "time": {"T": 20.0},
    },
    # exact separable solution u = psi(t) phi(x); its resolvent residues vanish
    "separable": {
        "name": "separable",
        "excitation": {"kind": "separable"},
        "time": {"T": 24.0},
    },
    # linearised reconstruction of (kappa, c0^2)
    "inversion-c0": {
        "name": "inversion-c0",
        "inversion": {"variant": "kappa-c0", "M": 4},
    },
    # linearised reconstruction of (kappa, b0)
    "inversion-b0": {
        "name": "inversion-b0",
        "inversion": {"variant": "kappa-b0", "M": 4},
    },
    # kappa alone by frozen Newton
    "kappa-newton": {
        "name": "kappa-newton",
        "inversion": {"variant": "kappa-only", "M": 4, "epsilon": 1e-2, "newton_iterations": 10},
    },
}


def load_config(source, seed=None, modes=None):
    """Config from a bundled name, a JSON path or a dict, with CLI overrides applied."""
    if isinstance(source, ExperimentConfig):
        cfg = source
    elif isinstance(source, dict):
        cfg = ExperimentConfig.from_dict(source)
    elif source is None:
        cfg = ExperimentConfig.from_dict({})
    elif str(source) in BUNDLED:
        cfg = ExperimentConfig.from_dict(copy.deepcopy(BUNDLED[str(source)]))
    else:
        path = Path(source)
        if not path.is_file():
            raise ValidationError(f"no such file or bundled config {str(source)!r}; "
                                  f"bundled: {', '.join(sorted(BUNDLED))}", field="config")
        cfg = ExperimentConfig.load(path)
    over = {}
    if seed is not None:
        over["seed"] = int(seed)
    if modes is not None:
        over["n_modes"] = int(modes)
    return cfg.with_overrides(**over) if over else cfg


# setup ------------------------------------------------------------------------

@dataclass
class Setup:
    """Numerical objects assembled from one config."""

    config: ExperimentConfig
    grid: Grid
    basis: object
    coeff: CoefficientField
    chi: Cutoff
    phi: SpatialProfile
    psi: TimeProfile
    source: object
    op: ObservationOp
    initial: tuple
    rng: np.random.Generator = field(repr=False)

    @property
    def variant(self):
        return VARIANT_MAP[self.config["inversion"]["variant"]]

    def experiment(self, M=None):
        """Inversion experiment linearised at kappa = 0 around the configured c0^2 and b0."""
        inv = self.config["inversion"]
        back = CoefficientField(kappa=np.zeros(self.grid.size), c0_sq=self.coeff.c0_sq,
                                b0=self.coeff.b0, tau=self.coeff.tau, c=self.coeff.c)
        return Experiment(self.basis, back, self.chi, self.phi, self.psi, self.source, self.op,
                          M=inv["M"] if M is None else M, variant=self.variant,
                          dt=scalar_value(self.config["time"]["dt"], "time.dt"),
                          sample_every=self.config["time"]["sample_every"],
                          window=scalar_value(inv["window"], "inversion.window"),
                          s=scalar_value(inv["s"], "inversion.s"), f2_form=inv["f2_form"],
                          shift_terms=inv["variant"] != "kappa-only")

    def direction(self):
        """Configured perturbation direction (unit amplitude) for the chosen variant."""
        inv = self.config["inversion"]
        dk = evaluate_field(inv["direction"]["dkappa"], self.grid, "inversion.direction.dkappa")
        if inv["variant"] == "kappa-only":
            return Direction(dkappa=dk)
        d2 = evaluate_field(inv["direction"]["d2"], self.grid, "inversion.direction.d2")
        if self.variant == "sound-speed":
            return Direction(dkappa=dk, dc0_sq=d2)
        return Direction(dkappa=dk, db0=d2)

    def solver(self):
        tm = self.config["time"]
        return Solver(self.basis, self.coeff, self.chi, self.source, dt=scalar_value(tm["dt"], "time.dt"))


def build(config):
    """Assemble grid, basis, coefficients, excitation and observation from a config."""
    cfg = load_config(config)
    d = cfg.data
    extents = [scalar_value(e, f"grid.extents[{i}]") for i, e in enumerate(d["grid"]["extents"])]
    grid = Grid(tuple(extents), tuple(d["grid"]["points"]))
    co = d["coefficients"]
    tau = scalar_value(co["tau"], "coefficients.tau")
    c = scalar_value(co["c"], "coefficients.c")
    c0_sq = evaluate_field(co["c0_sq"], grid, "coefficients.c0_sq")
    if np.any(c0_sq <= 0):
        raise ValidationError("must be strictly positive on the grid", field="coefficients.c0_sq")
    b0 = evaluate_field(co["b0"], grid, "coefficients.b0")
    kappa = evaluate_field(co["kappa"], grid, "coefficients.kappa")
    try:
        basis = build_basis(grid, c0_sq, c, d["n_modes"])
        coeff = CoefficientField(kappa=kappa, c0_sq=c0_sq, b0=b0, tau=tau, c=c)
    except DomainError as exc:
        raise ValidationError(str(exc), field="coefficients") from exc
    chi = Cutoff(scalar_value(d["cutoff"]["m_lo"], "cutoff.m_lo"),
                 scalar_value(d["cutoff"]["m_hi"], "cutoff.m_hi"))
    ex = d["excitation"]
    pd = ex["psi"]
    psi = TimeProfile(pd["q"], scalar_value(pd["a"], "excitation.psi.a"),
                      scalar_value(pd["amplitude"], "excitation.psi.amplitude"))
    if len(ex["phi_modes"]) > basis.n_modes:
        raise ValidationError("lists more modes than the basis retains", field="excitation.phi_modes")
    phi = SpatialProfile.from_modes(basis, [float(v) for v in ex["phi_modes"]], tuple(ex["rec_box"]))
    if ex["kind"] == "separable":
        source = build_excitation(phi, psi, coeff, basis)
    else:
        source = ZeroSource()
    op = _observation(d["observation"], grid, basis)
    rng = np.random.default_rng(d["seed"])
    init = []
    for key in ("u0", "u1", "u2"):
        init.append(basis.to_modal(evaluate_field(d["initial"][key], grid, f"initial.{key}")))
    amp = scalar_value(d["initial"]["random_amplitude"], "initial.random_amplitude")
    if amp:
        decay = 1.0 / basis.eigenvalues
        init = [v + amp * decay * rng.standard_normal(basis.n_modes) for v in init]
    return Setup(cfg, grid, basis, coeff, chi, phi, psi, source, op, tuple(init), rng)


def _observation(od, grid, basis):
    kind = od["kind"]
    try:
        if kind == "points":
            locs = od["locations"]
            if not isinstance(locs, list) or not locs:
                raise ValidationError("must be a non-empty list of points", field="observation.locations")
            pts = [[scalar_value(v, "observation.locations") for v in np.atleast_1d(p).tolist()]
                   for p in locs]
            return ObservationOp.points(grid, pts)
        if kind == "averages":
            rows = [evaluate_field(w, grid, "observation.weights") for w in od["weights"]]
            return ObservationOp.averages(grid, rows)
        return ObservationOp.interior_curve(grid, scalar_value(od["offset"], "observation.offset"))
    except DomainError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(str(exc), field="observation") from exc


# stages -------------------------------------------------------------------------

def _write_csv(path, header, data):
    np.savetxt(path, np.asarray(data), delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def simulate_stage(setup, out=None):
    """Forward run over [0, T]; writes trajectory.csv and returns (trajectory, summary)."""
    tm = setup.config["time"]
    T = scalar_value(tm["T"], "time.T")
    traj = setup.solver().simulate(setup.initial, T, sample_every=tm["sample_every"], detect=True,
                                   extend_to=4 * T)
    summary = {"T": float(traj.times[-1]), "t_star": traj.t_star,
               "min_margin": float(traj.margin.min()), "E0_initial": float(traj.energy[0]),
               "E0_final": float(traj.energy[-1]), "decay_rate": decay_rate(traj),
               # the energy is guaranteed to decay at least like e^{-b t / 4}
               "decay_rate_bound": 0.25 * float(setup.coeff.b_bar)}
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        obs = traj.U @ (setup.op.modal(setup.basis)).T
        header = ["t", "E0", "sigma", "zsq", "margin"] + [f"obs{i}" for i in range(obs.shape[1])]
        _write_csv(out / "trajectory.csv", header,
                   np.column_stack([traj.rows(), traj.margin, obs]))
        (out / "simulate.json").write_text(json.dumps(summary, indent=1))
    return traj, summary


def decay_rate(traj):
    """Least-squares rate alpha in E0 ~ e^{-alpha t} over the samples after T*."""
    if traj.t_star is None:
        return None
    sel = (traj.times >= traj.t_star) & (traj.energy > 1e-300)
    if sel.sum() < 10 or traj.times[sel][-1] - traj.times[sel][0] < 1.0:
        return None
    slope = np.polyfit(traj.times[sel], np.log(traj.energy[sel]), 1)[0]
    return float(-slope)


def extract_stage(setup, traj=None, out=None):
    """Residues of the observed trace after T*, compared with the closed form."""
    if traj is None:
        traj, _ = simulate_stage(setup)
    if traj.t_star is None:
        raise NotSwitchedOffError("the run never switched off; residues are undefined")
    if not setup.coeff.constant_b0:
        raise ValidationError("residue extraction needs constant b0", field="coefficients.b0")
    window = scalar_value(setup.config["inversion"]["window"], "inversion.window")
    T0, T1 = traj.t_star, traj.t_star + window
    solver = traj.solver
    times, U = traj.times, traj.U
    if times[-1] < T1 - 1e-9:
        ext = solver.simulate((U[-1], traj.V[-1], traj.W[-1]), T1,
                              sample_every=setup.config["time"]["sample_every"], t0=times[-1],
                              detect=False)
        times, U = np.concatenate([times, ext.times[1:]]), np.vstack([U, ext.U[1:]])
    sel = (times >= T0 - 1e-12) & (times <= T1 + 1e-9)
    b, c = setup.coeff.b_bar, setup.coeff.c
    group_poles = [pole_pair(l, b, c) for l in setup.basis.group_eigenvalues]
    fitted, fit = observed_residues(times[sel], U[sel], setup.basis, setup.op, setup.source,
                                    setup.coeff.tau, b, group_poles)
    closed = observed_closed_form(modal_residue_closed_form(linear_tail(traj, setup.coeff)),
                                  setup.basis, setup.op)
    diff = max(np.abs(fitted.r_plus - closed.r_plus).max(), np.abs(fitted.r_minus - closed.r_minus).max())
    scale = max(np.abs(closed.r_plus).max(), np.abs(closed.r_minus).max())
    summary = {"t_star": T0, "window": [T0, float(times[sel][-1])], "fit_residual": fit.residual,
               "fit_condition": fit.condition, "max_abs_residue": float(scale),
               "max_abs_fitted": float(max(np.abs(fitted.r_plus).max(), np.abs(fitted.r_minus).max())),
               "abs_error": float(diff), "rel_error": float(diff / scale) if scale > 0 else None}
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        fitted.save(out / "residues.json")
        closed.save(out / "residues_closed_form.json")
        rows = []
        for i, p in enumerate(fitted.pole_pairs):
            for ch in range(np.atleast_1d(fitted.r_plus[i]).size):
                rows.append([i, p.lam, p.p_plus.real, p.p_plus.imag,
                             np.atleast_1d(fitted.r_plus[i])[ch].real, np.atleast_1d(fitted.r_plus[i])[ch].imag,
                             np.atleast_1d(closed.r_plus[i])[ch].real, np.atleast_1d(closed.r_plus[i])[ch].imag])
        _write_csv(out / "residues.csv", ["group", "lambda", "p_plus_re", "p_plus_im", "R_plus_re",
                                          "R_plus_im", "closed_re", "closed_im"], rows)
        (out / "extract.json").write_text(json.dumps(summary, indent=1))
    return fitted, closed, summary


def invert_stage(setup, out=None):
    """Reconstruct the configured direction at amplitude epsilon from synthetic residues.

    Linearised variants difference against the unperturbed forward map;
    kappa-only runs the frozen Newton iteration when iterations are requested.
    """
    inv = setup.config["inversion"]
    if np.any(setup.coeff.kappa != 0):
        raise ValidationError("the inversion background must have kappa = 0", field="coefficients.kappa")
    exp = setup.experiment()
    eps = scalar_value(inv["epsilon"], "inversion.epsilon")
    d = setup.direction().scaled(eps)
    K_true, C_true = exp.coordinates(d)
    if inv["variant"] == "kappa-only":
        K_true = exp.coordinates(d)[0]
        # keep the truth inside the span used by the iteration
        d = exp.direction(K_true)
    y = forward_residues(exp.coeff_for(d), exp.chi, exp)
    summary = {"variant": inv["variant"], "epsilon": eps, "M": exp.M, "t_star": y.meta["t_star"],
               "fit_residual": y.meta["fit_residual"]}
    if inv["variant"] == "kappa-only" and inv["newton_iterations"] > 0:
        res = newton_kappa(y, exp, iterations=inv["newton_iterations"])
        K = res.x
        summary.update(newton_residuals=res.residuals, newton_converged=res.converged,
                       kappa_rel_error=float(np.linalg.norm(K - K_true) / np.linalg.norm(K_true)))
        rec = reconstruct(_image_from_K(exp, K), exp)
    else:
        y0 = forward_residues(exp.coeff, exp.chi, exp)
        rec = reconstruct(y - y0, exp)
        summary["baseline_norm"] = image_norm(y0)
        x_true = np.concatenate([K_true, C_true]) if inv["variant"] != "kappa-only" else K_true
        x_rec = np.concatenate([rec.K, rec.C]) if inv["variant"] != "kappa-only" else rec.K
        summary["rel_error"] = float(np.linalg.norm(x_rec - x_true) / np.linalg.norm(x_true))
    mask = rec.mask
    true_dk = setup.grid.evaluate(d.dkappa)
    summary["grid_rel_error_dkappa"] = float(np.linalg.norm(rec.dkappa[mask] - _projected(exp, true_dk)[mask])
                                             / np.linalg.norm(_projected(exp, true_dk)[mask]))
    summary["c_nu"] = rec.c_nu
    summary["amplification"] = rec.amplification.tolist()
    if out is not None:
        rec.save(out, setup.grid)
        (Path(out) / "invert.json").write_text(json.dumps(summary, indent=1, default=float))
    return rec, summary


def _image_from_K(exp, K):
    from .inversion import linearized_apply
    return linearized_apply(exp, K=K)


def _projected(exp, dk):
    """The part of dkappa visible to the first M groups (what reconstruction can return)."""
    idx = exp.modes()
    Phi = exp.basis.vectors[:, idx]
    coeffs = exp.basis.to_modal(dk * exp.phi.values**2)[idx]
    return Phi @ coeffs / exp.phi.values**2


@dataclass
class RunReport:
    config: dict
    simulate: dict | None = None
    extract: dict | None = None
    invert: dict | None = None
    timings: dict = field(default_factory=dict)
    # one entry per acceptance criterion, filled by attach_checks
    criteria: dict = field(default_factory=lambda: {f"C{i}": {"status": "not run"} for i in range(1, 11)})
    invariants: dict = field(default_factory=dict)

    def attach_checks(self, results):
        for r in results:
            entry = dict(r.to_dict(), status="pass" if r.passed else "fail")
            (self.criteria if r.key in self.criteria else self.invariants)[r.key] = entry

    @property
    def failed(self):
        return [k for k, v in {**self.criteria, **self.invariants}.items() if v.get("status") == "fail"]

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o))


def run(config, out=None, stages=("simulate", "extract", "invert")):
    """Run the requested stages and collect their summaries in a RunReport."""
    setup = build(config)
    report = RunReport(config=setup.config.to_dict())
    traj = None
    if "simulate" in stages or "extract" in stages:
        t = time.perf_counter()
        traj, report.simulate = simulate_stage(setup, out)
        report.timings["simulate"] = time.perf_counter() - t
    if "extract" in stages:
        t = time.perf_counter()
        if setup.coeff.constant_b0 and traj.t_star is not None:
            _, _, report.extract = extract_stage(setup, traj, out)
        report.timings["extract"] = time.perf_counter() - t
    if "invert" in stages:
        t = time.perf_counter()
        _, report.invert = invert_stage(setup, out)
        report.timings["invert"] = time.perf_counter() - t
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        report.save(Path(out) / "report.json")
    return report
