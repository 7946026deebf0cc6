"""``homoglab`` command-line front end.

Usage::

    homoglab <command> --config job.json [--out-dir D] [--threads K] [--seed S]

A job file is a JSON object with the keys

``command``    one of cell, reiterate, film, membrane, direct, oracle, sweep, validate
``integrand``  integrand description (see :func:`homoglab.integrand.from_json`)
``inputs``     evaluation points: x, y, xi, xi_list, eps_list, ...
``numerics``   grid sizes, T lists, solver settings, budgets
``outputs``    ``{"csv": name, "json": name, "correctors": dir}``; null disables one
``seed``       random seed (default 0); ``--seed`` overrides it
``timing``     include wall-clock columns (off by default; they break byte equality)

Unknown keys are rejected.  Exit codes: 0 success, 2 invalid job or
integrand, 3 solver non-convergence (partial outputs are still written),
4 IO failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .cell import SolverConfig, t_extrapolate
from .direct import DirectSimConfig, gamma_gap_report
from .errors import ContractViolation, HomoglabError, IntegrandError, SolverError
from .grid import CellGrid
from .integrand import from_json, validate_hypotheses
from .io import OutputError, emit_table, to_jsonable
from .reiterated import CellConfig, ReiterationConfig, density_sweep, laminate_oracle, outer_density
from .thinfilm import (FilmConfig, MembraneConfig, corollary_single_scale, film_inner_density,
                       membrane_density, schur_membrane_oracle)

__all__ = ["main", "run_job", "COMMANDS", "EXIT_OK", "EXIT_CONTRACT", "EXIT_SOLVER", "EXIT_IO"]

log = logging.getLogger("homoglab")

EXIT_OK, EXIT_CONTRACT, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

_NESTED = {"path", "solver", "max_inner_solves", "quantization"}
COMMANDS = {
    "cell": (True, {"x", "y", "xi", "xi_list"}, {"n", "T_list", "bc", "solver"}),
    "reiterate": (True, {"x", "xi"}, _NESTED | {"inner", "outer"}),
    "sweep": (True, {"x", "xi_list"}, _NESTED | {"inner", "outer"}),
    "film": (True, {"x", "y_alpha", "xi"}, _NESTED | {"inner"}),
    "membrane": (True, {"x_alpha", "xi_bar", "xi_bar_list"}, _NESTED | {"inner", "membrane", "corollary"}),
    "direct": (True, {"xi", "eps_list"}, _NESTED | {"points_per_fine_period", "domain", "tolerance",
                                                    "inner", "outer", "membrane"}),
    "oracle": (False, {"oracle", "phases", "mode", "inner", "p", "C", "xi_bar"}, set()),
    "validate": (True, set(), {"sample_count", "stress_tol"}),
}
_TOP = {"command", "integrand", "inputs", "numerics", "outputs", "seed", "timing"}
_SOLVER_KEYS = {"method", "tol_quadratic", "tol_general", "max_iter", "restarts", "armijo"}


class _Job:
    """Parsed job with strict key checking."""

    def __init__(self, raw, command=None, seed=None, threads=None):
        if not isinstance(raw, dict):
            raise ContractViolation("job config must be a JSON object")
        _strict(raw, _TOP, "job")
        self.command = raw.get("command", command)
        if command is not None and self.command != command:
            raise ContractViolation(f"command line says {command!r} but the job file says {self.command!r}")
        if self.command not in COMMANDS:
            raise ContractViolation(f"unknown command {self.command!r}; expected one of {sorted(COMMANDS)}")
        needs_integrand, input_keys, numeric_keys = COMMANDS[self.command]
        self.inputs = dict(raw.get("inputs", {}))
        self.numerics = dict(raw.get("numerics", {}))
        _strict(self.inputs, input_keys, f"{self.command} inputs")
        _strict(self.numerics, numeric_keys, f"{self.command} numerics")
        self.seed = int(raw.get("seed", 0) if seed is None else seed)
        self.threads = int(threads or 1)
        self.timing = bool(raw.get("timing", False))
        outputs = dict(raw.get("outputs", {}))
        _strict(outputs, {"csv", "json", "correctors"}, "outputs")
        self.outputs = {"csv": f"{self.command}.csv", "json": f"{self.command}.json", "correctors": None}
        self.outputs.update(outputs)
        self.integrand = None
        if needs_integrand:
            if "integrand" not in raw:
                raise ContractViolation(f"command {self.command!r} needs an 'integrand'")
            self.integrand = from_json(raw["integrand"])
        elif "integrand" in raw:
            raise ContractViolation(f"command {self.command!r} takes no integrand")

    def solver(self):
        desc = dict(self.numerics.get("solver", {}))
        _strict(desc, _SOLVER_KEYS, "solver")
        return SolverConfig(seed=self.seed, **desc)

    def nested_kwargs(self):
        out = {"solver": self.solver(), "threads": self.threads}
        for k in ("path", "max_inner_solves", "quantization"):
            if k in self.numerics:
                out[k] = self.numerics[k]
        return out

    def reiteration(self):
        return ReiterationConfig(inner=_cell_config(self.numerics.get("inner")),
                                 outer=_cell_config(self.numerics.get("outer")), **self.nested_kwargs())

    def film(self):
        inner = _cell_config(self.numerics.get("inner"), default_n=8)
        membrane = dict(self.numerics.get("membrane", {}))
        _strict(membrane, {"n", "n3", "T_list", "bc"}, "membrane")
        return FilmConfig(inner=inner, membrane=MembraneConfig(**membrane), **self.nested_kwargs())


def _strict(d, allowed, where):
    if not isinstance(d, dict):
        raise ContractViolation(f"{where} must be a JSON object")
    extra = set(d) - set(allowed)
    if extra:
        raise ContractViolation(f"unknown keys in {where}: {sorted(extra)}")


def _cell_config(desc, default_n=16):
    desc = dict(desc or {})
    _strict(desc, {"n", "T_list", "bc"}, "cell settings")
    desc.setdefault("n", default_n)
    return CellConfig(**desc)


def _matrix(v, shape, name):
    a = np.asarray(v, dtype=float)
    if a.size != int(np.prod(shape)):
        raise ContractViolation(f"{name} must have {int(np.prod(shape))} entries (shape {shape}), got {a.shape}")
    return a.reshape(shape)


def _vector(v, n, name, default=None):
    if v is None:
        if default is None:
            raise ContractViolation(f"input {name!r} is required")
        return np.asarray(default, dtype=float)
    return _matrix(v, (n,), name)


def _xi_columns(xi, prefix="xi"):
    d, N = xi.shape
    return {f"{prefix}_{i}_{j}": float(xi[i, j]) for i in range(d) for j in range(N)}


def _est_row(k, xi, est, seed, prefix="xi"):
    row = {"index": k}
    row.update(_xi_columns(xi, prefix))
    row.update({
        "value": float(est.value),
        "T_final": int(est.per_T[-1][0]) if est.per_T else 0,
        "residual": float(est.residuals[-1]) if est.residuals else float("nan"),
        "corrector_sup": float(est.corrector_sup[-1]) if est.corrector_sup else float("nan"),
        "converged": bool(est.converged),
        "upper_bound_only": bool(est.upper_bound_only),
        "growth_ok": bool(getattr(est, "growth_ok", True)),
        "inner_solves": int(est.inner_solve_count),
        "cache_hits": int(est.cache_hits),
        "seed": seed,
    })
    return row


# ---------------------------------------------------------------------------
# commands; each returns (rows, columns, diagnostics, ok)


def _cmd_cell(job, out_dir):
    f = job.integrand
    if f.kind != "bulk":
        raise ContractViolation("the cell command needs a bulk integrand")
    x = _vector(job.inputs.get("x"), f.x_dim, "x", np.zeros(f.x_dim))
    y = _vector(job.inputs.get("y"), f.y_dim, "y", np.zeros(f.y_dim))
    xs = _xi_list(job, f.d, f.N)
    cc = _cell_config({k: job.numerics[k] for k in ("n", "T_list", "bc") if k in job.numerics})
    grid, T_list = cc.template(f.N, f.convex)
    g = f.frozen(x, y)
    rows, diags = [], []
    for k, xi in enumerate(xs):
        est = t_extrapolate(g, xi, T_list, grid, job.solver())
        rows.append(_est_row(k, xi, est, job.seed))
        diags.append(est.to_dict())
        if job.outputs.get("correctors"):
            d = Path(out_dir) / job.outputs["correctors"]
            try:
                d.mkdir(parents=True, exist_ok=True)
                est.solution.corrector.to_csv(d / f"corrector_{k}.csv")
            except OSError as exc:
                raise OutputError(f"cannot write corrector dump: {exc}") from exc
    return rows, None, diags, all(r["converged"] for r in rows)


def _xi_list(job, d, N):
    if "xi_list" in job.inputs and "xi" in job.inputs:
        raise ContractViolation("give either 'xi' or 'xi_list', not both")
    if "xi_list" in job.inputs:
        xs = [_matrix(v, (d, N), "xi") for v in job.inputs["xi_list"]]
        if not xs:
            raise ContractViolation("xi_list must be nonempty")
        return xs
    return [_matrix(job.inputs.get("xi", np.eye(d, N)), (d, N), "xi")]


def _cmd_reiterate(job, out_dir):
    f = job.integrand
    x = _vector(job.inputs.get("x"), f.x_dim, "x", np.zeros(f.x_dim))
    xi = _matrix(job.inputs.get("xi", np.eye(f.d, f.N)), (f.d, f.N), "xi")
    est = outer_density(f, x, xi, job.reiteration())
    row = _est_row(0, xi, est, job.seed)
    return [row], None, [est.to_dict()], bool(est.converged and not est.errors)


def _cmd_sweep(job, out_dir):
    f = job.integrand
    x = _vector(job.inputs.get("x"), f.x_dim, "x", np.zeros(f.x_dim))
    if "xi_list" not in job.inputs:
        raise ContractViolation("the sweep command needs 'xi_list'")
    xs = [_matrix(v, (f.d, f.N), "xi") for v in job.inputs["xi_list"]]
    table = density_sweep(f, x, xs, job.reiteration())
    rows = []
    for r in table:
        row = {"index": r.index}
        row.update(_xi_columns(r.xi))
        row.update({"value": float(r.value), "converged": bool(r.converged),
                    "upper_bound_only": bool(r.upper_bound_only), "error": r.error, "seed": job.seed})
        rows.append(row)
    return rows, None, [], all(r["converged"] and not r["error"] for r in rows)


def _cmd_film(job, out_dir):
    W = job.integrand
    if W.kind != "film":
        raise ContractViolation("the film command needs a film integrand")
    x = _vector(job.inputs.get("x"), 3, "x", np.zeros(3))
    y_alpha = _vector(job.inputs.get("y_alpha"), 2, "y_alpha", np.zeros(2))
    xi = _matrix(job.inputs.get("xi", np.eye(3)), (3, 3), "xi")
    value, stress = film_inner_density(W, x, y_alpha, xi, job.film())
    row = {"index": 0, **_xi_columns(xi), "value": value,
           "growth_ok": W.growth.contains(value, float(np.linalg.norm(xi))), "seed": job.seed}
    return [row], None, [{"stress": stress}], True


def _cmd_membrane(job, out_dir):
    W = job.integrand
    if W.kind != "film":
        raise ContractViolation("the membrane command needs a film integrand")
    x_alpha = _vector(job.inputs.get("x_alpha"), 2, "x_alpha", np.zeros(2))
    if "xi_bar_list" in job.inputs and "xi_bar" in job.inputs:
        raise ContractViolation("give either 'xi_bar' or 'xi_bar_list', not both")
    raw = job.inputs.get("xi_bar_list", [job.inputs.get("xi_bar", np.eye(3, 2))])
    xs = [_matrix(v, (3, 2), "xi_bar") for v in raw]
    cfg = job.film()
    corollary = job.numerics.get("corollary")
    rows, diags = [], []
    for k, xb in enumerate(xs):
        if corollary is None:
            est = membrane_density(W, x_alpha, xb, cfg)
        else:
            est = corollary_single_scale(W, x_alpha, xb, cfg, path=corollary)
        rows.append(_est_row(k, xb, est, job.seed, prefix="xi_bar"))
        diags.append(est.to_dict())
    return rows, None, diags, all(r["converged"] for r in rows)


def _cmd_direct(job, out_dir):
    f = job.integrand
    num = job.numerics
    domain = num.get("domain", "strip" if f.kind == "film" else "bulk")
    eps_list = job.inputs.get("eps_list")
    if not eps_list:
        raise ContractViolation("the direct command needs a nonempty 'eps_list'")
    template = DirectSimConfig(float(eps_list[0]), int(num.get("points_per_fine_period", 8)), domain,
                               job.solver())
    if domain == "strip":
        xi = _matrix(job.inputs.get("xi", [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]), (3, 2), "xi")
        hom_cfg = job.film()
    else:
        xi = float(np.asarray(job.inputs.get("xi", 1.0), dtype=float).reshape(()))
        hom_cfg = job.reiteration()
    report = gamma_gap_report(f, xi, eps_list, template, tolerance=float(num.get("tolerance", 0.02)),
                              config=hom_cfg)
    columns = ["eps", "min_F_eps", "min_F_hom", "gap", "dofs"] + (["wall_time_ms"] if job.timing else [])
    rows = [{c: getattr(r, c) for c in columns} for r in report.rows]
    diag = {"verdict": report.verdict, "monotone": report.monotone,
            "final_relative_gap": report.final_relative_gap, "tolerance": report.tolerance,
            "errors": report.errors}
    return rows, columns, [diag], not any(report.errors)


def _cmd_oracle(job, out_dir):
    kind = job.inputs.get("oracle", "laminate")
    if kind == "laminate":
        mode = job.inputs.get("mode", "harmonic")
        value = laminate_oracle(job.inputs.get("phases", []), mode, job.inputs.get("inner"),
                                float(job.inputs.get("p", 2.0)))
    elif kind == "schur":
        mode = ""
        value = schur_membrane_oracle(_matrix(job.inputs.get("C"), (9, 9), "C"),
                                      _matrix(job.inputs.get("xi_bar"), (3, 2), "xi_bar"))
    else:
        raise ContractViolation(f"unknown oracle {kind!r}; expected 'laminate' or 'schur'")
    return [{"oracle": kind, "mode": mode, "value": float(value)}], None, [], True


def _cmd_validate(job, out_dir):
    report = validate_hypotheses(job.integrand, int(job.numerics.get("sample_count", 200)), job.seed,
                                 float(job.numerics.get("stress_tol", 1e-4)))
    rows = [{**r, "seed": job.seed} for r in report.rows()]
    diag = [{"check": c.name, "sample": c.sample} for c in report.checks]
    return rows, None, diag, report.passed


_HANDLERS = {"cell": _cmd_cell, "reiterate": _cmd_reiterate, "sweep": _cmd_sweep, "film": _cmd_film,
             "membrane": _cmd_membrane, "direct": _cmd_direct, "oracle": _cmd_oracle,
             "validate": _cmd_validate}


def _write(job, out_dir, rows, columns, diags, status):
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out_dir}: {exc}") from exc
    columns = columns or (list(rows[0]) if rows else ["index"])
    written = []
    if job.outputs.get("csv"):
        path = out_dir / job.outputs["csv"]
        emit_table(rows, "csv", path, columns)
        written.append(str(path))
    if job.outputs.get("json"):
        path = out_dir / job.outputs["json"]
        doc = {"command": job.command, "seed": job.seed, "status": status, "columns": columns,
               "rows": [{c: r[c] for c in columns} for r in rows], "diagnostics": diags}
        try:
            path.write_text(json.dumps(to_jsonable(doc), indent=2) + "\n")
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}") from exc
        written.append(str(path))
    return written


def run_job(config_path, out_dir=None, threads=None, seed=None, command=None):
    """Run one job file; returns the process exit code."""
    config_path = Path(config_path)
    out_dir = Path(out_dir) if out_dir is not None else Path.cwd()
    try:
        raw = json.loads(config_path.read_text())
    except OSError as exc:
        print(f"error: cannot read {config_path}: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"contract violation: {config_path} is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    try:
        job = _Job(raw, command, seed, threads)
        try:
            rows, columns, diags, ok = _HANDLERS[job.command](job, out_dir)
        except SolverError as exc:
            partial = getattr(exc, "partial", None)
            print(f"solver did not converge: {exc}", file=sys.stderr)
            diags = [partial.to_dict()] if partial is not None else []
            diags.append({"error": str(exc), "residual": exc.residual})
            _write(job, out_dir, [], ["index"], diags, "not_converged")
            print(f"{job.command}: solver did not converge (residual {exc.residual})")
            return EXIT_SOLVER
        code = EXIT_OK
        status = "ok"
        if not ok:
            status = "failed_checks" if job.command == "validate" else "not_converged"
            code = EXIT_CONTRACT if job.command == "validate" else EXIT_SOLVER
        written = _write(job, out_dir, rows, columns, diags, status)
    except OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ContractViolation, IntegrandError) as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except HomoglabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    first = ""
    if rows and "value" in rows[0]:
        first = f", value={rows[0]['value']:.10g}"
    print(f"{job.command}: {len(rows)} row(s), status={status}{first} -> {', '.join(written) or 'no files'}")
    return code


def main(argv=None):
    parser = argparse.ArgumentParser(prog="homoglab", description="Reiterated homogenization toolkit.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON job file")
    parser.add_argument("--out-dir", default=None, help="directory for outputs (default: current directory)")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default 1)")
    parser.add_argument("--seed", type=int, default=None, help="override the job seed")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("contract violation: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONTRACT
    return run_job(args.config, args.out_dir, args.threads, args.seed, args.command)


if __name__ == "__main__":
    sys.exit(main())
