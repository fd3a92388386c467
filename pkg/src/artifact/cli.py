"""Command-line front end.

    artifact {solve,simulate,asymptotics,calibrate,verify} --config RUN.json --out DIR

Reports are written as sorted, indented JSON and never contain wall-clock
data, so rerunning a config with the same seed reproduces them byte for
byte; timings go to ``run_metadata.json`` next to them.

Exit codes: 0 success, 2 invalid config or parameters, 3 numerical failure,
4 file I/O problems.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import asymptotics as asy
from . import calibration as cal
from . import equilibrium as eq
from .errors import NumericalError, ValidationError
from .market import ModelParams, require_valid, risk_aggregates
from .riccati import solve_riccati

log = logging.getLogger("artifact")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "solver": {"steps": 4000, "tol": 1e-10},
    "simulate": {"n_paths": 1000, "dt": None, "seed": 0, "save_paths": 10},
    "verify": {"eps": [0.1, -0.1, 0.01, -0.01], "n_perturb": 4, "perturb_seed": 12345, "refinement": True,
               "tol": 1e-10},
    "asymptotics": {"lambda_grid": [1e-1, 1e-2, 1e-3], "k_grid": [1, 1.5, 2, 3, 5, 10, 20, 50], "k_ref": 2.0,
                    "prices": None, "steps": 4000},
    "calibrate": {"dataset": None, "panels": None, "moments": None, "restarts": 8, "seed": 0,
                  "lambda_mode": "illiq", "Lambda": None, "gamma_mode": "formula", "gammas": None, "k_ref": 2.0,
                  "weighting": "relative", "k_grid": [1, 1.5, 2, 3, 5, 10, 20, 50], "target_premium": None},
}


class RunConfig:
    """Parsed run configuration; relative file paths resolve against the config's folder."""

    def __init__(self, doc: dict, base: Path):
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        unknown = set(doc) - {"model", *DEFAULTS}
        if unknown:
            raise ValidationError(f"unknown config sections: {', '.join(sorted(unknown))}")
        self.doc = doc
        self.base = base
        self.sections = {}
        for name, defaults in DEFAULTS.items():
            given = doc.get(name, {}) or {}
            if not isinstance(given, dict):
                raise ValidationError(f"config section {name!r} must be an object")
            extra = set(given) - set(defaults)
            if extra:
                raise ValidationError(f"unknown keys in {name!r}: {', '.join(sorted(extra))}")
            self.sections[name] = {**defaults, **given}

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        text = path.read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
        return cls(doc, path.resolve().parent)

    def __getitem__(self, name: str) -> dict:
        return self.sections[name]

    def model(self) -> ModelParams:
        if "model" not in self.doc:
            raise ValidationError("config has no model section")
        params = ModelParams.from_dict(self.doc["model"])
        require_valid(params)
        return params

    def path(self, value) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    def override_seed(self, seed: int) -> None:
        self.sections["simulate"]["seed"] = seed
        self.sections["calibrate"]["seed"] = seed

    def digest(self) -> str:
        canon = json.dumps({"model": self.doc.get("model"), **self.sections}, sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def write_report(out: Path, name: str, command: str, cfg: RunConfig, seed, result: dict) -> Path:
    doc = {
        "command": command,
        "artifact_version": __version__,
        "config_hash": cfg.digest(),
        "seed": seed,
        "result": _jsonable(result),
    }
    path = out / name
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _grid_dt(params: ModelParams, sim: dict) -> float:
    return sim["dt"] if sim["dt"] is not None else params.horizon / 250


# --- commands -----------------------------------------------------------------

def cmd_solve(cfg: RunConfig, out: Path, threads: int = 1) -> list[Path]:
    params = cfg.model()
    sol = solve_riccati(params, steps=cfg["solver"]["steps"], tol=cfg["solver"]["tol"])
    coef = eq.equilibrium_coefficients(params, sol)
    sol.to_csv(out / "riccati.csv")
    result = {"model_digest": params.digest(), "solver": sol.metadata, "coefficients": coef.to_dict()}
    return [out / "riccati.csv", write_report(out, "coefficients.json", "solve", cfg, None, result)]


def cmd_simulate(cfg: RunConfig, out: Path, threads: int = 1) -> list[Path]:
    params = cfg.model()
    sim = cfg["simulate"]
    sol = solve_riccati(params, steps=cfg["solver"]["steps"], tol=cfg["solver"]["tol"])
    paths = eq.simulate(params, sol, sim["n_paths"], _grid_dt(params, sim), sim["seed"], threads)
    paths.to_csv(out / "paths.csv", max_paths=sim["save_paths"])
    result = {
        "model_digest": params.digest(),
        "n_paths": paths.n_paths,
        "dt": paths.dt,
        "initial_price": paths.S[0, 0].tolist(),
        "terminal_price_mean": paths.S[:, -1].mean(axis=0).tolist(),
        "terminal_price_std": paths.S[:, -1].std(axis=0, ddof=1).tolist() if paths.n_paths > 1 else None,
        "mean_abs_rate": np.abs(paths.phidot).mean(axis=(0, 1)).tolist(),
        "max_frictionless_price_gap": float(np.max(np.abs(paths.S - paths.S_bar))),
    }
    return [out / "paths.csv", write_report(out, "simulation.json", "simulate", cfg, sim["seed"], result)]


def cmd_verify(cfg: RunConfig, out: Path, threads: int = 1) -> list[Path]:
    params = cfg.model()
    sim, ver = cfg["simulate"], cfg["verify"]
    sol = solve_riccati(params, steps=cfg["solver"]["steps"], tol=cfg["solver"]["tol"])
    step = _grid_dt(params, sim)
    paths = eq.simulate(params, sol, sim["n_paths"], step, sim["seed"], threads)
    rep = eq.verify_equilibrium(params, sol, paths, tol=ver["tol"], eps_list=ver["eps"],
                                n_perturb=ver["n_perturb"], seed=ver["perturb_seed"])
    result = {"model_digest": params.digest(), "n_paths": sim["n_paths"], "dt": paths.dt,
              "verification": rep.to_dict()}
    gap = float(np.max(np.abs(paths.S - paths.S_bar)))
    result["frictionless"] = {
        "equal_risk_aversion": bool(np.all(params.gammas == params.gammas[0])),
        "max_price_gap": gap,
        "coincides": gap <= 1e-10 * max(1.0, float(np.max(np.abs(paths.S_bar)))),
    }
    if ver["refinement"]:
        result["terminal_refinement"] = eq.terminal_error_refinement(params, sol, sim["n_paths"], step,
                                                                     sim["seed"], threads)
    return [write_report(out, "verification.json", "verify", cfg, sim["seed"], result)]


def cmd_asymptotics(cfg: RunConfig, out: Path, threads: int = 1) -> list[Path]:
    params = cfg.model()
    a = cfg["asymptotics"]
    rep = asy.asymptotic_report(params, risk_aggregates(params), a["prices"])
    conv = asy.asymptotic_convergence_check(params, a["lambda_grid"], steps=a["steps"], threads=threads)
    conv.write_csv(out / "convergence.csv")
    written = [out / "convergence.csv"]
    result = {"model_digest": params.digest(), "report": rep.to_dict(), "convergence": conv.to_dict()}
    if a["prices"] is not None:
        premium = cal.premium_from_adjustments(rep.relative_adjustments)
        rows = asy.k_scan_rows(premium, a["k_grid"], a["k_ref"])
        asy.write_k_scan(out / "k_scan.csv", rows)
        written.append(out / "k_scan.csv")
        result["premium_ref"] = premium
    written.append(write_report(out, "asymptotics.json", "asymptotics", cfg, None, result))
    return written


def _dataset(cfg: RunConfig, c: dict) -> cal.CalibrationDataset:
    if c["dataset"] == "reference":
        return cal.reference_dataset()
    if c["dataset"] == "bundled":
        from .synthetic import bundled_dataset

        return bundled_dataset()
    if c["dataset"] is not None:
        raise ValidationError(f"unknown dataset {c['dataset']!r}; use 'reference', 'bundled' or panels")
    if not c["panels"]:
        raise ValidationError("calibrate needs 'panels' or a 'dataset'")
    moments = None if c["moments"] is None else cfg.path(c["moments"])
    return cal.CalibrationDataset.from_files([cfg.path(p) for p in c["panels"]], moments)


def cmd_calibrate(cfg: RunConfig, out: Path, threads: int = 1) -> list[Path]:
    c = cfg["calibrate"]
    ds = _dataset(cfg, c)
    res = cal.calibrate(
        ds, k=c["k_ref"], gamma_mode=c["gamma_mode"], gammas=c["gammas"], lambda_mode=c["lambda_mode"],
        Lambda=c["Lambda"], restarts=c["restarts"], seed=c["seed"], weighting=c["weighting"], threads=threads,
    )
    scan = cal.liquidity_premium_scan(res, c["k_grid"], c["target_premium"])
    scan.write_csv(out / "premium_scan.csv")
    result = {"dataset": ds.to_dict(), "calibration": res.to_dict(), "premium_scan": scan.to_dict()}
    return [out / "premium_scan.csv", write_report(out, "calibration.json", "calibrate", cfg, c["seed"], result)]


COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "asymptotics": cmd_asymptotics,
    "calibrate": cmd_calibrate,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="artifact", description="Radner equilibria with quadratic trading costs")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="run configuration (JSON)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker cap")
        sp.add_argument("--seed", type=int, default=None, help="override the config seeds")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        if args.threads < 1:
            raise ValidationError("--threads must be at least 1")
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg.override_seed(args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        written = COMMANDS[args.command](cfg, out, args.threads)
        meta = {
            "command": args.command,
            "finished_utc": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
            "elapsed_seconds": round(time.perf_counter() - started, 3),
            "threads": args.threads,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "files": [p.name for p in written],
        }
        (out / "run_metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except (NumericalError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, ValueError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for p in written:
        log.info("wrote %s", p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
