"""Command-line front end.

Five subcommands cover the library surface:

    bath-correlation   dual-evaluation table of the reservoir kernel
    region-scan        joint membership scan over a Bloch-disk slice
    propagate          single-trajectory propagation to CSV
    diagnose           membership bound and slippage for one state
    oracle             exact-reference consistency report

All numeric output is CSV (floats as shortest round-trip decimals,
booleans as 1/0, absent values empty) with a JSON metadata side file
embedding the resolved configuration, or plain JSON for the one-state
reports. Outputs carry no timestamps; identical invocations produce
byte-identical files. Exit codes: 0 success, 2 configuration error,
3 kernel-integrability diagnostic, 4 internal consistency failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .bath import (
    KernelNotIntegrableError,
    LorentzDrudeBath,
    PoleCollisionError,
    correlation,
    fit_exponential_mixture,
)
from .config import ConfigError, RunConfig
from .corrections import NATURAL_SIGN, NaturalFamily, Product, slipped_initial_condition
from .master import build_redfield_generator, csv_float, propagate_markovian, propagate_tcl2
from .operators import BlochVector, bloch_to_density
from .oracle import (
    OracleConsistencyError,
    build_total_hamiltonian,
    default_oracle_bath,
    pin_natural_sign,
    short_time_markovianity,
    validate_scaling,
)
from .regions import region_scan, u_prime_membership

SEED_ENV = "REDFIELD_SLIPPAGE_SEED"


def _base_metadata(cfg: RunConfig, command: str) -> dict:
    return {
        "command": command,
        "config": cfg.to_metadata(),
        "natural_sign": NATURAL_SIGN,
        "seed_env": os.environ.get(SEED_ENV),
        "version": __version__,
    }


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    print(f"wrote {path}")


def _out_dir(cfg, args):
    d = args.out if args.out else str(cfg["output.directory"])
    os.makedirs(d, exist_ok=True)
    return d


def _parse_bloch(text) -> BlochVector:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--initial expects x,y,z, got {text!r}")
    try:
        v = BlochVector(*(float(p) for p in parts))
    except ValueError as exc:
        raise ConfigError(f"--initial expects three floats, got {text!r}") from exc
    if not v.is_physical():
        raise ConfigError(f"initial Bloch vector has norm {v.norm():g} > 1")
    return v


def cmd_bath_correlation(cfg: RunConfig, args) -> int:
    spec = cfg.bath_spec()
    if not isinstance(spec, LorentzDrudeBath):
        raise ConfigError("bath-correlation needs bath.type=lorentz_drude")
    kernel = fit_exponential_mixture(spec, int(cfg["bath.matsubara_k_max"]))
    n = int(cfg["quadrature.n_points"])
    t_lo = float(cfg["quadrature.t_min"])
    t_hi = float(cfg["quadrature.t_max"])
    times = np.geomspace(t_lo, t_hi, n) if n > 1 else np.array([t_lo])
    series = kernel.evaluate(times)
    quadr = correlation(spec, times, method="quadrature")
    lines = ["t,re_c_series,im_c_series,re_c_quadrature,im_c_quadrature,rel_residual"]
    for t, cs, cq in zip(times, np.atleast_1d(series), np.atleast_1d(quadr)):
        resid = abs(cs - cq) / max(abs(cs), abs(cq), 1e-300)
        lines.append(
            ",".join(
                csv_float(v)
                for v in (t, cs.real, cs.imag, cq.real, cq.imag, resid)
            )
        )
    out = _out_dir(cfg, args)
    _write(os.path.join(out, "bath_correlation.csv"), "\n".join(lines) + "\n")
    meta = _base_metadata(cfg, "bath-correlation")
    meta["kernel"] = dict(kernel.meta)
    meta["remainder_bound"] = kernel.remainder_bound
    _write(os.path.join(out, "bath_correlation_meta.json"), _dump_json(meta))
    return 0


def cmd_region_scan(cfg: RunConfig, args) -> int:
    model = cfg.model()
    kernel = cfg.kernel()
    lam = float(cfg["lambda"])
    result = region_scan(
        model,
        kernel,
        lam,
        grid_n=int(cfg["scan.grid_n"]),
        z=float(cfg["scan.z"]),
        t_window=float(cfg["scan.t_window"]),
        refine_iters=int(cfg["scan.refine_iters"]),
        jobs=int(args.jobs),
    )
    out = _out_dir(cfg, args)
    _write(os.path.join(out, "region_scan.csv"), result.to_csv())
    meta = _base_metadata(cfg, "region-scan")
    meta["scan"] = result.metadata
    _write(os.path.join(out, "region_scan_meta.json"), _dump_json(meta))
    return 0


def cmd_propagate(cfg: RunConfig, args) -> int:
    model = cfg.model()
    kernel = cfg.kernel()
    lam = float(cfg["lambda"])
    rho0 = bloch_to_density(_parse_bloch(args.initial))
    times = cfg.propagation_times()
    gen = build_redfield_generator(model, kernel, lam)
    if args.mode == "markov":
        traj = propagate_markovian(gen, rho0, times)
    else:
        traj = propagate_tcl2(gen, rho0, times, kappa=float(args.kappa))
    out = _out_dir(cfg, args)
    _write(os.path.join(out, "trajectory.csv"), traj.to_csv())
    meta = _base_metadata(cfg, "propagate")
    meta["initial"] = [float(p) for p in args.initial.split(",")]
    meta["mode"] = args.mode
    meta["kappa"] = float(args.kappa)
    _write(os.path.join(out, "trajectory_meta.json"), _dump_json(meta))
    return 0


def cmd_diagnose(cfg: RunConfig, args) -> int:
    model = cfg.model()
    kernel = cfg.kernel()
    lam = float(cfg["lambda"])
    bloch = _parse_bloch(args.initial)
    rho = bloch_to_density(bloch)
    res = u_prime_membership(
        model,
        kernel,
        lam,
        rho,
        t_window=float(cfg["scan.t_window"]),
        refine_iters=int(cfg["scan.refine_iters"]),
    )
    report = slipped_initial_condition(model, kernel, lam, rho, Product())
    obj = _base_metadata(cfg, "diagnose")
    obj.update(
        {
            "initial": {"x": bloch.x, "y": bloch.y, "z": bloch.z},
            "p0": res.p0,
            "sup_value": res.sup_value,
            "t_star": res.t_star,
            "bound": res.bound,
            "in_U_prime": res.in_u_prime,
            "degenerate_p0": res.degenerate_p0,
            "slipped": report.to_dict(),
        }
    )
    out = _out_dir(cfg, args)
    _write(os.path.join(out, "diagnose.json"), _dump_json(obj))
    return 0


def cmd_oracle(cfg: RunConfig, args) -> int:
    model = cfg.model()
    bath = default_oracle_bath(
        omega_c=float(cfg["bath.omega_cutoff"]),
        beta=float(cfg["oracle.beta"]),
        n_modes=int(cfg["oracle.n_modes"]),
        omega_max=float(cfg["oracle.omega_max"]) * model.epsilon,
        fock_cutoff=int(cfg["oracle.fock_cutoff"]),
    )
    rho_s = bloch_to_density((0.6, 0.0, 0.3))
    n_times = int(cfg["oracle.n_times"])
    times = np.linspace(0.2, 6.0, n_times)
    lam_c = float(cfg["oracle.cancellation_lambda"])
    sign, details = pin_natural_sign(model, bath, rho_s, lam_c, times)
    scaling = validate_scaling(
        model,
        bath,
        rho_s,
        lambdas=tuple(cfg.oracle_lambdas()),
        t_star=float(cfg["oracle.t_star"]),
    )
    markov = short_time_markovianity(
        model, bath, rho_s, 0.2, np.linspace(0.25, 2.0, 8)
    )
    obj = _base_metadata(cfg, "oracle")
    obj.update(
        {
            "pinned_sign": sign,
            "cancellation": {str(k): v for k, v in details.items()},
            "scaling": scaling,
            "markovianity": markov,
            "total_dimension": int(build_total_hamiltonian(model, bath, lam_c).shape[0]),
        }
    )
    out = _out_dir(cfg, args)
    _write(os.path.join(out, "oracle_report.json"), _dump_json(obj))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="redfield-slippage",
        description="Second-order open-system dynamics for a two-level "
        "system in a bosonic reservoir: kernels, propagation, slippage "
        "corrections and Bloch-disk region scans.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="path to a key = value config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (repeatable)",
        )
        p.add_argument("--out", default=None, help="output directory (default from config)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for scans")

    p = sub.add_parser("bath-correlation", help="dual kernel evaluation table")
    common(p)
    p = sub.add_parser("region-scan", help="membership scan over a Bloch-disk slice")
    common(p)
    p = sub.add_parser("propagate", help="propagate one initial state to CSV")
    common(p)
    p.add_argument("--initial", default="1,0,0", help="initial Bloch vector x,y,z")
    p.add_argument("--mode", choices=("markov", "tcl2"), default="markov")
    p.add_argument("--kappa", type=float, default=0.0, help="initial-correlation weight (tcl2)")
    p = sub.add_parser("diagnose", help="membership bound and slippage for one state")
    common(p)
    p.add_argument("--initial", default="1,0,0", help="Bloch vector x,y,z")
    p = sub.add_parser("oracle", help="exact-reference consistency report")
    common(p)
    return parser


_COMMANDS = {
    "bath-correlation": cmd_bath_correlation,
    "region-scan": cmd_region_scan,
    "propagate": cmd_propagate,
    "diagnose": cmd_diagnose,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.overrides)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (KernelNotIntegrableError, PoleCollisionError) as exc:
        print(f"kernel diagnostic: {exc}", file=sys.stderr)
        return 3
    except OracleConsistencyError as exc:
        print(f"consistency failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
