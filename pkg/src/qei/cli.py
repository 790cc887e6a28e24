"""Command-line front end: `qei <subcommand> --config run.json --out report.json`."""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import microlocal as ml
from . import verify
from .energy import energy_density_field, smeared_energy
from .errors import CertificationError, ConfigError, PhysicsViolation, QeiError
from .fock import build_truncation
from .modes import (StaticGeometry, build_catalog, catalog_summary, eigen_residual, export_catalog_csv)
from .passivity import (CyclicProcess, iter_random_words, passivity_values_diagonal, work_done)
from .quadrature import BumpWindow
from .qwei import run_qwei_campaign
from .states import KMS, Ground, export_two_point_csv, state_from_dict, state_label, two_point

CAMPAIGNS = ("modes", "twopoint", "energy", "qwei", "passivity", "microlocal")
SUBCOMMANDS = CAMPAIGNS + ("verify-all", "run")
HELP = {
    "modes": "build the mode catalog and report frequencies and residuals",
    "twopoint": "evaluate two-point functions at configured point pairs",
    "energy": "energy density fields and smeared energies",
    "qwei": "margins of the static energy inequality over states, windows and positions",
    "passivity": "passivity functional over random words, plus cyclic-process work",
    "microlocal": "windowed Fourier decay probe against the predicted cone",
    "verify-all": "run the acceptance checks",
    "run": "run the campaigns listed in the config",
}

REFERENCE = {
    "geometry": {"L": 2 * np.pi, "m": 1.0, "grid": 2048},
    "catalog": {"J": 256},
    "truncation": {"N": 2, "n_max": 8},
    "seed": 0,
}


def _field(path, msg):
    return ConfigError(f"{path}: {msg}")


@dataclass
class RunConfig:
    geometry: StaticGeometry
    J: int
    N: int = 2
    n_max: int = 8
    states: list = field(default_factory=list)
    windows: list = field(default_factory=list)
    xs: list = field(default_factory=lambda: [0.0])
    ts: list = field(default_factory=lambda: [0.0])
    pairs: list = field(default_factory=list)
    campaigns: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    threads: int = 1
    passivity: dict = field(default_factory=dict)
    microlocal: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config: top level must be a JSON object")
        if "seed" not in d:
            raise _field("seed", "required")
        try:
            seed = int(d["seed"])
        except (TypeError, ValueError):
            raise _field("seed", "must be an integer") from None
        geom = StaticGeometry.from_dict(d.get("geometry", REFERENCE["geometry"]))
        cat_d = d.get("catalog", {})
        try:
            J = int(cat_d.get("J", 256))
        except (TypeError, ValueError):
            raise _field("catalog.J", "must be an integer") from None
        if J < 1:
            raise _field("catalog.J", "must be >= 1")
        tr = d.get("truncation", {})
        N, n_max = int(tr.get("N", 2)), int(tr.get("n_max", 8))
        if N < 1 or n_max < 1:
            raise _field("truncation", "N and n_max must be >= 1")
        if N > J:
            raise _field("truncation.N", f"{N} exceeds J={J}")
        states = []
        for i, sd in enumerate(d.get("states", [])):
            try:
                st = state_from_dict(sd)
            except ConfigError as exc:
                raise _field(f"states[{i}]", str(exc)) from None
            bad = [j for j in st.modes_used() if not 0 <= j < J]
            if bad:
                raise _field(f"states[{i}].mode", f"index {bad[0]} outside 0..{J - 1} (J={J})")
            states.append(st)
        windows = []
        for i, wd in enumerate(d.get("windows", [])):
            try:
                w = BumpWindow(float(wd.get("center", 0.0)), float(wd["width"]), float(wd.get("amplitude", 1.0)),
                               float(wd.get("sharpness", 1.0)))
            except (KeyError, TypeError, ValueError) as exc:
                raise _field(f"windows[{i}]", f"invalid window ({exc})") from None
            if not (w.width > 0 and w.sharpness > 0):
                raise _field(f"windows[{i}].width", "must be positive")
            windows.append(w)
        tols = dict(d.get("tolerances", {}))
        for k, v in tols.items():
            if not (isinstance(v, (int, float)) and v > 0):
                raise _field(f"tolerances.{k}", "must be > 0")
        camps = list(d.get("campaigns", []))
        for c in camps:
            if c not in CAMPAIGNS:
                raise _field("campaigns", f"unknown campaign {c!r}")
        return cls(geom, J, N, n_max, states, windows, [float(x) for x in d.get("xs", [0.0])],
                   [float(t) for t in d.get("ts", [0.0])], [list(map(float, p)) for p in d.get("pairs", [])],
                   camps, tols, seed, int(d.get("threads", 1)), dict(d.get("passivity", {})),
                   dict(d.get("microlocal", {})), d)

    def tol(self, name, default):
        return float(self.tolerances.get(name, default))


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig.from_dict(dict(REFERENCE))
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path} ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return RunConfig.from_dict(d)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"not serializable: {type(o).__name__}")


def dumps(report) -> str:
    return json.dumps(report, sort_keys=True, indent=1, default=_jsonable)


def write_report(report: dict, out, meta: dict):
    """Deterministic report plus a separate metadata file carrying timestamps and environment."""
    text = dumps(report) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    out.with_name(out.stem + ".meta.json").write_text(dumps(meta) + "\n")


def resolve_threads(flag, cfg: RunConfig | None) -> int:
    if flag is not None:
        n = flag
    elif os.environ.get("QEI_THREADS"):
        try:
            n = int(os.environ["QEI_THREADS"])
        except ValueError:
            raise ConfigError("QEI_THREADS must be an integer") from None
    else:
        n = cfg.threads if cfg is not None else 1
    if n < 1:
        raise ConfigError("threads must be >= 1")
    return n


# -- subcommands ----------------------------------------------------------------

def cmd_modes(cfg: RunConfig, args):
    cat = build_catalog(cfg.geometry, cfg.J)
    summary = catalog_summary(cat)
    if not cfg.geometry.ultrastatic:
        summary["eigen_residual"] = eigen_residual(cat, cfg.geometry)
    summary["omegas"] = cat.omegas.tolist()
    if args.csv:
        export_catalog_csv(cat, args.csv)
    ok = summary["symplectic_residual"] <= cfg.tol("symplectic", 1e-6)
    return {"catalog": summary}, ok


def cmd_twopoint(cfg: RunConfig, args):
    cat = build_catalog(cfg.geometry, cfg.J)
    pairs = cfg.pairs or [[0.0, 0.0, 0.0, np.pi]]
    out, rows = [], []
    for st in cfg.states or [Ground()]:
        vals = []
        for t, x, tp, xp in pairs:
            v = complex(two_point(st, cat, (t, x), (tp, xp)))
            vals.append({"p": [t, x], "q": [tp, xp], "value": [v.real, v.imag], "mode_cutoff": cat.J})
            rows.append((t, x, tp, xp, v))
        out.append({"state": state_label(st), "values": vals})
    if args.csv:
        export_two_point_csv(rows, args.csv)
    return {"two_point": out}, True


def cmd_energy(cfg: RunConfig, args):
    cat = build_catalog(cfg.geometry, cfg.J)
    res = []
    for st in cfg.states:
        fld = energy_density_field(st, cat, cfg.ts, cfg.xs)
        smeared = [{"window": g.to_dict(), "x": x, **smeared_energy(st, cat, g, x).to_dict()}
                   for g in cfg.windows for x in cfg.xs]
        res.append({"state": state_label(st), "t": fld.t, "x": fld.x, "rho": np.real(fld.values),
                    "tail_bound": fld.tail_bound, "smeared": smeared})
        if args.csv and len(cfg.states) == 1:
            fld.to_csv(args.csv)
    return {"energy": res}, True


def cmd_qwei(cfg: RunConfig, args):
    cat = build_catalog(cfg.geometry, cfg.J)
    if not cfg.states or not cfg.windows:
        return {"margins": [], "summary": {"triples": 0}}, True
    gw = cfg.windows[0]
    rep = run_qwei_campaign(cat, cfg.states, cfg.windows, cfg.xs, gamma_window=gw, threads=args.threads)
    if args.csv:
        rep.write_margins_csv(args.csv)
        rep.write_Q_csv(Path(args.csv).with_name(Path(args.csv).stem + "_Q.csv"))
    tol = cfg.tol("tol_num", 1e-6)
    if rep.max_tol_num > tol:
        raise CertificationError(f"tol_num {rep.max_tol_num:.2e} exceeds {tol:.0e}")
    return rep.to_dict(), rep.passed


def _coupling(spec, trunc):
    a = trunc.a
    if spec == "position":
        return (a[0] + a[0].T).astype(complex)
    if spec == "number":
        return trunc.number(0).astype(complex)
    if isinstance(spec, list):
        C = np.zeros((trunc.D, trunc.D), complex)
        for j in spec:
            C += (a[trunc.position(int(j))] + a[trunc.position(int(j))].T)
        return C
    raise ConfigError(f"passivity.processes: unknown coupling {spec!r}")


def process_from_dict(d, trunc) -> CyclicProcess:
    try:
        T = float(d["T"])
        env = d.get("envelope", {"kind": "bump"})
        if env.get("kind", "bump") != "bump":
            raise ConfigError("passivity.processes: only bump envelopes are supported")
        width = float(env.get("width", T / 2))
        win = BumpWindow(float(env.get("center", T / 2)), width, float(env.get("amplitude", 1.0)),
                         float(env.get("sharpness", 1.0)))
        return CyclicProcess(T, win, _coupling(d.get("coupling", "position"), trunc), float(d.get("carrier", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"passivity.processes: invalid process ({exc})") from None


def cmd_passivity(cfg: RunConfig, args):
    p = cfg.passivity
    cat = build_catalog(cfg.geometry, max(cfg.J, cfg.N))
    n_max = int(p.get("n_max", cfg.n_max))
    trunc = build_truncation(cat, cfg.N, n_max)
    rng = np.random.default_rng(args.seed)
    labels, probs, proxies = verify.passive_family(trunc, rng, int(p.get("mixtures", 20))) if p.get(
        "thermal", True) else (["vacuum"], np.abs(trunc.vacuum)[None, :] ** 2, [0.0])
    n_words = int(p.get("words", 100))
    mins = np.full(len(labels), np.inf)
    for w in iter_random_words(trunc, n_words, args.seed):
        mins = np.minimum(mins, passivity_values_diagonal(probs, trunc, w))
    tol = cfg.tol("passivity", 1e-9)
    work = []
    for d in p.get("processes", []):
        r = work_done(trunc.vacuum, trunc, process_from_dict(d, trunc), cfg.tol("work", 1e-6))
        work.append(r.to_dict())
    ok = bool(np.all(mins >= -tol)) and all(w["algebraic"] >= -tol for w in work)
    return {"seed": args.seed, "truncation": {"N": cfg.N, "n_max": n_max, "D": trunc.D},
            "words": n_words, "states": [{"state": lab, "min_functional": float(m), "truncation_proxy": pr}
                                         for lab, m, pr in zip(labels, mins, proxies)],
            "worst_margin": float(mins.min()) if n_words else None, "work": work,
            "note": "random words can falsify passivity but not certify it"}, ok


def cmd_microlocal(cfg: RunConfig, args):
    mcfg = cfg.microlocal
    cat = build_catalog(cfg.geometry, cfg.J)
    state_name = args.state or mcfg.get("state", "ground")
    if state_name == "ground":
        st = Ground()
    elif state_name.startswith("kms:"):
        st = KMS(float(state_name.split(":", 1)[1]))
    else:
        raise ConfigError(f"microlocal.state: unknown {state_name!r} (ground | kms:<beta>)")
    fan_size = int(args.fan or mcfg.get("fan", 24))
    hw = float(mcfg.get("half_width", 0.5))
    cone = ml.ConeSpec.at(cat, 0.0)
    res = ml.run_fan(ml.ModeSumTwoPoint(cat, st), cone, cat.L, fan_size=fan_size, half_width=hw,
                     nu_regular=float(mcfg.get("nu_regular", ml.NU_REGULAR)),
                     nu_singular=float(mcfg.get("nu_singular", ml.NU_SINGULAR)))
    if args.csv:
        res.write_csv(args.csv)
        res.write_summary_csv(Path(args.csv).with_name(Path(args.csv).stem + "_summary.csv"))
    trans = {d: ml.conormal_transversality(d).disjoint for d in ("Gamma_x", "gamma_x2", "gamma_t0")}
    return {"state": state_label(st), "probes": [p.to_dict() for p in res.probes], "matches": res.matches,
            "contradictions": res.contradictions, "inconclusive": res.inconclusive, "total": res.total,
            "transversality": trans, "support_infimum": ml.spectrum_support_probe(cat, 0.0, st),
            "thresholds_note": "singular threshold is a heuristic"}, res.contradictions == 0


def cmd_verify_all(cfg: RunConfig, args):
    g = cfg.geometry
    rc = verify.ReferenceConfig(L=g.L, m=g.m, J=cfg.J, N=cfg.N, n_max=cfg.n_max, seed=args.seed,
                                passivity_n_max=int(cfg.passivity.get("n_max", 17)), threads=args.threads)
    select = None if not args.select else {int(s) for s in args.select.split(",")}
    results = []
    for i, *_ in verify.CHECKS:
        if select is not None and i not in select:
            continue
        r = verify.run_check(i, rc)
        print(r.line(), flush=True)
        results.append(r)
    out_dir = Path(args.out_dir) if args.out_dir else None
    report = {"checks": [], "seed": args.seed}
    for r in results:
        d = r.to_dict()
        for big in ("report", "fan"):
            obj = d["details"].pop(big, None)
            if obj is not None and out_dir is not None:
                out_dir.mkdir(parents=True, exist_ok=True)
                if big == "report":
                    obj.write_margins_csv(out_dir / "qwei_margins.csv")
                else:
                    obj.write_summary_csv(out_dir / "microlocal_summary.csv")
        report["checks"].append(d)
    report["passed"] = all(r.passed for r in results)
    return report, report["passed"], {"runtimes_s": {r.index: r.runtime for r in results}}


def cmd_run(cfg: RunConfig, args):
    """Every campaign listed in the config, one report section each."""
    results, ok = {}, True
    for name in cfg.campaigns:
        rep, passed = COMMANDS[name](cfg, args)[:2]
        results[name] = {"results": rep, "passed": passed}
        ok = ok and passed
    return results, ok


COMMANDS = {"run": cmd_run, "modes": cmd_modes, "twopoint": cmd_twopoint, "energy": cmd_energy, "qwei": cmd_qwei,
            "passivity": cmd_passivity, "microlocal": cmd_microlocal, "verify-all": cmd_verify_all}


def build_parser():
    ap = argparse.ArgumentParser(prog="qei", description="Energy-inequality and passivity laboratory for "
                                 "the free scalar field on a static compact 1+1 spacetime.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", help="run configuration (JSON); defaults to the reference setup")
        sp.add_argument("--out", help="report path (JSON); stdout if omitted")
        sp.add_argument("--csv", help="tabulation path (CSV)")
        sp.add_argument("--seed", type=int, help="PRNG seed (overrides the config)")
        sp.add_argument("--threads", type=int, help="worker threads (overrides QEI_THREADS)")
        sp.add_argument("--out-dir", help="directory for auxiliary outputs")
        if name == "microlocal":
            sp.add_argument("--state", help="ground | kms:<beta>")
            sp.add_argument("--fan", type=int, help="number of fan directions (<= 24)")
        if name == "verify-all":
            sp.add_argument("--select", help="comma-separated check numbers")
    return ap


def run(args) -> int:
    t0 = time.time()
    cfg = load_config(args.config)
    args.seed = cfg.seed if args.seed is None else args.seed
    args.threads = resolve_threads(args.threads, cfg)
    for opt in ("state", "fan", "select"):
        if not hasattr(args, opt):
            setattr(args, opt, None)
    out = args.out
    if out is None and args.out_dir:
        out = str(Path(args.out_dir) / f"{args.command}.json")
    res = COMMANDS[args.command](cfg, args)
    report, ok = res[0], res[1]
    extra = res[2] if len(res) > 2 else {}
    meta = {"command": args.command, "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(t0)),
            "elapsed_s": time.time() - t0, "python": platform.python_version(), "numpy": np.__version__,
            "threads": args.threads, **extra}
    write_report({"command": args.command, "results": report, "seed": args.seed, "passed": ok}, out, meta)
    if not ok:
        raise PhysicsViolation(f"{args.command}: inequality violated beyond tolerance")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except QeiError as exc:
        print(f"qei: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"qei: IO error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
