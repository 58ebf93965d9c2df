"""Command-line experiment driver.

Every command reads an optional ``--config`` file (INI sections: ``[run]`` for
shared keys, ``[<command>]`` for per-command keys), lets flags override it,
writes ``<command>.json`` (and ``.csv`` where tabular) under ``--out`` and
prints one summary line per step.

Exit status: 0 on success, 1 when a proved property fails, 2 on a config error.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import re
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import CertificateError, CoverError, FbzError
from .mmspace import FAMILIES, build_fractal, diagnostics, save_space
from .scale_kernel import KernelFamily, ScaleFn

COMMANDS = ("gen", "diag", "energy-sweep", "bbm", "ks", "alpha", "whitney", "uniform-check",
            "extend", "check-framework", "lemmas")

DEFAULTS = {
    "kind": "interval", "level": "8", "metric": "euclidean", "p": "2", "psi": "walk",
    "family": "ks", "theta_p": "1", "omega": "full", "u": "", "grid": "", "eps": "0.1",
    "A": "", "levels": "", "cases": "200", "seed": "0", "threads": "1", "out": "fbz-out",
}


class ConfigError(Exception):
    pass


class CheckFailed(Exception):
    pass


# ----------------------------------------------------------------- parsing
def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fbz", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="INI file with [run] and [<command>] sections")
    ap.add_argument("--kind", choices=sorted(FAMILIES))
    ap.add_argument("--level", type=int)
    ap.add_argument("--metric", choices=("euclidean", "geodesic-graph"))
    ap.add_argument("--p", type=float)
    ap.add_argument("--psi", help="beta=<x>, beta=walk, or breaks=a,b;betas=x,y,z")
    ap.add_argument("--family", choices=("ks", "ks-hat", "bbm"))
    ap.add_argument("--theta-p", dest="theta_p", type=float)
    ap.add_argument("--omega", help="full or box(lo,hi) / box(lo1,..,lod,hi1,..,hid)")
    ap.add_argument("--u", help="domain U for whitney/uniform-check/extend, same syntax as --omega")
    ap.add_argument("--grid", help="comma-separated r, eps or theta grid")
    ap.add_argument("--eps", type=float, help="Whitney parameter")
    ap.add_argument("--A", dest="A", type=float, help="uniformity or dilation constant")
    ap.add_argument("--levels", help="comma-separated levels for alpha")
    ap.add_argument("--cases", type=int, help="fuzz cases for check-framework and lemmas")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out")
    return ap


def load_config(argv) -> dict:
    args = _parser().parse_args(argv)
    cfg = dict(DEFAULTS)
    if args.config:
        ini = configparser.ConfigParser()
        if not ini.read(args.config, encoding="utf-8"):
            raise ConfigError(f"cannot read config file {args.config}")
        for section in ("run", args.command):
            if ini.has_section(section):
                for k, v in ini.items(section):
                    k = k.replace("-", "_")
                    if k not in DEFAULTS and k != "a":
                        raise ConfigError(f"unknown config key {k!r} in [{section}]")
                    cfg["A" if k == "a" else k] = v
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = str(v)
    cfg["command"] = args.command
    return cfg


def _num(cfg, key, cast=float):
    try:
        return cast(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {cfg[key]!r}") from exc


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def parse_psi(text: str, kind: str, p: float) -> ScaleFn:
    from .penergy import walk_dimension
    text = text.strip()
    if text in ("walk", "beta=walk"):
        return ScaleFn.power(walk_dimension(kind, p))
    m = re.fullmatch(r"beta=([0-9.eE+-]+)", text)
    if m:
        return ScaleFn.power(float(m.group(1)))
    m = re.fullmatch(r"breaks=([^;]+);betas=(.+)", text)
    if m:
        return ScaleFn.piecewise(_floats(m.group(1)), _floats(m.group(2)))
    raise ConfigError(f"bad psi spec {text!r}")


def parse_region(text: str, space):
    """``full`` -> None, ``box(...)`` -> boolean mask of the open box."""
    from .covers import box_mask
    text = text.strip().replace(" ", "")
    if text in ("", "full"):
        return None
    m = re.fullmatch(r"box\((.*)\)", text)
    if not m:
        raise ConfigError(f"bad region {text!r}")
    vals = _floats(m.group(1))
    d = space.dim
    if len(vals) == 2:
        lo, hi = [vals[0]] * d, [vals[1]] * d
    elif len(vals) == 2 * d:
        lo, hi = vals[:d], vals[d:]
    else:
        raise ConfigError(f"box needs 2 or {2 * d} numbers")
    if any(a >= b for a, b in zip(lo, hi)):
        raise ConfigError("box lower corner must be below the upper corner")
    return box_mask(space, lo, hi)


def config_hash(cfg: dict) -> str:
    keys = sorted(k for k in cfg if k not in ("threads", "out"))
    blob = json.dumps({k: cfg[k] for k in keys}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ------------------------------------------------------------------ output
class Writer:
    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)

    def json(self, name: str, payload: dict) -> Path:
        payload = dict(payload)
        payload["config_hash"] = config_hash(self.cfg)
        payload["version"] = __version__
        payload["config"] = {k: v for k, v in self.cfg.items() if k not in ("threads", "out")}
        path = self.out / f"{name}.json"
        path.write_text(json.dumps(_plain(payload), sort_keys=True, indent=1) + "\n", encoding="utf-8")
        return path

    def text(self, name: str, body: str) -> Path:
        path = self.out / name
        path.write_text(body, encoding="utf-8")
        return path


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def say(step: str, msg: str) -> None:
    print(f"[{step}] {msg}", flush=True)


# ---------------------------------------------------------------- commands
def _space(cfg):
    return build_fractal(cfg["kind"], _num(cfg, "level", int), metric=cfg["metric"])


def _bank(space, p, seed):
    from .besov import default_bank
    return default_bank(space, p, seed=seed)


def cmd_gen(cfg, wr: Writer) -> None:
    sp = _space(cfg)
    path = wr.out / f"{cfg['kind']}-{cfg['level']}.space"
    save_space(sp, path)
    wr.json("gen", {"n_points": sp.n, "path": str(path), "diam": sp.diam, "spacing": sp.spacing})
    say("gen", f"{sp.n} points written to {path}")


def cmd_diag(cfg, wr: Writer) -> None:
    sp = _space(cfg)
    dg = diagnostics(sp, seed=_num(cfg, "seed", int))
    wr.json("diag", dg.to_dict())
    say("diag", f"doubling {dg.doubling_const:.4g}, Ahlfors Q {dg.ahlfors[0]:.4g}, "
                f"chain {dg.chain_const:.4g}")


def cmd_energy_sweep(cfg, wr: Writer) -> None:
    from .penergy import boundary_sets, capacity_value, energy, fractal_form
    p = _num(cfg, "p")
    levels = [int(v) for v in _floats(cfg["levels"])] or [_num(cfg, "level", int)]
    rows = ["level,function,energy"]
    caps = {}
    for L in levels:
        sp = build_fractal(cfg["kind"], L, metric=cfg["metric"])
        form = fractal_form(sp, p)
        for name, u in _bank(sp, p, _num(cfg, "seed", int)).items():
            rows.append(f"{L},{name},{energy(form, u, _num(cfg, 'threads', int))!r}")
        E1, E0 = boundary_sets(sp)
        caps[L] = capacity_value(fractal_form(sp, p, normalization="unit"), E1, E0)
        say("energy-sweep", f"level {L}: unit-weight capacity {caps[L]:.6g}")
    ratios = [caps[b] / caps[a] for a, b in zip(levels, levels[1:]) if b == a + 1]
    wr.text("energy-sweep.csv", "\n".join(rows) + "\n")
    wr.json("energy-sweep", {"capacities": caps, "consecutive_ratios": ratios})


def cmd_bbm(cfg, wr: Writer) -> None:
    from .besov import bbm_sweep
    sp = _space(cfg)
    p, tp = _num(cfg, "p"), _num(cfg, "theta_p")
    grid = _floats(cfg["grid"]) or [tp - d for d in (0.2, 0.1, 0.05, 0.025, 0.0125)]
    u = sp.coords[:, 0]
    rep = bbm_sweep(sp, u, p, tp, grid, parse_region(cfg["omega"], sp), _num(cfg, "threads", int))
    wr.text("bbm.csv", rep.to_csv())
    wr.json("bbm", json.loads(rep.to_json()))
    say("bbm", f"{len(grid)} theta values, extrapolated limit {rep.extrapolated_limit}")


def _family(cfg, psi) -> KernelFamily:
    name = cfg["family"]
    if name == "ks":
        return KernelFamily.ks(psi)
    if name == "ks-hat":
        return KernelFamily.ks_hat()
    if name == "bbm":
        return KernelFamily.bbm(_num(cfg, "theta_p"), _num(cfg, "p"))
    raise ConfigError(f"unknown kernel family {name!r}")


def cmd_ks(cfg, wr: Writer) -> None:
    from .besov import kernel_sweep, ks_sweep
    sp = _space(cfg)
    p = _num(cfg, "p")
    psi = parse_psi(cfg["psi"], cfg["kind"], p)
    grid = _floats(cfg["grid"]) or [2.0 ** -k for k in range(3, 9)]
    u = sp.coords[:, 0]
    omega = parse_region(cfg["omega"], sp)
    threads = _num(cfg, "threads", int)
    rep = ks_sweep(sp, u, p, psi, grid, "psi_of_r", omega, threads)
    say("ks", f"{len(grid)} radii, value at smallest r {rep.values[-1]:.6g}")
    kern = kernel_sweep(sp, u, p, psi, _family(cfg, psi), grid, omega, threads)
    ratio = kern.sup_value / kern.liminf_value if kern.liminf_value > 0 else math.inf
    say("ks", f"{kern.functional} sweep, sup/tail-min ratio {ratio:.4g}")
    wr.text("ks.csv", rep.to_csv() + kern.to_csv().split("\n", 1)[1])
    wr.json("ks", {"ks": json.loads(rep.to_json()), "kernel": json.loads(kern.to_json()),
                   "monotonicity_ratio": ratio})


def cmd_alpha(cfg, wr: Writer) -> None:
    from .besov import estimate_alpha
    p = _num(cfg, "p")
    L = _num(cfg, "level", int)
    levels = [int(v) for v in _floats(cfg["levels"])] or [L - 2, L - 1, L]
    fam = {k: build_fractal(cfg["kind"], k, metric=cfg["metric"]) for k in levels}
    est = estimate_alpha(fam, p, threads=_num(cfg, "threads", int))
    wr.json("alpha", json.loads(est.to_json()))
    say("alpha", f"alpha_hat {est.alpha_hat:.4f} in [{est.bracket[0]:.4f}, {est.bracket[1]:.4f}]"
                 + (f" flags: {'; '.join(est.flags)}" if est.flags else ""))


def _domain(cfg, sp):
    U = parse_region(cfg["u"] or "box(0.1,0.9)", sp)
    if U is None:
        raise ConfigError("this command needs a proper subdomain --u box(...)")
    return U


def cmd_whitney(cfg, wr: Writer) -> None:
    from .covers import verify_whitney, whitney_cover
    sp = _space(cfg)
    U = _domain(cfg, sp)
    eps = _num(cfg, "eps")
    A = _num(cfg, "A") if cfg["A"] else None
    cov = whitney_cover(sp, U, eps)
    rep = verify_whitney(cov, A=A, seed=_num(cfg, "seed", int))
    wr.text("whitney.csv", "center,radius,delta_U\n" + "".join(
        f"{c},{r!r},{d!r}\n" for c, r, d in zip(cov.centers, cov.radii, cov.delta)))
    wr.json("whitney", {"certificate": json.loads(cov.cert_json()),
                        "verification": json.loads(rep.to_json())})
    ok = cov.cert.ok and rep.ok
    say("whitney", f"{len(cov)} balls, overlap {rep.overlap_max}, all checks "
                   f"{'pass' if ok else 'FAIL'}")
    if not ok:
        raise CheckFailed("Whitney certificate failed")


def cmd_uniform_check(cfg, wr: Writer) -> None:
    from .covers import check_uniform_domain
    sp = _space(cfg)
    U = _domain(cfg, sp)
    A = _num(cfg, "A") if cfg["A"] else 4.0
    cert = check_uniform_domain(sp, U, A, seed=_num(cfg, "seed", int))
    wr.json("uniform-check", json.loads(cert.to_json()) | {"A_needed": cert.A_needed})
    say("uniform-check", f"verdict {cert.verdict}, A needed {cert.A_needed:.4g}")


def cmd_extend(cfg, wr: Writer) -> None:
    from .partition_ext import build_reflection, extend, reflection_partition, verify_extension
    from .penergy import fractal_form
    sp = _space(cfg)
    U = _domain(cfg, sp) if cfg["u"] else parse_region("box(0,0.5)", sp)
    p = _num(cfg, "p")
    psi = parse_psi(cfg["psi"], cfg["kind"], p)
    eps = min(_num(cfg, "eps"), 1 / 15)
    refl = build_reflection(sp, U, eps)
    part = reflection_partition(refl)
    form = fractal_form(sp, p)
    u = np.cos(3.0 * sp.coords[:, 0]) + sp.coords[:, -1]
    ext = extend(sp, U, u, refl, part)
    bounds = verify_extension(sp, U, u, form, psi, ext, seed=_num(cfg, "seed", int))
    wr.text("extend.csv", "vertex,in_U,u,ext\n" + "".join(
        f"{i},{int(U[i])},{u[i]!r},{ext[i]!r}\n" for i in range(sp.n)))
    wr.json("extend", {"reflection": json.loads(refl.to_json()), "bounds": bounds})
    say("extend", f"C1 {bounds['C1']:.4g}, C_energy {bounds['C_energy']:.4g}, "
                  f"restriction exact {bounds['restriction_exact']}")
    if not (bounds["restriction_exact"] and refl.corridor_ok):
        raise CheckFailed("extension restriction or corridor check failed")


def cmd_check_framework(cfg, wr: Writer) -> None:
    from .penergy import contraction_check, energy, energy_measure, fractal_form, lattice_ops_check
    sp = _space(cfg)
    p = _num(cfg, "p")
    form = fractal_form(sp, p)
    rng = np.random.default_rng(_num(cfg, "seed", int))
    n = _num(cfg, "cases", int)
    bad = {"contraction": 0, "triangle": 0, "measure_total": 0}
    worst_lattice = 0.0
    for _ in range(n):
        u = rng.standard_normal(sp.n)
        v = rng.standard_normal(sp.n)
        xs = np.sort(rng.uniform(-3, 3, 4))
        ys = np.concatenate([[0.0], np.cumsum(np.diff(xs) * rng.uniform(-1, 1, 3))])
        if not contraction_check(form, u, xs, ys)[0]:
            bad["contraction"] += 1
        a, b, c = (energy(form, w) ** (1 / p) for w in (u + v, u, v))
        if a > (b + c) * (1 + 1e-12):
            bad["triangle"] += 1
        tot = energy_measure(form, u).total
        if abs(tot - energy(form, u)) > 1e-10 * max(1.0, tot):
            bad["measure_total"] += 1
        worst_lattice = max(worst_lattice, lattice_ops_check(form, u, v)["C_lattice"])
    wr.json("check-framework", {"cases": n, "violations": bad, "max_C_lattice": worst_lattice})
    total = sum(bad.values())
    say("check-framework", f"{n} cases, {total} violations, max lattice constant {worst_lattice:.4g}")
    if total:
        raise CheckFailed("framework property violated")


def cmd_lemmas(cfg, wr: Writer) -> None:
    from .besov import doubling_ratio, lemma_inequality_checks
    sp = _space(cfg)
    p = _num(cfg, "p")
    rng = np.random.default_rng(_num(cfg, "seed", int))
    n = _num(cfg, "cases", int)
    bad = {"doublevar": 0, "triint": 0}
    cd_cache = {}
    h = sp.spacing
    for _ in range(n):
        u = rng.standard_normal(sp.n)
        z = int(rng.integers(sp.n))
        r = float(rng.uniform(2 * h, 0.3 * sp.diam))
        delta = float(rng.uniform(1.5 * h, 0.1 * sp.diam))
        key = round(delta, 12)
        if key not in cd_cache:
            cd_cache[key] = doubling_ratio(sp, delta)
        rep = lemma_inequality_checks(sp, u, z, r, delta, p=p, c_D=cd_cache[key])
        for k in bad:
            bad[k] += not rep[k]["ok"]
    wr.json("lemmas", {"cases": n, "violations": bad})
    say("lemmas", f"{n} cases, violations {bad}")
    if sum(bad.values()):
        raise CheckFailed("inequality violated")


HANDLERS = {
    "gen": cmd_gen, "diag": cmd_diag, "energy-sweep": cmd_energy_sweep, "bbm": cmd_bbm,
    "ks": cmd_ks, "alpha": cmd_alpha, "whitney": cmd_whitney, "uniform-check": cmd_uniform_check,
    "extend": cmd_extend, "check-framework": cmd_check_framework, "lemmas": cmd_lemmas,
}


def run(command: str, cfg: dict) -> int:
    cfg = dict(DEFAULTS) | cfg
    cfg["command"] = command
    try:
        wr = Writer(cfg)
        HANDLERS[command](cfg, wr)
    except (CheckFailed, CertificateError, CoverError) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, FbzError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv: Optional[list] = None) -> int:
    try:
        cfg = load_config(sys.argv[1:] if argv is None else argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return 2 if exc.code else 0
    return run(cfg.pop("command"), cfg)


if __name__ == "__main__":
    sys.exit(main())
