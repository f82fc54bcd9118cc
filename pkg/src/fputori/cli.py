"""Command-line experiment drivers.

Usage: fpu <subcommand> --config <file> --out <dir>

Subcommands: chaos-scan, normalize, tori-grid-2d, torus-family,
monodromy, birkhoff-scan.  Each reads a key = value config file
(see config.py), writes plot-ready CSV files into the output
directory, and exits 0 on full success, 2 when some grid points
failed (failures are logged and the scan continues), 1 on a config
error.  Rows are written in grid order and are bit-for-bit
reproducible for a fixed config.
"""

import argparse
import math
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, load_config, require
from .fpu import (ChainConfig, TorusSeed, assemble_H0, semi_sinusoidal_ic,
                  total_energy)
from .normalizer import NormalizerConfig, run as run_normalizer
from .integrator import IntegratorConfig, IntegrationBlowUp
from .freq import FAConfig, frequency_variation, continue_family
from .birkhoff import run_birkhoff, monodromy_angles, scan_semi_sinusoidal
from .series import SeriesError


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


class _Writer:
    def __init__(self, outdir, name, cfg, columns):
        self.path = os.path.join(outdir, name)
        self.fh = open(self.path, "w")
        self.fh.write(f"# fputori {__version__} config-hash "
                      f"{cfg.get('_hash', 'none')}\n")
        self.fh.write("# " + ",".join(columns) + "\n")

    def row(self, *vals):
        self.fh.write(",".join(_fmt(v) for v in vals) + "\n")

    def close(self):
        self.fh.close()


def _chain(cfg):
    require(cfg, "N")
    return ChainConfig(int(cfg["N"]), float(cfg["alpha"]),
                       float(cfg["beta"]))


def _icfg(cfg):
    return IntegratorConfig(float(cfg["h"]), str(cfg["scheme"]),
                            float(cfg["Delta"]), float(cfg["T"]))


def _facfg(cfg):
    return FAConfig(int(cfg["n_components"]), int(cfg["K_M"]),
                    float(cfg["eps_tol"]), float(cfg["mu_tol"]),
                    int(cfg["max_refine_iters"]),
                    float(cfg["eps_filter"]) if "eps_filter" in cfg
                    else None)


def _ncfg(cfg, rbar=None):
    caps = (int(cfg.get("caps_L", 8)), int(cfg.get("caps_K", 24)))
    return NormalizerConfig(int(rbar if rbar is not None
                                else cfg.get("rbar", 12)),
                            int(cfg["K"]), caps,
                            float(cfg["divisor_floor"]))


def _istar_grid(cfg):
    lo = float(cfg.get("Imin", 1e-8))
    hi = float(cfg.get("Imax", 5.0))
    count = int(cfg.get("Icount", 12))
    return np.logspace(math.log10(lo), math.log10(hi), count)


def _normalize_once(cfg, chain, Istar):
    seed = TorusSeed(len(Istar), tuple(float(v) for v in Istar))
    caps = (int(cfg.get("caps_L", 8)), int(cfg.get("caps_K", 24)))
    H0 = assemble_H0(chain, seed, caps, int(cfg["K"]))
    return run_normalizer(H0, _ncfg(cfg), seed)


def cmd_chaos_scan(cfg, outdir, log):
    chain = _chain(cfg)
    icfg = _icfg(cfg)
    facfg = _facfg(cfg)
    amps = np.logspace(math.log10(float(cfg.get("amp_min", 0.01))),
                       math.log10(float(cfg.get("amp_max", 3.0))),
                       int(cfg.get("amp_count", 20)))
    w = _Writer(outdir, "chaos_scan.csv", cfg,
                ["A", "E_S", "dOmega_f1"])
    failures = 0
    for A in amps:
        y0, x0 = semi_sinusoidal_ic(chain, float(A))
        E_S = total_energy(chain, y0, x0) / chain.N
        try:
            dv = frequency_variation(chain, y0, x0, icfg, facfg)
        except (IntegrationBlowUp, ValueError) as e:
            log(f"chaos-scan: A={A:.6g} failed: {e}")
            failures += 1
            continue
        w.row(A, E_S, dv)
    w.close()
    return failures


def _norm_tables(outdir, cfg, tag, res):
    w = _Writer(outdir, f"norms_{tag}.csv", cfg,
                ["r", "chi0", "chi1", "x2", "y2", "min_divisor",
                 "omega1"])
    for rep in res.reports:
        w.row(rep.r, rep.norms["chi0"], rep.norms["chi1"],
              rep.norms["x2"], rep.norms["y2"], rep.min_divisor,
              rep.omega[0])
    w.close()


def cmd_normalize(cfg, outdir, log):
    chain = _chain(cfg)
    require(cfg, "n1", "Istar")
    n1 = int(cfg["n1"])
    Istar = cfg["Istar"]
    if not isinstance(Istar, list):
        Istar = [Istar]
    res = _normalize_once(cfg, chain, [float(v) for v in Istar])
    _norm_tables(outdir, cfg, "run", res)
    with open(os.path.join(outdir, "stack_run.txt"), "w") as fh:
        fh.write(res.stack.to_text())
    w = _Writer(outdir, "normalize.csv", cfg,
                ["n1", "converged", "E_S", "omega1"])
    w.row(n1, int(res.converged),
          res.H.energy / chain.N, res.H.omega[0])
    w.close()
    log(f"normalize: converged={res.converged} ({res.reason})")
    return 0


def cmd_tori_grid_2d(cfg, outdir, log):
    chain = _chain(cfg)
    grid = _istar_grid(cfg)
    w = _Writer(outdir, "tori_grid_2d.csv", cfg,
                ["I1", "I2", "converged", "E_S"])
    failures = 0
    for I1 in grid:
        for I2 in grid:
            try:
                res = _normalize_once(cfg, chain, [I1, I2])
            except (SeriesError, ValueError) as e:
                log(f"tori-grid-2d: I*=({I1:.3e},{I2:.3e}) "
                    f"failed: {e}")
                failures += 1
                continue
            w.row(I1, I2, int(res.converged),
                  res.H.energy / chain.N)
    w.close()
    return failures


def cmd_torus_family(cfg, outdir, log):
    chain = _chain(cfg)
    icfg = _icfg(cfg)
    facfg = _facfg(cfg)
    failures = 0
    family = continue_family(chain, float(cfg["A0"]), 1, facfg, icfg,
                             float(cfg["zeta0"]),
                             float(cfg["zeta_floor"]))
    w = _Writer(outdir, "family_fa.csv", cfg, ["E_S", "omega_f1"])
    for pt in family:
        w.row(pt.E_S, pt.omega_f[0])
    w.close()
    w = _Writer(outdir, "family_nf.csv", cfg,
                ["Istar1", "E_S", "omega1", "converged"])
    for I1 in _istar_grid(cfg):
        try:
            res = _normalize_once(cfg, chain, [I1])
        except (SeriesError, ValueError) as e:
            log(f"torus-family: I*={I1:.3e} failed: {e}")
            failures += 1
            continue
        w.row(I1, res.H.energy / chain.N, res.H.omega[0],
              int(res.converged))
    w.close()
    return failures


def cmd_monodromy(cfg, outdir, log):
    chain = _chain(cfg)
    w = None
    failures = 0
    for I1 in _istar_grid(cfg):
        try:
            res = _normalize_once(cfg, chain, [I1])
        except (SeriesError, ValueError) as e:
            log(f"monodromy: I*={I1:.3e} failed: {e}")
            failures += 1
            continue
        if not res.converged:
            continue
        theta, _ = monodromy_angles(res.H.omega[0], res.H.Omega)
        if w is None:
            cols = ["Istar1", "E_S", "omega1"] + \
                   [f"theta{j+1}" for j in range(len(theta))] + \
                   ["ratio1"]
            w = _Writer(outdir, "monodromy.csv", cfg, cols)
        w.row(I1, res.H.energy / chain.N, res.H.omega[0], *theta,
              res.H.Omega[0] / res.H.omega[0])
    if w is not None:
        w.close()
    return failures


def cmd_birkhoff_scan(cfg, outdir, log):
    chain = _chain(cfg)
    order = int(cfg.get("order", 5))
    w = _Writer(outdir, "birkhoff_scan.csv", cfg,
                ["Istar1", "E_S", "min_R"])
    failures = 0
    for I1 in _istar_grid(cfg):
        try:
            res = _normalize_once(cfg, chain, [I1])
            if not res.converged:
                log(f"birkhoff-scan: I*={I1:.3e} not converged, "
                    "skipped")
                continue
            form = run_birkhoff(res.H, order,
                                float(cfg["divisor_floor"]))
            E_S, min_R, _ = scan_semi_sinusoidal(
                form, res.stack, chain, res.H.energy)
        except (SeriesError, ValueError) as e:
            log(f"birkhoff-scan: I*={I1:.3e} failed: {e}")
            failures += 1
            continue
        w.row(I1, E_S, min_R)
    w.close()
    return failures


_COMMANDS = {
    "chaos-scan": cmd_chaos_scan,
    "normalize": cmd_normalize,
    "tori-grid-2d": cmd_tori_grid_2d,
    "torus-family": cmd_torus_family,
    "monodromy": cmd_monodromy,
    "birkhoff-scan": cmd_birkhoff_scan,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fpu", description="FPU torus experiment drivers")
    parser.add_argument("subcommand", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)

    log_lines = []

    def log(msg):
        log_lines.append(msg)
        print(msg, file=sys.stderr)

    try:
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        failures = _COMMANDS[args.subcommand](cfg, args.out, log)
    except (ConfigError, OSError, ValueError) as e:
        print(f"fpu: config error: {e}", file=sys.stderr)
        return 1
    if log_lines:
        with open(os.path.join(args.out, "failures.log"), "w") as fh:
            fh.write("\n".join(log_lines) + "\n")
    return 2 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
