"""Experiment runner: every laboratory module behind one executable.

Configuration is plain key=value text with one level of [section]
headers.  Resolution order, lowest to highest: built-in defaults, the
--config file, environment variables KMSLAB_<SECTION>_<KEY>, command
line flags.  Every run writes a manifest echoing the resolved values it
consumed plus the tool version, so a run is reproducible from its
output directory alone.  All numeric file output uses 17 significant
digits and fixed reduction order; identical configuration and seed give
byte-identical files.

Thread control must happen before the numeric libraries load, so this
module imports them lazily inside the subcommands; --threads (or
KMSLAB_THREADS) pins the usual BLAS/OpenMP pool sizes.
"""

from __future__ import annotations

import math
import os
import sys

import click

from . import __version__
from .errors import NumericalError, ValidationError

_ENV_PREFIX = "KMSLAB"

_DEFAULTS = {
    "global": {
        "beta": "1.0",
        "mass": "0.0",
        "zeta": format(math.pi, ".17g"),
        "n_grid": "1024",
    },
    "detector": {
        "gap": "1.0",
        "energies": "0.5,1.0,1.5,2.0",
    },
    "trajectory": {
        "kind": "rest",
        "v": "0.5",
        "accel": "1.0",
    },
    "liouville": {
        "gap": "1.0",
        "family": "jittered",
        "n_side": "12",
        "n_tot_max": "3",
        "amplitude": "0.03",
        "lambdas": "0.0,0.02,0.04,0.08",
        "coupling_offdiagonal": "1.0",
        "evolve_family": "shell",
        "evolve_n_tot_max": "4",
        "evolve_amplitude": "1.0",
        "evolve_lambda": "auto",
        "initial": "excited",
        "dt": "0.5",
        "t_max": "auto",
    },
    "disjointness": {
        "beta2": "2.0",
        "v": "0.0",
        "n_max_modes": "200",
        "s_lo": "0.1",
        "s_hi": "5.0",
        "threshold": "0.01",
    },
}


def _resolve_config(config_path):
    """Defaults, then file, then environment, as a {section: {key: str}}."""
    resolved = {sec: dict(kv) for sec, kv in _DEFAULTS.items()}
    if config_path is not None:
        from .textio import read_keyvals
        try:
            flat = read_keyvals(config_path)
        except (OSError, ValueError) as exc:
            raise ValidationError("cannot read config %s: %s" % (config_path, exc))
        for key, val in flat.items():
            if "." not in key:
                raise ValidationError(
                    "config key %r lacks a [section] header" % key)
            sec, name = key.split(".", 1)
            if sec not in resolved:
                raise ValidationError("unknown config section [%s]" % sec)
            if name not in resolved[sec]:
                raise ValidationError(
                    "unknown config key %r in section [%s]" % (name, sec))
            resolved[sec][name] = val
    for sec, kv in resolved.items():
        for name in kv:
            env_key = "%s_%s_%s" % (_ENV_PREFIX, sec.upper(), name.upper())
            if env_key in os.environ:
                kv[name] = os.environ[env_key]
    return resolved


def _cfg_float(cfg, section, key, positive=False, nonnegative=False):
    raw = cfg[section][key]
    try:
        val = float(raw)
    except ValueError:
        raise ValidationError("[%s] %s: not a number: %r" % (section, key, raw))
    if positive and not val > 0:
        raise ValidationError(
            "[%s] %s: must be positive, got %s" % (section, key, raw))
    if nonnegative and val < 0:
        raise ValidationError(
            "[%s] %s: must be >= 0, got %s" % (section, key, raw))
    return val


def _cfg_int(cfg, section, key, minimum=None):
    raw = cfg[section][key]
    try:
        val = int(raw)
    except ValueError:
        raise ValidationError("[%s] %s: not an integer: %r" % (section, key, raw))
    if minimum is not None and val < minimum:
        raise ValidationError(
            "[%s] %s: must be >= %d, got %s" % (section, key, minimum, raw))
    return val


def _cfg_floats(cfg, section, key):
    raw = cfg[section][key]
    try:
        return [float(x) for x in raw.split(",") if x.strip() != ""]
    except ValueError:
        raise ValidationError(
            "[%s] %s: not a comma-separated number list: %r"
            % (section, key, raw))


def _write_manifest(out_dir, command, cfg, sections, seed, extra=()):
    from .textio import write_keyvals
    pairs = [("[run]", ""), ("command", command), ("version", __version__),
             ("seed", str(seed))]
    for sec in sections:
        pairs.append(("[%s]" % sec, ""))
        for key in sorted(cfg[sec]):
            pairs.append((key, cfg[sec][key]))
    pairs += list(extra)
    write_keyvals(os.path.join(out_dir, "manifest.txt"), pairs)


def _prepare(ctx):
    cfg = _resolve_config(ctx.obj["config"])
    out_dir = ctx.obj["out"]
    from .textio import ensure_dir
    ensure_dir(out_dir)
    return cfg, out_dir, ctx.obj["seed"]


@click.group()
@click.option("--config", type=click.Path(), default=None,
              help="key=value configuration file with [section] headers")
@click.option("--out", type=click.Path(), default=".",
              help="output directory for CSV files and the manifest")
@click.option("--seed", type=int, default=0, show_default=True,
              help="seed for randomized mode-grid jitter")
@click.option("--threads", type=int, default=None,
              help="pin BLAS/OpenMP thread pools (must precede heavy work)")
@click.version_option(version=__version__, prog_name="kmslab")
@click.pass_context
def cli(ctx, config, out, seed, threads):
    """Numerical laboratory for thermal field states, detector response,
    coupled-generator spectra, and state-overlap decay."""
    ctx.obj = {"config": config, "out": out, "seed": seed, "threads": threads}


@cli.command("formfactor")
@click.option("--beta", type=float, default=None,
              help="override [global] beta")
@click.pass_context
def cmd_formfactor(ctx, beta):
    """Emit the glued thermal form factor and its conjugation residual."""
    cfg, out_dir, seed = _prepare(ctx)
    if beta is not None:
        cfg["global"]["beta"] = format(beta, ".17g")
    beta = _cfg_float(cfg, "global", "beta", positive=True)
    zeta = _cfg_float(cfg, "global", "zeta")
    n = _cfg_int(cfg, "global", "n_grid", minimum=8)
    import numpy as np
    from .oneparticle import (MomentumFunction, default_coupling,
                              default_qgrid, jf_conjugate, kms_glue,
                              save_glued)
    q, w = default_qgrid(beta, n=n)
    u = MomentumFunction.from_radial(q, w, default_coupling(q))
    g = kms_glue(u, beta, zeta=zeta)
    target = np.exp(-beta * g.s / 2.0) * g.values
    resid = float(np.max(np.abs(jf_conjugate(g).values - target))
                  / np.max(np.abs(g.values)))
    path = os.path.join(out_dir, "formfactor.csv")
    save_glued(path, g, extra_meta=[("jf_identity_max_err", resid)])
    _write_manifest(out_dir, "formfactor", cfg, ["global"], seed)
    click.echo("jf_identity_max_err=%s" % format(resid, ".17g"))
    click.echo("wrote %s" % path)


@cli.command("kms-check")
@click.option("--beta", type=float, default=None, help="override [global] beta")
@click.option("--t-span", type=float, default=200.0, show_default=True,
              help="correlator half-span for the windowed transform")
@click.pass_context
def cmd_kms_check(ctx, beta, t_span):
    """Detailed-balance check of the two-point spectrum."""
    cfg, out_dir, seed = _prepare(ctx)
    if beta is not None:
        cfg["global"]["beta"] = format(beta, ".17g")
    beta = _cfg_float(cfg, "global", "beta", positive=True)
    mass = _cfg_float(cfg, "global", "mass", nonnegative=True)
    n = _cfg_int(cfg, "global", "n_grid", minimum=8)
    from .oneparticle import default_qgrid
    from .quasifree import QuasiFreeState, gaussian_packet, kms_balance_check
    from .textio import fmt17, write_csv, write_keyvals
    q, w = default_qgrid(beta, n=n)
    f = gaussian_packet(q, w, mass=mass)
    state = QuasiFreeState(beta=beta, mass=mass)
    report = kms_balance_check(state, f, t_span=t_span)
    write_csv(os.path.join(out_dir, "kms_check_spectrum.csv"),
              "nu,spectrum_pos,spectrum_neg",
              [report.nu, report.spectrum_pos, report.spectrum_neg])
    write_keyvals(os.path.join(out_dir, "kms_check_report.txt"),
                  report.text_pairs())
    _write_manifest(out_dir, "kms-check", cfg, ["global"], seed,
                    extra=[("t_span", fmt17(t_span))])
    for key, val in report.text_pairs():
        click.echo("%s=%s" % (key, fmt17(val) if isinstance(val, float) else val))


@cli.command("mixing")
@click.option("--t-max", type=float, default=80.0, show_default=True)
@click.pass_context
def cmd_mixing(ctx, t_max):
    """Clustering decay of the two-point and Weyl correlators."""
    cfg, out_dir, seed = _prepare(ctx)
    beta = _cfg_float(cfg, "global", "beta", positive=True)
    mass = _cfg_float(cfg, "global", "mass", nonnegative=True)
    n = _cfg_int(cfg, "global", "n_grid", minimum=8)
    from .oneparticle import default_qgrid
    from .quasifree import QuasiFreeState, gaussian_packet, mixing_decay
    from .textio import fmt17, write_csv
    q, w = default_qgrid(beta, n=n)
    f = gaussian_packet(q, w, mass=mass)
    state = QuasiFreeState(beta=beta, mass=mass)
    report = mixing_decay(state, f, t_max=t_max)
    write_csv(os.path.join(out_dir, "mixing.csv"),
              "t,abs_two_point,weyl_residual",
              [report.times, report.abs_two_point, report.weyl_residual])
    f1, f2 = report.tail_fraction(t_max / 2.0)
    _write_manifest(out_dir, "mixing", cfg, ["global"], seed,
                    extra=[("t_max", fmt17(t_max))])
    click.echo("two_point_tail_fraction=%s" % fmt17(f1))
    click.echo("weyl_tail_fraction=%s" % fmt17(f2))


@cli.command("response")
@click.option("--trajectory", "traj_kind",
              type=click.Choice(["rest", "inertial", "accelerated"]),
              default=None, help="override [trajectory] kind")
@click.option("--beta", type=float, default=None, help="override [global] beta")
@click.pass_context
def cmd_response(ctx, traj_kind, beta):
    """Detector rate curve with its detailed-balance and temperature readout."""
    cfg, out_dir, seed = _prepare(ctx)
    if beta is not None:
        cfg["global"]["beta"] = format(beta, ".17g")
    if traj_kind is not None:
        cfg["trajectory"]["kind"] = traj_kind
    beta = _cfg_float(cfg, "global", "beta", positive=True)
    mass = _cfg_float(cfg, "global", "mass", nonnegative=True)
    kind = cfg["trajectory"]["kind"]
    energies = _cfg_floats(cfg, "detector", "energies")
    if not energies or any(e <= 0 for e in energies):
        raise ValidationError(
            "[detector] energies: need a list of positive gaps, got %r"
            % cfg["detector"]["energies"])
    import numpy as np
    from .detector import Trajectory, response_curve
    from .quasifree import QuasiFreeState
    from .textio import fmt17, write_csv
    if kind == "rest":
        traj = Trajectory.rest()
    elif kind == "inertial":
        traj = Trajectory.inertial(_cfg_float(cfg, "trajectory", "v"))
    elif kind == "accelerated":
        traj = Trajectory.accelerated(
            _cfg_float(cfg, "trajectory", "accel", positive=True))
    else:
        raise ValidationError("[trajectory] kind: unknown kind %r" % kind)
    state = QuasiFreeState(beta=beta, mass=mass)
    grid = sorted(set(energies) | set(-e for e in energies))
    curve = response_curve(state, traj, grid)
    pos = np.asarray(sorted(energies))
    up = np.array([curve.rate_at(e) for e in pos])
    down = np.array([curve.rate_at(-e) for e in pos])
    balance = up / down
    beta_eff = -np.log(balance) / pos
    write_csv(os.path.join(out_dir, "response.csv"),
              "E,rate_up,rate_down,balance",
              [pos, up, down, balance])
    write_csv(os.path.join(out_dir, "response_beta_eff.csv"),
              "E,beta_eff", [pos, beta_eff])
    _write_manifest(out_dir, "response", cfg,
                    ["global", "detector", "trajectory"], seed,
                    extra=[("window_sigma_tau", fmt17(curve.window.sigma_tau)),
                           ("eps", fmt17(curve.eps))])
    for e, b, be in zip(pos, balance, beta_eff):
        click.echo("E=%s balance=%s beta_eff=%s"
                   % (fmt17(e), fmt17(b), fmt17(be)))


def _liouville_space(cfg, seed, family_key, ntot_key, amp_key):
    from . import liouville as lv
    beta = _cfg_float(cfg, "global", "beta", positive=True)
    zeta = _cfg_float(cfg, "global", "zeta")
    gap = _cfg_float(cfg, "liouville", "gap", positive=True)
    n_side = _cfg_int(cfg, "liouville", "n_side", minimum=2)
    amp = _cfg_float(cfg, "liouville", amp_key, positive=True)
    ntot = _cfg_int(cfg, "liouville", ntot_key, minimum=1)
    family = cfg["liouville"][family_key]
    if family == "jittered":
        disc = lv.jittered_modes(beta, seed=seed, n_side=n_side,
                                 amplitude=amp, zeta=zeta)
    elif family == "paired":
        disc = lv.paired_modes(beta, n_side=n_side, amplitude=amp, zeta=zeta)
    elif family == "shell":
        disc = lv.resonant_shell_modes(beta, gap, seed=seed,
                                       amplitude=amp, zeta=zeta)
    else:
        raise ValidationError(
            "[liouville] %s: unknown mode family %r" % (family_key, family))
    space = lv.TruncatedFock(disc, n_tot_max=ntot)
    return lv, disc, space, gap, beta


@cli.command("rte-spectrum")
@click.pass_context
def cmd_rte_spectrum(ctx):
    """Near-zero spectrum of the coupled generator over a coupling sweep."""
    cfg, out_dir, seed = _prepare(ctx)
    lv, disc, space, gap, beta = _liouville_space(
        cfg, seed, "family", "n_tot_max", "amplitude")
    lambdas = _cfg_floats(cfg, "liouville", "lambdas")
    if not lambdas:
        raise ValidationError("[liouville] lambdas: need at least one value")
    g_off = _cfg_float(cfg, "liouville", "coupling_offdiagonal")
    import numpy as np
    from .textio import fmt17
    G = np.array([[0.0, g_off], [g_off, 0.0]])
    sweep = lv.kernel_splitting_sweep(space, gap, G, lambdas)
    sweep.save(os.path.join(out_dir, "rte_spectrum.csv"))
    t_rec = disc.recurrence_time()
    lo, hi = lv.fgr_window(disc, gap, t_rec)
    _write_manifest(out_dir, "rte-spectrum", cfg, ["global", "liouville"],
                    seed, extra=[("theta", fmt17(sweep.theta)),
                                 ("recurrence_time", fmt17(t_rec))])
    for lam, gp, kd in zip(sweep.lambdas, sweep.gaps, sweep.kernel_dims):
        click.echo("lambda=%s kernel_dim=%d gap=%s"
                   % (fmt17(lam), kd, fmt17(gp)))
    click.echo("theta=%s" % fmt17(sweep.theta))
    click.echo("fit_exponent=%s" % fmt17(sweep.fit_exponent))
    click.echo("recurrence_time=%s" % fmt17(t_rec))
    click.echo("fgr_window=[%s, %s]" % (fmt17(lo), fmt17(hi)))


@cli.command("rte-evolve")
@click.pass_context
def cmd_rte_evolve(ctx):
    """Reduced-detector trace distance to equilibrium along the evolution."""
    cfg, out_dir, seed = _prepare(ctx)
    lv, disc, space, gap, beta = _liouville_space(
        cfg, seed, "evolve_family", "evolve_n_tot_max", "evolve_amplitude")
    g_off = _cfg_float(cfg, "liouville", "coupling_offdiagonal")
    dt = _cfg_float(cfg, "liouville", "dt", positive=True)
    import numpy as np
    from .textio import fmt17
    t_rec = disc.recurrence_time()
    lo, hi = lv.fgr_window(disc, gap, t_rec)
    raw_lam = cfg["liouville"]["evolve_lambda"]
    lam = lo if raw_lam == "auto" else _cfg_float(
        cfg, "liouville", "evolve_lambda", positive=True)
    raw_tmax = cfg["liouville"]["t_max"]
    t_max = t_rec if raw_tmax == "auto" else _cfg_float(
        cfg, "liouville", "t_max", positive=True)
    G = np.array([[0.0, g_off], [g_off, 0.0]])
    L = lv.assemble_liouvillean(space, gap, G, lam)
    which = cfg["liouville"]["initial"]
    R = space.reservoir_dim
    packet = np.exp(-(((disc.s - gap) / 0.3) ** 2)) * (disc.s > 0)
    if which == "excited":
        psi = lv.product_initial(space, np.diag([1.0, 0.0]))
    elif which == "one-boson":
        psi = lv.one_boson_initial(space, np.array([0, 0, 0, 1.0]), packet)
    elif which == "entangled":
        psi = np.zeros(space.dim, dtype=complex)
        psi[space.vacuum] = 1.0 / math.sqrt(2.0)
        psi += lv.one_boson_initial(space, np.array([0, 0, 0, 1.0]),
                                    packet) / math.sqrt(2.0)
        psi /= np.linalg.norm(psi)
    elif which == "stationary":
        L0w = L.with_lambda(0.0)
        omega = lv.perturbed_kms_vector(L0w, L.parts["I"], lam, beta)
        psi = lv.product_initial(space, lv.reduce_detector(omega, space))
    else:
        raise ValidationError(
            "[liouville] initial: unknown initial state %r" % which)
    tgrid = np.arange(dt, t_max + dt / 2.0, dt)
    report = lv.rte_distance_series(L, psi, tgrid)
    report.save(os.path.join(out_dir, "rte_evolve.csv"))
    _write_manifest(out_dir, "rte-evolve", cfg, ["global", "liouville"],
                    seed, extra=[("lambda_used", fmt17(lam)),
                                 ("recurrence_time", fmt17(t_rec)),
                                 ("fgr_window_lo", fmt17(lo)),
                                 ("fgr_window_hi", fmt17(hi))])
    click.echo("lambda=%s fgr_window=[%s, %s]"
               % (fmt17(lam), fmt17(lo), fmt17(hi)))
    click.echo("recurrence_time=%s" % fmt17(t_rec))
    click.echo("crossing_time=%s"
               % ("none" if report.crossing_time is None
                  else fmt17(report.crossing_time)))
    click.echo("pre_recurrence_min=%s" % fmt17(report.pre_recurrence_min))
    click.echo("reached=%s" % ("yes" if report.reached else "no"))


@cli.command("disjoint")
@click.pass_context
def cmd_disjoint(ctx):
    """Fidelity decay between two thermal states over growing mode families."""
    cfg, out_dir, seed = _prepare(ctx)
    beta = _cfg_float(cfg, "global", "beta", positive=True)
    beta2 = _cfg_float(cfg, "disjointness", "beta2", positive=True)
    v = _cfg_float(cfg, "disjointness", "v")
    if not abs(v) < 1.0:
        raise ValidationError("[disjointness] v: |v| must be < 1, got %s"
                              % cfg["disjointness"]["v"])
    n_max = _cfg_int(cfg, "disjointness", "n_max_modes", minimum=1)
    s_lo = _cfg_float(cfg, "disjointness", "s_lo", positive=True)
    s_hi = _cfg_float(cfg, "disjointness", "s_hi", positive=True)
    threshold = _cfg_float(cfg, "disjointness", "threshold", positive=True)
    from .disjointness import adapted_family, overlap_decay
    from .oneparticle import BoostSpec
    from .quasifree import QuasiFreeState
    from .textio import fmt17
    family = adapted_family(n_max, s_lo=s_lo, s_hi=s_hi)
    state1 = QuasiFreeState(beta=beta)
    state2 = QuasiFreeState(beta=beta2, frame=BoostSpec.from_velocity(v))
    curve = overlap_decay(state1, state2, family, threshold=threshold)
    curve.save(os.path.join(out_dir, "disjoint.csv"))
    _write_manifest(out_dir, "disjoint", cfg, ["global", "disjointness"], seed)
    click.echo("n_star=%s" % ("none" if curve.n_star is None
                              else str(curve.n_star)))
    click.echo("log_slope=%s" % fmt17(curve.slope))
    click.echo("final_fidelity=%s" % fmt17(float(curve.values[-1])))


def _apply_threads(argv):
    """Pin thread pools from --threads/KMSLAB_THREADS before numpy loads."""
    n = os.environ.get("%s_THREADS" % _ENV_PREFIX)
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            n = argv[i + 1]
        elif arg.startswith("--threads="):
            n = arg.split("=", 1)[1]
    if n is None:
        return
    try:
        count = max(1, int(n))
    except ValueError:
        return  # click reports the usage error later
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(count)


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    _apply_threads(argv)
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except ValidationError as exc:
        click.echo("validation error: %s" % exc, err=True)
        return 2
    except NumericalError as exc:
        click.echo("numerical error: %s" % exc, err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
