"""Command-line front end: ``paintbec {paint,trap,evap,optimize,export-waveform}``.

Exit codes: 0 success, 1 invalid input or config, 2 physics failure under
``--strict``, 3 file I/O error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .config import LaserConfig, MolassesConfig, RunConfig, load_config, save_config
from .evaporation import (
    CloudState,
    cycle_time,
    interpolate_controls,
    load_from_molasses,
    run_schedule,
)
from .optics import Beam, gaussian_intensity
from .painting import (
    DwellDensity,
    PaintingSpec,
    comb_intensity,
    frequency_trajectory,
    make_dwell,
    rf_spectrum,
    sideband_fragmentation,
    sideband_lines,
    sweep_sample_rate,
    time_averaged_intensity,
    validate_painting,
    write_waveform_csv,
    write_waveform_iq,
)
from .trap import SaddleError, SpinState, TrapError, UntrappedError, find_minimum, trap_depth, trap_frequencies

EXIT_OK, EXIT_INVALID, EXIT_PHYSICS, EXIT_IO = 0, 1, 2, 3


class PhysicsFailure(Exception):
    """Raised by a command when ``--strict`` turns a physics failure into an error."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _write_summary(path, items, stream=None):
    _write_rows(path, ["key", "value"], items)
    if stream is not None:
        for k, v in items:
            print(f"{k},{_fmt(v)}", file=stream)


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# paint


def _paint_dwell(pc):
    if pc.dwell.positions_m is not None:
        return DwellDensity(np.array(pc.dwell.positions_m), np.array(pc.dwell.weights))
    return make_dwell(pc.dwell.profile, pc.stroke_m)


def paint_panels(cfg: RunConfig):
    """Spectrum, 1-D/2-D intensity and corrugation for each painting frequency."""
    pc = cfg.paint
    beam = Beam(pc.power_W, pc.waist_m, pc.waist_m, pc.wavelength_m, (0, 1, 0), (1, 0, 0))
    dwell = _paint_dwell(pc)
    labels = pc.labels or tuple("abcdefghijklmnopqrstuvwxyz"[: len(pc.painting_frequencies_Hz)])
    x = np.linspace(-pc.half_width_m, pc.half_width_m, pc.n_points)
    line_pts = np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=-1)
    gx = np.linspace(-pc.half_width_m, pc.half_width_m, pc.n_points_2d)
    gz = np.linspace(-4 * pc.waist_m, 4 * pc.waist_m, pc.n_points_2d)
    X, Z = np.meshgrid(gx, gz, indexing="ij")
    map_pts = np.stack([X, np.zeros_like(X), Z], axis=-1)

    panels = []
    for label, fp in zip(labels, pc.painting_frequencies_Hz):
        if fp == 0 or pc.stroke_m == 0:
            spectrum = (np.array([pc.center_frequency_Hz]), np.array([1.0]))
            comb = gaussian_intensity(beam, line_pts)
            sweep = comb
            image = gaussian_intensity(beam, map_pts)
            spacing, corr, warnings = 0.0, 0.0, []
            regime = "static"
        else:
            spec = PaintingSpec.from_stroke(pc.stroke_m, fp, pc.calibration_m_per_Hz, pc.center_frequency_Hz)
            wave = frequency_trajectory(dwell, spec, sweep_sample_rate(spec))
            spectrum = rf_spectrum(wave, pc.n_periods)
            lines = sideband_lines(spec, dwell)
            comb = comb_intensity(beam, lines, line_pts)
            sweep = time_averaged_intensity(beam, dwell, line_pts)
            image = comb_intensity(beam, lines, map_pts)
            frag = sideband_fragmentation(spec, pc.waist_m, dwell)
            spacing, corr = frag["well_spacing"], frag["corrugation"]
            warnings = validate_painting(spec, pc.trap_frequencies_Hz)
            if warnings:
                regime = "dragging"
            elif corr > pc.corrugation_threshold:
                regime = "resolved"
            else:
                regime = "smooth"
        panels.append({
            "label": label, "painting_frequency": fp, "spectrum": spectrum,
            "center_frequency": pc.center_frequency_Hz, "profile": (x, comb, sweep),
            "map": (gx, gz, image), "well_spacing": spacing, "corrugation": corr,
            "regime": regime, "warnings": warnings,
            "title": f"({label}) f_p = {fp / 1e3:g} kHz: {regime}",
        })
    return panels


def cmd_paint(cfg: RunConfig, args):
    out = _out_dir(args)
    panels = paint_panels(cfg)
    report = []
    for p in panels:
        lab = p["label"]
        f, a = p["spectrum"]
        keep = a > 1e-6 * a.max()
        _write_rows(out / f"spectrum_{lab}.csv", ["f_Hz", "amplitude"], zip(f[keep], a[keep]))
        x, comb, sweep = p["profile"]
        _write_rows(out / f"profile_{lab}.csv", ["x_m", "comb_Wpm2", "sweep_Wpm2"], zip(x, comb, sweep))
        gx, gz, img = p["map"]
        rows = ((xi, zj, img[i, j]) for i, xi in enumerate(gx) for j, zj in enumerate(gz))
        _write_rows(out / f"map_{lab}.csv", ["x_m", "z_m", "comb_Wpm2"], rows)
        report.append((lab, p["painting_frequency"], p["well_spacing"], p["corrugation"], p["regime"],
                       "; ".join(p["warnings"])))
    header = ["panel", "f_p_Hz", "well_spacing_m", "corrugation", "regime", "warnings"]
    _write_rows(out / "corrugation.csv", header, report)
    print(",".join(header))
    for r in report:
        print(",".join(_fmt(v) for v in r))
    if not args.no_plots:
        from .plotting import plot_paint_panels

        plot_paint_panels(panels, out / "paint.png")
    return EXIT_OK


# --------------------------------------------------------------------------
# trap


TRAP_HEADER = ["t_s", "mF", "x_m", "y_m", "z_m", "fx_Hz", "fy_Hz", "fz_Hz", "depth_uK", "status"]


def trap_report(cfg: RunConfig, t):
    controls = interpolate_controls(cfg.build_schedule(), t)
    tc = cfg.setup().at(controls)
    uK = tc.constants.k_B * 1e-6
    nan = float("nan")
    rows, seed = [], None
    for spin in (SpinState.ZERO, SpinState.MINUS, SpinState.PLUS):
        try:
            m = find_minimum(tc, spin, seed)
            freqs, axes = trap_frequencies(tc, spin, m, return_axes=True)
            depth = trap_depth(tc, spin, m, axes)
            rows.append((t, int(spin), *m, *freqs, depth / uK, "ok"))
            if spin == SpinState.ZERO:
                seed = m
        except TrapError as err:
            status = ("untrapped" if isinstance(err, UntrappedError)
                      else "saddle" if isinstance(err, SaddleError) else "failed")
            rows.append((t, int(spin), nan, nan, nan, nan, nan, nan, 0.0, status))
    rows.sort(key=lambda r: r[1])
    return rows


def cmd_trap(cfg: RunConfig, args):
    t = args.at if args.at is not None else cfg.simulation.trap_at_s
    rows = trap_report(cfg, t)
    print(",".join(TRAP_HEADER))
    for r in rows:
        print(",".join(_fmt(v) for v in r))
    if args.out:
        _write_rows(_out_dir(args) / "trap.csv", TRAP_HEADER, rows)
    zero = next(r for r in rows if r[1] == 0)
    if zero[-1] != "ok" and args.strict:
        raise PhysicsFailure(f"m_F = 0 trap is {zero[-1]} at t = {t} s")
    return EXIT_OK


# --------------------------------------------------------------------------
# evap


def initial_cloud(cfg: RunConfig, schedule=None):
    init = cfg.simulation.initial
    if init is not None:
        return CloudState(tuple(init.N), init.temperature_K)
    schedule = schedule or cfg.build_schedule()
    if not schedule.segments:
        raise ValueError("an empty schedule needs simulation.initial")
    tc = cfg.setup().at(interpolate_controls(schedule, 0.0))
    return load_from_molasses(tc, cfg.molasses.build())


def evap_summary(cfg: RunConfig, traj, schedule):
    final = traj.final
    s = final.state
    items = [
        ("status", "ok" if traj.failure is None else "untrapped"),
        ("failure_time_s", float(traj.failure.time) if traj.failure is not None else float("nan")),
        ("t_final_s", final.t),
        ("N_m1", s.N[0]), ("N_0", s.N[1]), ("N_p1", s.N[2]),
        ("T_K", s.T),
        ("psd", final.psd),
        ("max_psd", traj.max_psd()),
        ("condensed_number", final.condensed_number),
        ("fraction_mF0", s.fraction_zero),
        ("evaporation_s", schedule.evaporation_duration),
        ("cycle_time_s", cycle_time(schedule, cfg.overheads_s)),
    ]
    return items


def cmd_evap(cfg: RunConfig, args):
    out = _out_dir(args)
    schedule = cfg.build_schedule()
    initial = initial_cloud(cfg, schedule)
    sim = cfg.simulation
    traj = run_schedule(cfg.setup(), schedule, initial, sim.dt_s, sim.recharacterize_every_s,
                        cfg.model.build(), partial=True)
    traj.write_csv(out / "trajectory.csv")
    _write_summary(out / "summary.csv", evap_summary(cfg, traj, schedule), sys.stdout)
    if not args.no_plots and len(traj.rows) > 1:
        from .plotting import plot_trajectory

        plot_trajectory(traj, out / "trajectory.png")
    if traj.failure is not None:
        print(f"warning: {traj.failure} at t = {traj.failure.time} s", file=sys.stderr)
        if args.strict:
            raise PhysicsFailure(f"{traj.failure} at t = {traj.failure.time} s")
    return EXIT_OK


# --------------------------------------------------------------------------
# optimize


def _benchmark(args, seed, out):
    from .optimizer import BENCHMARK_BUDGETS, BENCHMARKS, de_optimize

    if args.benchmark not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {args.benchmark!r}; choose from {sorted(BENCHMARKS)}")
    f, space = BENCHMARKS[args.benchmark]
    de = replace(BENCHMARK_BUDGETS[args.benchmark], seed=seed)
    res = de_optimize(f, space, de)
    res.record.write_csv(out / "record.csv")
    _write_rows(out / "best_params.csv", ["name", "value"], zip(space.names, res.best_params))
    _write_summary(out / "summary.csv", [("benchmark", args.benchmark), ("best_objective", res.best_value)])
    print(f"best_objective,{_fmt(res.best_value)}")
    return res


def _de_config(oc, seed, population=None, generations=None):
    from .optimizer import DEConfig

    return DEConfig(population or oc.population, oc.F, oc.CR,
                    oc.generations if generations is None else generations, seed, oc.workers)


def run_stage1(cfg: RunConfig, seed, progress=None):
    from .optimizer import LoadingObjective, LoadingSpace, MolassesSurrogate, de_optimize

    oc = cfg.optimizer
    schedule = cfg.build_schedule()
    space = LoadingSpace(dict(oc.stage1.bounds))
    surrogate = MolassesSurrogate(reference=cfg.molasses.build())
    obj = LoadingObjective(cfg.setup(), space, schedule.segments[0], surrogate, dt=oc.dt_s,
                           recharacterize_every=oc.recharacterize_every_s, model=cfg.model.build())
    de = _de_config(oc, seed, oc.stage1.population, oc.stage1.generations)
    res = de_optimize(obj, space, de, progress=progress)
    best = space.decode(res.best_params)
    mol = surrogate(best["laser"])
    segs = list(schedule.segments)
    g = best["gradient"]
    segs[0] = replace(segs[0], power_start=best["powers"], stroke_start=best["strokes"],
                      gradient_start=g, gradient_end=g)
    if len(segs) > 1 and segs[1].gradient_start != g:
        segs[1] = replace(segs[1], jump=True)
    beams = tuple(b.model_copy(update={"painting_frequency_Hz": fp})
                  for b, fp in zip(cfg.beams, best["painting_frequencies"]))
    new_cfg = cfg.with_schedule(
        replace(schedule, segments=tuple(segs)), beams=beams,
        laser=LaserConfig.from_settings(best["laser"]),
        molasses=MolassesConfig(atom_number=mol.atom_number, temperature_K=mol.temperature,
                                radius_m=mol.radius),
    )
    return res, space, new_cfg


def run_stage2(cfg: RunConfig, seed, progress=None):
    from .optimizer import EvaporationSpace, FinalAtomsObjective, de_optimize, random_baseline

    oc = cfg.optimizer
    template = cfg.build_schedule()
    space = EvaporationSpace(template, **oc.stage2_bounds())
    initial = initial_cloud(cfg, template)
    obj = FinalAtomsObjective(cfg.setup(), space, initial, oc.dt_s, oc.recharacterize_every_s,
                              cfg.model.build())
    start = space.encode(template) if oc.seed_with_template else None
    res = de_optimize(obj, space, _de_config(oc, seed), initial=start, progress=progress)
    baseline = None
    if oc.random_baseline > 0:
        baseline, _ = random_baseline(obj, space, oc.random_baseline, seed)
    best_schedule = space.decode(res.best_params)
    return res, space, cfg.with_schedule(best_schedule), baseline


def cmd_optimize(cfg: RunConfig, args):
    out = _out_dir(args)
    seed = cfg.seed
    if args.benchmark:
        _benchmark(args, seed, out)
        return EXIT_OK

    def progress(g, v):
        print(f"generation {g}: best {v:.6g}", file=sys.stderr, flush=True)

    stage = args.stage or cfg.optimizer.stage
    items = [("seed", seed)]
    if stage == 1 or args.two_stage:
        res1, space1, cfg = run_stage1(cfg, seed, progress)
        res1.record.write_csv(out / "record_stage1.csv")
        items += [("stage1_best_objective", res1.best_value), ("stage1_parameters", len(space1))]
        if not args.two_stage:
            save_config(cfg, out / "best_config.json")
            _write_summary(out / "summary.csv", items)
            print(f"best_objective,{_fmt(res1.best_value)}")
            return EXIT_OK
    res, space, best_cfg, baseline = run_stage2(cfg, seed, progress)
    if args.params is not None and args.params != len(space):
        raise ValueError(f"stage-2 space has {len(space)} parameters, --params asked for {args.params}")
    res.record.write_csv(out / "record.csv")
    save_config(best_cfg, out / "best_config.json")
    oc = cfg.optimizer
    traj = run_schedule(best_cfg.setup(), best_cfg.build_schedule(), initial_cloud(cfg), oc.dt_s,
                        oc.recharacterize_every_s, cfg.model.build(), partial=True)
    traj.write_csv(out / "best_trajectory.csv")
    median = float(np.median(baseline)) if baseline is not None else float("nan")
    items += [("parameters", len(space)), ("best_objective", res.best_value),
              ("random_median", median), ("best_max_psd", traj.max_psd()),
              ("evaluations", len(res.record.evaluations))]
    _write_summary(out / "summary.csv", items)
    if not args.no_plots:
        from .plotting import plot_convergence, plot_trajectory

        plot_convergence(res.record, out / "convergence.png", median if baseline is not None else None)
        if len(traj.rows) > 1:
            plot_trajectory(traj, out / "best_trajectory.png")
    print(f"best_objective,{_fmt(res.best_value)}")
    return EXIT_OK


# --------------------------------------------------------------------------
# export-waveform


def export_waveform(cfg: RunConfig, fmt, path):
    ec = cfg.export
    bc = cfg.beams[ec.beam_index]
    stroke = ec.stroke_m
    if stroke is None:
        schedule = cfg.build_schedule()
        stroke = interpolate_controls(schedule, 0.0).strokes[ec.beam_index]
    spec = PaintingSpec.from_stroke(stroke, bc.painting_frequency_Hz, bc.calibration_m_per_Hz,
                                    bc.center_frequency_Hz)
    wave = frequency_trajectory(make_dwell(bc.dwell_profile, stroke), spec, ec.sample_rate_Hz)
    if fmt == "csv":
        write_waveform_csv(path, wave, ec.n_periods)
    elif fmt == "iq":
        write_waveform_iq(path, wave, ec.n_periods)
    else:
        raise ValueError(f"unsupported waveform format {fmt!r}")
    return wave


def cmd_export_waveform(cfg: RunConfig, args):
    out = _out_dir(args)
    path = out / f"waveform.{args.format}"
    wave = export_waveform(cfg, args.format, path)
    print(f"wrote {path} ({wave.n_samples * cfg.export.n_periods} samples at {wave.sample_rate:g} Hz)")
    return EXIT_OK


# --------------------------------------------------------------------------


COMMANDS = {
    "paint": cmd_paint,
    "trap": cmd_trap,
    "evap": cmd_evap,
    "optimize": cmd_optimize,
    "export-waveform": cmd_export_waveform,
}


def build_parser():
    parser = _Parser(prog="paintbec", description="Painted dipole-trap BEC simulator and optimizer.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=out_required, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--strict", action="store_true", help="exit 2 on physics failures")
        p.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    common(sub.add_parser("paint", help="painting spectra, averaged intensities, corrugation"))
    p = sub.add_parser("trap", help="trap minimum, frequencies and depths per m_F")
    common(p, out_required=False)
    p.add_argument("--at", type=float, default=None, metavar="SECONDS", help="time within the schedule")
    common(sub.add_parser("evap", help="run the evaporation schedule"))
    p = sub.add_parser("optimize", help="differential-evolution optimization")
    common(p)
    p.add_argument("--stage", type=int, choices=(1, 2), default=None)
    p.add_argument("--two-stage", action="store_true", help="run stage 1, then stage 2 from its result")
    p.add_argument("--params", type=int, default=None, help="expected stage-2 parameter count")
    p.add_argument("--benchmark", default=None, help="analytic benchmark: sphere or rosenbrock")
    p = sub.add_parser("export-waveform", help="write the AOD drive waveform")
    common(p)
    p.add_argument("--format", choices=("csv", "iq"), default="csv")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
        return COMMANDS[args.command](cfg, args)
    except ValidationError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return EXIT_INVALID
    except PhysicsFailure as err:
        print(f"physics failure: {err}", file=sys.stderr)
        return EXIT_PHYSICS
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except TrapError as err:
        t = f" at t = {err.time} s" if getattr(err, "time", None) is not None else ""
        print(f"physics failure: {err}{t}", file=sys.stderr)
        return EXIT_PHYSICS if args.strict else EXIT_OK
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
