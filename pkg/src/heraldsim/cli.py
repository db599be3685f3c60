"""
Command-line interface.

    heraldsim simulate --config run.toml --out run.ptag --seed 7
    heraldsim analyze --in run.ptag --window-ns 2.5 --report report.txt
    heraldsim analyze --counts counts.txt
    heraldsim jsa --out jsi.txt --plot jsi.svg
    heraldsim characterize --port1 p1.txt --port2 p2.txt
    heraldsim sweep --config run.toml --out sweep.csv --plot sweep.svg
    heraldsim scenario reference-run

Exit status: 0 on success, 1 when a scenario expectation fails, 2 on a
usage, configuration or input error.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, HeraldSimError

EXIT_OK, EXIT_EXPECTATION, EXIT_USAGE = 0, 1, 2
U64_MAX = (1 << 64) - 1


class UsageError(Exception):
    """Bad flag value detected after argument parsing."""


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError(f"must be in [0, 2^64): {text}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0: {text}")
    return v


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}")


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


def _load(path):
    from .config import load_config

    if path is None:
        from .config import loads_config

        return loads_config("")
    return load_config(path)


def _need_file(path, flag):
    if not Path(path).is_file():
        raise FileNotFoundError(f"{flag}: no such file: {path}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .montecarlo import simulate_run
    from .tagstream import read_header

    _need_file(args.config, "--config")
    run = _load(args.config)
    cfg = run.experiment
    if cfg is None:
        raise ConfigError("simulate needs a [source] section", path=args.config, field="source")
    changes = {}
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    if args.pulses is not None:
        changes["n_pulses"] = args.pulses
    cfg = cfg.with_(**changes)
    simulate_run(cfg, args.out, workers=_threads(args))
    n, period = read_header(args.out)
    print(f"wrote {n} records ({cfg.n_pulses} pulses, period {period} ps) to {args.out}")
    return EXIT_OK


def _delays(text):
    if text is None:
        return None
    vals = _floats(text)
    if len(vals) != 3:
        raise UsageError("--delays-ns: expected three values (herald, out1, out2)")
    return dict(zip((0, 1, 2), vals))


def cmd_analyze(args) -> int:
    from .coincidence import analyze, histogram_delays, report_from_counts, write_histogram
    from .tagstream import read_tagstream

    if (args.input is None) == (args.counts is None):
        raise UsageError("analyze: give exactly one of --in or --counts")
    if args.counts is not None:
        from .pipelines import read_counts

        _need_file(args.counts, "--counts")
        for flag in ("jsi", "histogram", "dark_probs"):
            if getattr(args, flag) is not None:
                raise UsageError(f"--{flag.replace('_', '-')} needs a tag stream (--in)")
        report = report_from_counts(read_counts(args.counts))
    else:
        _need_file(args.input, "--in")
        stream = read_tagstream(args.input)
        dark = None
        if args.dark_probs is not None:
            dark = _floats(args.dark_probs)
            if len(dark) != 3:
                raise UsageError("--dark-probs: expected three values (herald, out1, out2)")
        report = analyze(stream, args.window_ns, _delays(args.delays_ns), dark_probs=dark)
        if args.histogram is not None:
            chans = [int(c) for c in _floats(args.hist_channels)]
            if len(chans) != 2:
                raise UsageError("--hist-channels: expected two channel numbers")
            edges, counts = histogram_delays(stream, chans[0], chans[1], args.bin_ps, args.span_ns)
            write_histogram(edges, counts, args.histogram)
        if args.jsi is not None:
            _analyze_jsi(args, stream)

    text = report.to_text()
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text)
    if args.table:
        Path(args.table).write_text(report.to_table())
    return EXIT_OK


def _analyze_jsi(args, stream):
    from .jsa import marginal_spectrum, schmidt_lower_bound, write_jsi_text
    from .spectrograph import SpectrographCalibration, build_jsi_histogram, default_calibrations

    run = _load(args.config) if args.config else None
    if run is not None and run.experiment is not None and run.experiment.spectral is not None:
        cs, ci = run.experiment.spectral.cal_signal, run.experiment.spectral.cal_idler
        bins, half = run.spectrograph.bins, run.spectrograph.half_range_nm
    elif run is not None:
        sp = run.spectrograph
        cs, ci = (SpectrographCalibration(sp.dispersion_ps_per_nm, sp.reference_delay_ps,
                                          ref if ref is not None else center, sp.resolution_nm)
                  for ref, center in ((sp.signal_reference_nm, run.phase_match.signal_center_nm),
                                      (sp.idler_reference_nm, run.phase_match.idler_center_nm)))
        bins, half = sp.bins, sp.half_range_nm
    else:
        cs, ci = default_calibrations()
        bins, half = 64, 1.0
    grid = build_jsi_histogram(
        stream, cs, ci, bins=bins,
        signal_range_nm=(cs.reference_wavelength_nm - half, cs.reference_wavelength_nm + half),
        idler_range_nm=(ci.reference_wavelength_nm - half, ci.reference_wavelength_nm + half),
        window_ns=args.window_ns, delays_ns=_delays(args.delays_ns),
    )
    write_jsi_text(grid, args.jsi)
    print(f"jsi.schmidt_lower_bound = {schmidt_lower_bound(grid):.6g}")
    print(f"jsi.marginal_fwhm_signal_nm = {marginal_spectrum(grid, 'signal')[2]:.6g}")
    if args.jsi_plot:
        from .plots import emit_plot

        emit_plot(grid, "heatmap", args.jsi_plot)


def cmd_jsa(args) -> int:
    from dataclasses import replace

    from .jsa import schmidt_number_converged, write_jsi_text
    from .pipelines import jsa_summary

    if args.config:
        _need_file(args.config, "--config")
    run = _load(args.config)
    if args.grid is not None:
        run.grid = replace(run.grid, n_signal=args.grid, n_idler=args.grid)
    jsi, info = jsa_summary(run)
    for k, v in info.items():
        print(f"{k} = {v:.6g}")
    if args.check_convergence:
        k, delta, ok = schmidt_number_converged(run.pump, run.phase_match, run.grid)
        print(f"schmidt_k_doubled_grid_delta = {delta:.3g} ({'converged' if ok else 'NOT converged'})")
    if args.out:
        write_jsi_text(jsi, args.out)
    if args.plot:
        from .plots import emit_plot

        emit_plot(jsi, "heatmap", args.plot)
    return EXIT_OK


def cmd_characterize(args) -> int:
    from .circuit import read_spectrum
    from .pipelines import characterize_ports, synthesize_spectra

    if args.port1 is not None or args.port2 is not None:
        if args.port1 is None or args.port2 is None:
            raise UsageError("characterize: --port1 and --port2 go together")
        _need_file(args.port1, "--port1")
        _need_file(args.port2, "--port2")
        s1, s2 = read_spectrum(args.port1, port=1), read_spectrum(args.port2, port=2)
        r, length = args.reflectivity, args.length_cm
    else:
        if args.config:
            _need_file(args.config, "--config")
        run = _load(args.config)
        s1, s2 = synthesize_spectra(run.circuit, args.polarization)
        r, length = run.circuit.circuit.facet_reflectivity, run.circuit.circuit.device_length_cm
        if args.write_spectra:
            from .circuit import write_spectrum

            stem = Path(args.write_spectra)
            write_spectrum(s1, f"{stem}_port1.txt")
            write_spectrum(s2, f"{stem}_port2.txt")
    res = characterize_ports(s1, s2, r, length)
    print(f"alpha_per_cm = {res['alpha_per_cm']:.6g} +- {res['alpha_sigma']:.3g}")
    print(f"alpha_db_per_cm = {res['alpha_per_cm'] * 4.342944819:.6g}")
    print(f"fringe_contrast = {res['fringe_contrast']:.6g}")
    print(f"splitting_ratio = {res['splitting_ratio']:.6g} +- {res['splitting_ratio_sigma']:.3g}")
    if args.plot:
        from .plots import emit_plot

        emit_plot([s1, s2], "spectrum", args.plot)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from dataclasses import replace

    from .pipelines import run_power_sweep

    _need_file(args.config, "--config")
    run = _load(args.config)
    if run.experiment is None:
        raise ConfigError("sweep needs a [source] section", path=args.config, field="source")
    sweep = run.sweep
    if args.powers is not None:
        sweep = replace(sweep, powers_mw=tuple(_floats(args.powers)))
    if args.ref_power_mw is not None:
        sweep = replace(sweep, ref_power_mw=args.ref_power_mw)
    if args.mc_pulses is not None:
        sweep = replace(sweep, mc_pulses=args.mc_pulses)
    if any(p <= 0 for p in sweep.powers_mw):
        raise UsageError("--powers: every power must be > 0")
    table = run_power_sweep(run.experiment, sweep, _threads(args))
    text = table.to_text()
    sys.stdout.write(text)
    print(f"# schmidt_k spread = {float(table.schmidt_k.max() - table.schmidt_k.min()):.3g}, "
          f"linear R^2 = {table.linear_r2():.6f}")
    if args.out:
        Path(args.out).write_text(text)
    if args.plot:
        from .plots import emit_plot

        emit_plot(table.as_plot_data(), "sweep", args.plot)
    return EXIT_OK


def cmd_scenario(args) -> int:
    from .scenarios import load_scenarios, run_scenario

    scs = load_scenarios(args.dir)
    if args.list:
        for name, sc in scs.items():
            print(f"{name:16s} {sc.kind:9s} {sc.description}")
        return EXIT_OK
    names = list(scs) if args.all else args.names
    if not names:
        raise UsageError("scenario: name one or more scenarios, or use --all / --list")
    unknown = [n for n in names if n not in scs]
    if unknown:
        raise UsageError(f"unknown scenario(s) {unknown}; available: {', '.join(scs)}")
    status = EXIT_OK
    for name in names:
        res = run_scenario(scs[name], workers=_threads(args), out_dir=args.out_dir)
        print(f"[{name}] {'PASS' if res.passed else 'FAIL'}")
        for c in res.checks:
            print(f"  {c.line()}")
        for k, path in res.artifacts.items():
            print(f"  {k}: {path}")
        if not res.passed:
            status = EXIT_EXPECTATION
    return status


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heraldsim", description="Heralded single-photon source simulator and analysis")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def threads(sp):
        sp.add_argument("--threads", type=_positive_int, default=None,
                        help="maximum worker threads (results do not depend on it)")

    s = sub.add_parser("simulate", help="simulate a run and write a tag stream")
    s.add_argument("--config", required=True, help="TOML configuration")
    s.add_argument("--out", required=True, help="output tag stream")
    s.add_argument("--seed", type=_u64, default=None, help="RNG seed (u64), overrides the configuration")
    s.add_argument("--pulses", type=_positive_int, default=None, help="number of pump pulses")
    threads(s)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="coincidence analysis of a tag stream or of given counts")
    a.add_argument("--in", dest="input", default=None, help="input tag stream")
    a.add_argument("--counts", default=None, help="text file of count classes (key = value)")
    a.add_argument("--window-ns", type=_positive_float, default=2.5)
    a.add_argument("--delays-ns", default=None, help="herald,out1,out2 delays after the laser tag")
    a.add_argument("--dark-probs", default=None, help="per-window dark probabilities for background correction")
    a.add_argument("--report", default=None, help="write the key-value report here")
    a.add_argument("--table", default=None, help="write a delimited table here")
    a.add_argument("--histogram", default=None, help="write a delay histogram here")
    a.add_argument("--hist-channels", default="0,1", help="channel pair of the histogram")
    a.add_argument("--bin-ps", type=_positive_float, default=100.0)
    a.add_argument("--span-ns", type=_positive_float, default=1500.0)
    a.add_argument("--jsi", default=None, help="reconstruct the JSI (time-of-flight) and write it here")
    a.add_argument("--jsi-plot", default=None, help="SVG heatmap of the reconstructed JSI")
    a.add_argument("--config", default=None, help="configuration with the [spectrograph] calibration")
    threads(a)
    a.set_defaults(func=cmd_analyze)

    j = sub.add_parser("jsa", help="model joint spectrum and Schmidt number")
    j.add_argument("--config", default=None)
    j.add_argument("--grid", type=_positive_int, default=None, help="points per axis")
    j.add_argument("--out", default=None, help="write the JSI text matrix here")
    j.add_argument("--plot", default=None, help="SVG heatmap")
    j.add_argument("--check-convergence", action="store_true")
    j.set_defaults(func=cmd_jsa)

    c = sub.add_parser("characterize", help="loss and splitting ratio from transmission spectra")
    c.add_argument("--port1", default=None, help="two-column spectrum of output port 1")
    c.add_argument("--port2", default=None, help="two-column spectrum of output port 2")
    c.add_argument("--reflectivity", type=float, default=0.27, help="facet reflectivity")
    c.add_argument("--length-cm", type=_positive_float, default=0.3)
    c.add_argument("--config", default=None, help="synthesise spectra from this [circuit] instead")
    c.add_argument("--polarization", choices=("TE", "TM"), default="TM")
    c.add_argument("--write-spectra", default=None, help="path stem for the synthesised spectra")
    c.add_argument("--plot", default=None, help="SVG of both spectra")
    c.set_defaults(func=cmd_characterize)

    w = sub.add_parser("sweep", help="heralded g2 against pump power")
    w.add_argument("--config", required=True)
    w.add_argument("--powers", default=None, help="pump powers in mW, comma separated")
    w.add_argument("--ref-power-mw", type=_positive_float, default=None)
    w.add_argument("--mc-pulses", type=int, default=None, help="simulated pulses per point (0: analytic only)")
    w.add_argument("--out", default=None, help="write the table here")
    w.add_argument("--plot", default=None, help="SVG plot")
    threads(w)
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("scenario", help="run bundled scenarios against their expectations")
    r.add_argument("names", nargs="*")
    r.add_argument("--all", action="store_true")
    r.add_argument("--list", action="store_true")
    r.add_argument("--dir", default=None, help="scenario directory (default: $HERALDSIM_SCENARIO_DIR or bundled)")
    r.add_argument("--out-dir", default=None, help="write reports and plots here")
    threads(r)
    r.set_defaults(func=cmd_scenario)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports the offending flag itself
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"heraldsim {args.command}: error: {exc}", file=sys.stderr)
    except ConfigError as exc:
        print(f"heraldsim {args.command}: configuration error: {exc}", file=sys.stderr)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"heraldsim {args.command}: error: {exc}", file=sys.stderr)
    except HeraldSimError as exc:
        print(f"heraldsim {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
