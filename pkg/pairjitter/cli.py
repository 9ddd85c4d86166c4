"""Command-line entry point: ``pairjitter <subcommand> ...``.

Exit codes: 0 success, 2 configuration or I/O error, 3 phase-matching
solver failure, 4 impossible or non-converged fit, 5 replayed outputs differ
from the manifest.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Optional

from .config import OutputConfig, build_histogram_config, build_output_config
from .correlation import cross_correlation, load_histogram, normalize_g2, save_histogram
from .errors import FitError, PairJitterError, SolverError, StageError
from .fitting import (
    FAMILY_PARAMETERS,
    WEIGHTINGS,
    JitterValue,
    characterize,
    fit_histogram,
    fit_result_to_dict,
    parse_uncertain,
    report_to_dict,
    subtract_reference,
)
from .manifest import build_manifest, changed_outputs, load_manifest, working_directory, write_manifest
from .models import save_model
from .phasematch import (
    REFERENCE_TUNING_POINTS,
    calibrate_geometry,
    geometry_to_dict,
    load_filter_calibration,
    load_geometry,
    tuning_curve,
    tuning_rows_as_dicts,
    wavelength_from_transmission,
    write_tuning_csv,
)
from .simulator import load_sim_config, save_truth, simulate
from .tables import SimpleTable
from .timetag_io import load_timetags, save_timetags

logger = logging.getLogger(__name__)

__all__ = [
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_SOLVER",
    "EXIT_FIT",
    "EXIT_REPLAY_MISMATCH",
    "build_parser",
    "exit_code_for",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_FIT = 4
EXIT_REPLAY_MISMATCH = 5

_LOG_FORMAT = "%(asctime)s [%(levelname)s] [%(name)s] %(message)s"


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the stable exit-code contract."""

    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, FitError):
        return EXIT_FIT
    if isinstance(exc, SolverError):
        return EXIT_SOLVER
    return EXIT_CONFIG


def _uncertain(text: str) -> JitterValue:
    try:
        return parse_uncertain(text)
    except PairJitterError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _jsonable(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, JitterValue):
        return {"sigma": value.sigma, "error": value.error}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    return value


def _args_config(args: argparse.Namespace) -> dict[str, Any]:
    return {
        key: _jsonable(value)
        for key, value in sorted(vars(args).items())
        if key not in {"handler", "verbose", "quiet"}
    }


def _write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _finish(
    args: argparse.Namespace,
    argv: Sequence[str],
    outputs: Sequence[Path],
    inputs: Sequence[Path] = (),
    extra_config: Optional[dict[str, Any]] = None,
    seed: Optional[int] = None,
) -> None:
    config = _args_config(args)
    if extra_config:
        config.update(extra_config)
    manifest = build_manifest(args.command, argv, config, inputs, outputs, seed=seed)
    manifest_path = write_manifest(manifest, outputs[0])
    for path in outputs:
        print("Saved:", path)
    logger.info("Manifest written to %s", manifest_path)


# --------------------------------------------------------------------------- #
# Subcommands
# --------------------------------------------------------------------------- #


def cmd_tuning_curve(args: argparse.Namespace, argv: Sequence[str], out: OutputConfig) -> int:
    geometry = load_geometry(args.geometry)
    if args.calibrate:
        calibration = calibrate_geometry(geometry, REFERENCE_TUNING_POINTS)
        geometry = calibration.geometry
        print(
            f"Calibrated flags: {geometry.polarization} / {geometry.rotation}, "
            f"incidence reference {geometry.incidence_reference_deg:.3f} deg "
            f"(rms {calibration.rms_nm:.2f} nm)"
        )
    rows = tuning_curve(geometry, args.theta_start, args.theta_end, args.points)
    target = write_tuning_csv(rows, out.resolve(args.output))
    print(SimpleTable(tuning_rows_as_dicts(rows)).head(args.preview).to_string())
    inputs = [Path(args.geometry)] if args.geometry else []
    _finish(args, argv, [target], inputs, {"geometry": geometry_to_dict(geometry)})
    if not any(row.ok for row in rows):
        print("No angle in the sweep phase matches.", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _load_pair(args: argparse.Namespace) -> tuple[Any, Any]:
    first = load_timetags(args.a, args.format, sort=args.sort)
    second = load_timetags(args.b, args.format, sort=args.sort)
    return first, second


def cmd_histogram(args: argparse.Namespace, argv: Sequence[str], out: OutputConfig) -> int:
    config = build_histogram_config(args)
    first, second = _load_pair(args)
    h = cross_correlation(first, second, config.window_ps, config.bin_width_ps, workers=config.workers)
    g2 = normalize_g2(h, config.sidebands_ps)
    target = save_histogram(h, out.resolve(args.output), g2)
    print(
        f"{h.total_pairs_considered} pairs in window; floor C0 = {g2.floor:.4f} ± {g2.floor_error:.4f} "
        f"counts/bin; g2 max = {float(g2.g2.max()):.3f}"
    )
    _finish(args, argv, [target], [Path(args.a), Path(args.b)], {"histogram": config.to_dict()})
    return EXIT_OK


def _print_fit(result: Any) -> None:
    for name, value, error in zip(result.names, result.values, result.errors):
        print(f"  {name:>7} = {value:.6g} ± {error:.2g}")
    for name, (value, error) in result.derived.items():
        print(f"  {name:>7} = {value:.6g} ± {error:.2g}")
    print(f"  χ²_red = {result.reduced_chi_square:.4f}  ({result.iterations} iterations, {result.message})")


def cmd_fit(args: argparse.Namespace, argv: Sequence[str], out: OutputConfig) -> int:
    h = load_histogram(args.histogram)
    sigma_ref = args.sigma_ref.sigma if args.sigma_ref is not None else 0.0
    sidebands = [tuple(region) for region in args.sideband] if args.sideband else None
    result = fit_histogram(
        h,
        args.model,
        sigma_ref,
        fit_window=tuple(args.fit_window) if args.fit_window else None,
        sidebands=sidebands,
        weighting=args.weighting,
    )
    target = out.resolve(args.output)
    _write_json(target, fit_result_to_dict(result))
    outputs = [target]
    if args.model_out:
        outputs.append(save_model(result.model, out.resolve(args.model_out)))
    _print_fit(result)
    _finish(args, argv, outputs, [Path(args.histogram)])
    if not result.converged:
        print(f"Fit did not converge: {result.message}", file=sys.stderr)
        return EXIT_FIT
    return EXIT_OK


def cmd_characterize(args: argparse.Namespace, argv: Sequence[str], out: OutputConfig) -> int:
    config = build_histogram_config(args)
    dut = load_timetags(args.dut, args.format, sort=args.sort)
    ref = load_timetags(args.ref, args.format, sort=args.sort)
    report = characterize(
        dut,
        ref,
        args.sigma_ref if args.sigma_ref is not None else 0.0,
        args.model,
        config,
        wavelength_nm=args.wavelength,
        label=args.label,
    )
    target = out.resolve(args.output)
    _write_json(target, report_to_dict(report))
    histogram_path = out.resolve(args.histogram_out or target.with_suffix(".histogram.csv"))
    save_histogram(report.histogram, histogram_path, report.g2)
    _print_fit(report.fit)
    if report.jitter is not None:
        print(f"  DUT jitter: {report.jitter.fwhm:.2f} ± {report.jitter.fwhm_error:.2f} ps FWHM")
    _finish(args, argv, [target, histogram_path], [Path(args.dut), Path(args.ref)], {"histogram": config.to_dict()})
    if not report.fit.converged:
        print(f"Fit did not converge: {report.fit.message}", file=sys.stderr)
        return EXIT_FIT
    return EXIT_OK


def cmd_subtract(args: argparse.Namespace, argv: Sequence[str], out: OutputConfig) -> int:
    result = subtract_reference(args.sigma12, args.sigma_ref)
    print(f"sigma = {result.sigma:.3f} ± {result.error:.3f} ps")
    print(f"FWHM  = {result.fwhm:.2f} ± {result.fwhm_error:.2f} ps")
    if args.output:
        target = out.resolve(args.output)
        _write_json(target, result.to_dict())
        _finish(args, argv, [target])
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, argv: Sequence[str], out: OutputConfig) -> int:
    config = load_sim_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    result = simulate(config)
    out_a = save_timetags(result.stream_a, out.resolve(args.out_a), args.format)
    out_b = save_timetags(result.stream_b, out.resolve(args.out_b), args.format)
    truth = out.resolve(args.truth or out_a.with_name(out_a.stem + ".truth.json"))
    save_truth(result, truth)
    print(f"{len(result.stream_a)} + {len(result.stream_b)} tags from {result.truth['pairs_emitted']} pairs")
    _finish(args, argv, [out_a, out_b, truth], [Path(args.config)], seed=config.seed)
    return EXIT_OK


def cmd_wavelength(args: argparse.Namespace, argv: Sequence[str], out: OutputConfig) -> int:
    cal = load_filter_calibration(args.calibration, wavelength_uncertainty_nm=args.wavelength_uncertainty)
    wavelength, uncertainty = wavelength_from_transmission(cal, args.transmission, args.delta_t)
    print(f"lambda = {wavelength:.2f} ± {uncertainty:.2f} nm")
    if args.output:
        target = out.resolve(args.output)
        _write_json(
            target,
            {"wavelength_nm": wavelength, "uncertainty_nm": uncertainty, "filter": cal.name},
        )
        _finish(args, argv, [target], [Path(args.calibration)])
    return EXIT_OK


def cmd_replay(args: argparse.Namespace, argv: Sequence[str], out: OutputConfig) -> int:
    manifest = load_manifest(args.manifest)
    if manifest.subcommand == "replay":
        print("Refusing to replay a replay manifest.", file=sys.stderr)
        return EXIT_CONFIG
    with working_directory(manifest.cwd):
        code = main(manifest.argv)
    if code != EXIT_OK:
        return code
    changed = changed_outputs(manifest)
    if changed:
        for name in changed:
            print(f"Output differs from manifest: {name}", file=sys.stderr)
        return EXIT_REPLAY_MISMATCH
    print(f"Replayed {manifest.subcommand}: {len(manifest.outputs)} output(s) reproduced.")
    return EXIT_OK


# --------------------------------------------------------------------------- #
# Parser
# --------------------------------------------------------------------------- #


def _add_histogram_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bin", type=int, help="Bin width in ps (default 2, env PAIRJITTER_BIN_PS).")
    p.add_argument("--window", type=int, help="Symmetric window half-width in ps (default 2000).")
    p.add_argument("--window-lo", type=int, help="Lower window edge in ps (overrides --window).")
    p.add_argument("--window-hi", type=int, help="Upper window edge in ps (overrides --window).")
    p.add_argument(
        "--sideband",
        type=float,
        nargs=2,
        action="append",
        metavar=("START", "STOP"),
        help="Sideband region for the accidental floor; repeatable (default: outer quarters).",
    )
    p.add_argument("--workers", type=int, help="Threads for histogramming (env PAIRJITTER_WORKERS).")


def _add_tag_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=["csv", "bin"], help="Time-tag format (default: from suffix).")
    p.add_argument("--sort", action="store_true", help="Sort unsorted time tags instead of refusing them.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pairjitter", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="More logging (-vv for debug).")
    parser.add_argument("-q", "--quiet", action="store_true", help="Only log errors.")
    parser.add_argument("--output-dir", type=Path, help="Base directory for relative output paths.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tuning-curve", help="Signal/idler wavelengths versus angle of incidence.")
    p.add_argument("--geometry", type=Path, help="Source geometry JSON (default: bundled BBO source).")
    p.add_argument("--theta-start", type=float, default=12.7, help="First angle of incidence (deg).")
    p.add_argument("--theta-end", type=float, default=26.7, help="Last angle of incidence (deg).")
    p.add_argument("--points", type=int, default=15, help="Number of angles (>= 2).")
    p.add_argument(
        "--calibrate",
        action="store_true",
        help="Fit polarization/rotation flags and the incidence reference to reference points.",
    )
    p.add_argument("--output", default="tuning_curve.csv", help="CSV output path.")
    p.add_argument("--preview", type=int, default=20, help="Rows to print.")
    p.set_defaults(handler=cmd_tuning_curve)

    p = sub.add_parser("histogram", help="Cross-correlation histogram of two time-tag files.")
    p.add_argument("--a", required=True, type=Path, help="First channel (t1).")
    p.add_argument("--b", required=True, type=Path, help="Second channel (t2); histogram of t1 - t2.")
    _add_tag_options(p)
    _add_histogram_options(p)
    p.add_argument("--output", default="histogram.csv", help="CSV output path.")
    p.set_defaults(handler=cmd_histogram)

    p = sub.add_parser("fit", help="Fit a response model to a histogram CSV.")
    p.add_argument("--histogram", required=True, type=Path, help="Histogram CSV written by 'histogram'.")
    p.add_argument("--model", required=True, choices=sorted(FAMILY_PARAMETERS), help="Response family.")
    p.add_argument("--sigma-ref", type=_uncertain, help="Reference jitter sigma as value,error (ps).")
    p.add_argument("--fit-window", type=float, nargs=2, metavar=("LO", "HI"), help="Restrict the fit to [LO, HI) ps.")
    p.add_argument(
        "--sideband", type=float, nargs=2, action="append", metavar=("START", "STOP"), help="Sideband region."
    )
    p.add_argument(
        "--weighting",
        choices=WEIGHTINGS,
        default="poisson",
        help="Bin weights: observed counts only, or refined from expected counts (default).",
    )
    p.add_argument("--output", default="fit.json", help="JSON fit report.")
    p.add_argument("--model-out", help="Also write the fitted response model JSON.")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("characterize", help="Histogram, fit and summarize a DUT against a reference.")
    p.add_argument("--dut", required=True, type=Path, help="Detector-under-test time tags.")
    p.add_argument("--ref", required=True, type=Path, help="Reference detector time tags.")
    p.add_argument("--model", required=True, choices=sorted(FAMILY_PARAMETERS), help="Response family.")
    p.add_argument("--sigma-ref", type=_uncertain, help="Reference jitter sigma as value,error (ps).")
    p.add_argument("--wavelength", type=float, help="DUT wavelength in nm (metadata).")
    p.add_argument("--label", help="Free-form label stored in the report.")
    _add_tag_options(p)
    _add_histogram_options(p)
    p.add_argument("--output", default="report.json", help="JSON report path.")
    p.add_argument("--histogram-out", help="Histogram CSV path (default: <report>.histogram.csv).")
    p.set_defaults(handler=cmd_characterize)

    p = sub.add_parser("subtract", help="Remove reference jitter in quadrature.")
    p.add_argument("--sigma12", required=True, type=_uncertain, help="Combined sigma as value,error (ps).")
    p.add_argument("--sigma-ref", required=True, type=_uncertain, help="Reference sigma as value,error (ps).")
    p.add_argument("--output", help="Optional JSON output.")
    p.set_defaults(handler=cmd_subtract)

    p = sub.add_parser("simulate", help="Generate correlated time-tag streams.")
    p.add_argument("--config", required=True, type=Path, help="Simulation config JSON.")
    p.add_argument("--out-a", required=True, help="Output for detector a.")
    p.add_argument("--out-b", required=True, help="Output for detector b.")
    p.add_argument("--format", choices=["csv", "bin"], help="Output format (default: from suffix).")
    p.add_argument("--seed", type=int, help="Override the config seed.")
    p.add_argument("--truth", help="Truth record path (default: <out-a stem>.truth.json).")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("wavelength", help="Signal wavelength from a filter transmission.")
    p.add_argument("--calibration", required=True, type=Path, help="wavelength_nm,transmission CSV.")
    p.add_argument("--transmission", required=True, type=float, help="Measured transmission.")
    p.add_argument("--delta-t", type=float, default=0.0, help="Transmission uncertainty.")
    p.add_argument("--wavelength-uncertainty", type=float, default=0.0, help="Calibration uncertainty (nm).")
    p.add_argument("--output", help="Optional JSON output.")
    p.set_defaults(handler=cmd_wavelength)

    p = sub.add_parser("replay", help="Re-run a command from its manifest and compare outputs.")
    p.add_argument("manifest", type=Path, help="A *.manifest.json file.")
    p.set_defaults(handler=cmd_replay)
    return parser


def _configure_logging(verbose: int, quiet: bool) -> None:
    if quiet:
        level = logging.ERROR
    elif verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    logging.basicConfig(level=level, format=_LOG_FORMAT, stream=sys.stderr)
    logging.getLogger("pairjitter").setLevel(level)


def main(argv: Sequence[str] | None = None) -> int:
    arguments = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(arguments)
    _configure_logging(args.verbose, args.quiet)
    handler: Callable[[argparse.Namespace, Sequence[str], OutputConfig], int] = args.handler
    try:
        out = build_output_config(args)
        return handler(args, arguments, out)
    except (PairJitterError, OSError) as exc:
        code = exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        logger.debug("Command failed", exc_info=True)
        return code


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
