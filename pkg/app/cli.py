"""Command-line entry point: predictions, simulation and analysis.

    python -m app.cli eta --Fa 3 --Fb 2 --Fc 3
    python -m app.cli simulate -n 100000 --seed 7 -o run.log
    python -m app.cli analyze-chsh run.log --format json

Exit codes: 0 success, 1 usage error, 2 invalid input or data, 3 fit failure.
"""
import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.config import configure_logging, get_settings
from app.exceptions import FitError
from app.models.angular import HalfInt, LevelScheme
from app.models.experiment import EventLog, ExperimentConfig, GateConfig
from app.models.measurement import CHSHAngles, FringeModel, MeasurementSetting
from app.services import analysis, predictor
from app.services.angular_momentum import branching_table, cos2_eta, mixing_angle_from_table
from app.services.collective_ops import check_operators
from app.services.event_log_service import (
    default_settings,
    parse_event_log,
    parse_experiment_config,
    parse_settings_file,
    read_decay_points,
    read_fringe_points,
    rows_to_csv,
    write_event_log,
)
from app.services.quantum_state import concurrence, ideal_state
from app.services.simulator import SimulationService, expected_g_si

logger = logging.getLogger("app.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_FIT = 3

DEFAULT_ETA = 0.81 * math.pi / 4


class UsageErrorParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class Report:
    title: str
    summary: Dict[str, object] = field(default_factory=dict)
    rows: List[Dict[str, object]] = field(default_factory=list)


def _quantum_number(text: str) -> HalfInt:
    try:
        return HalfInt.of(text)
    except (ValueError, ZeroDivisionError) as e:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer or half-integer") from e


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"{value} is negative")
    return value


def _angles(values: Optional[Sequence[float]]) -> CHSHAngles:
    return CHSHAngles.canonical() if values is None else CHSHAngles.from_degrees(*values)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    return str(value)


def render(report: Report, fmt: str) -> str:
    if fmt == "json":
        return json.dumps({"summary": report.summary, "rows": report.rows}, indent=2,
                          default=_json_default) + "\n"
    if fmt == "csv":
        # rows table, blank line, one-row summary table
        blocks = [rows_to_csv(report.rows)] if report.rows else []
        if report.summary:
            blocks.append(rows_to_csv([report.summary]))
        return "\n".join(blocks)

    lines = [report.title, "=" * len(report.title)]
    if report.rows:
        columns = list(report.rows[0].keys())
        cells = [[_text_cell(row.get(c)) for c in columns] for row in report.rows]
        widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(columns)]
        lines.append("  ".join(c.rjust(w) for c, w in zip(columns, widths)))
        lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells]
        lines.append("")
    lines += [f"{key}: {_text_cell(value)}" for key, value in report.summary.items()]
    return "\n".join(lines) + "\n"


def _text_cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def cmd_eta(args) -> Report:
    table = branching_table(LevelScheme(args.Fa, args.Fb, args.Fc))
    eta = mixing_angle_from_table(table)
    exact = cos2_eta(table)
    rows = [{"m": str(m), "alpha": alpha, "X": x, "X_squared": str(table.squares[(m, alpha)])}
            for (m, alpha), x in table.items()]
    return Report(
        title=f"Mixing angle for F_a={args.Fa}, F_b={args.Fb}, F_c={args.Fc}",
        summary={
            "eta_rad": eta,
            "eta_over_pi_4": eta / (math.pi / 4),
            "cos2_eta": float(exact),
            "cos2_eta_exact": str(exact),
            "concurrence": concurrence(ideal_state(eta)),
        },
        rows=rows,
    )


def cmd_predict_fringe(args) -> Report:
    theta_i = math.radians(args.theta_i)
    background = args.background
    if args.visibility is not None:
        background = predictor.background_for_visibility(args.eta, theta_i, args.amplitude, args.visibility)
    model = FringeModel(eta=args.eta, amplitude=args.amplitude, background=background)
    rows = []
    for k in range(args.points * args.periods + 1):
        theta_s_deg = 180.0 * k / args.points
        setting = MeasurementSetting.from_degrees(theta_s_deg, args.theta_i)
        rows.append({"theta_s_deg": theta_s_deg, "counts": predictor.coincidence_rate(model, setting)})
    return Report(
        title=f"Coincidence fringe at theta_i = {args.theta_i:g} deg",
        summary={"eta_rad": args.eta, "amplitude": args.amplitude, "background": background,
                 "visibility": predictor.fringe_visibility(model, theta_i)},
        rows=rows,
    )


def _chsh_rows(result) -> List[Dict[str, object]]:
    return [{"theta_s_deg": e.theta_s_deg, "theta_i_deg": e.theta_i_deg, "E": e.E, "sigma_E": e.sigma_E}
            for e in result.E_values]


def cmd_predict_chsh(args) -> Report:
    angles = _angles(args.angles)
    result = predictor.predict_chsh(args.eta, angles, args.visibility)
    return Report(
        title="Predicted correlation functions",
        summary={"S": result.S, "ideal_S": predictor.predict_ideal_S(args.eta, angles),
                 "visibility": args.visibility, "violates_bound": result.violates_bound},
        rows=_chsh_rows(result),
    )


def cmd_simulate(args) -> Report:
    config = parse_experiment_config(args.config) if args.config else ExperimentConfig()
    if args.delta_t_ns is not None:
        config = ExperimentConfig(**{**config.model_dump(), "delta_t_ns": args.delta_t_ns})
    settings = parse_settings_file(args.settings) if args.settings else default_settings()
    if args.trials == 0:
        log = EventLog(config=config, settings=settings, seed=args.seed, n_trials_per_setting=0)
        rows = []
    else:
        service = SimulationService(workers=args.workers)
        run = service.simulate(config, settings, args.trials, args.seed)
        log = run.log
        rows = [{"setting_id": k, "theta_s_deg": s.theta_s_deg, "theta_i_deg": s.theta_i_deg,
                 "n_s": run.tally.counts[k].n_s, "n_i": run.tally.counts[k].n_i,
                 "n_si": run.tally.counts[k].n_si}
                for k, s in enumerate(settings)]
    write_event_log(log, args.output)
    return Report(
        title=f"Simulated {log.n_trials} trials",
        summary={"log": str(args.output), "seed": args.seed, "n_trials_per_setting": args.trials,
                 "n_events": log.n_events, "expected_g_si": expected_g_si(config),
                 "acquisition_time_s": log.n_trials * config.effective_cycle_ns * 1e-9},
        rows=rows,
    )


def _gates(args, log: EventLog) -> GateConfig:
    gates = GateConfig.from_experiment(log.config)
    updates = {}
    if args.gate_d1_ns is not None:
        updates["d1_width_ns"] = args.gate_d1_ns
    if args.gate_d2_ns is not None:
        updates["d2_width_ns"] = args.gate_d2_ns
    return GateConfig(**{**gates.model_dump(), **updates})


def cmd_analyze_chsh(args) -> Report:
    log = parse_event_log(args.log)
    result = analysis.chsh_from_log(log, _gates(args, log), _angles(args.angles))
    return Report(
        title="Measured correlation function E(theta_s, theta_i) and S",
        summary={"S": result.S, "sigma_S": result.sigma_S, "violates_bound": result.violates_bound},
        rows=_chsh_rows(result),
    )


def cmd_analyze_gsi(args) -> Report:
    log = parse_event_log(args.log)
    table = analysis.gate_and_count(log, _gates(args, log))
    g, sigma = analysis.compute_g_si(table)
    alpha_s, alpha_i = analysis.detection_efficiency(table)
    return Report(
        title="Signal-idler correlation",
        summary={"delta_t_ns": log.config.delta_t_ns, "g_si": g, "sigma_g_si": sigma,
                 "alpha_s": alpha_s, "alpha_i": alpha_i},
        rows=analysis.per_setting_rows(log, table),
    )


def cmd_fit_fringe(args) -> Report:
    points = read_fringe_points(args.data)
    fit = analysis.fit_fringe(points, args.eta, math.radians(args.theta_i))
    return Report(
        title="Fringe fit",
        summary={"amplitude": fit.amplitude, "background": fit.background,
                 "phase_offset_deg": math.degrees(fit.phase_offset), "visibility": fit.visibility,
                 "chi2": fit.chi2},
        rows=[{"theta_s_deg": math.degrees(p.theta_s), "counts": p.counts, "residual": r}
              for p, r in zip(points, fit.residuals)],
    )


def cmd_fit_decay(args) -> Report:
    points = read_decay_points(args.data)
    fit = analysis.fit_exponential(points)
    return Report(
        title="Exponential decay fit",
        summary={"tau_ns": fit.tau_ns, "sigma_tau_ns": fit.sigma_tau_ns, "amplitude": fit.amplitude,
                 "floor": fit.floor, "chi2": fit.chi2},
        rows=[{"delta_t_ns": p.delta_t_ns, "g_si": p.g_si, "residual": r}
              for p, r in zip(points, fit.residuals)],
    )


def cmd_check_ops(args) -> Report:
    result = check_operators(args.n_max, seed=args.seed, F_a=args.Fa, F_b=args.Fb, F_c=args.Fc)
    return Report(
        title="Collective operator checks",
        summary={"scaling_exponent": result["scaling_exponent"]},
        rows=result["rows"],
    )


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    common = UsageErrorParser(add_help=False)
    common.add_argument("--seed", type=_non_negative_int, default=settings.default_seed)
    common.add_argument("-o", "--output", type=Path, help="write the report (or, for simulate, the log) here")
    common.add_argument("--format", choices=("csv", "json"), help="machine-readable output")
    common.add_argument("--log-level", default=None, help="logging level (default from ENTANGLEMENT_LOG_LEVEL)")

    eta_arg = dict(type=float, default=DEFAULT_ETA, help="mixing angle in radians")
    angles_arg = dict(type=float, nargs=4, metavar=("S", "S_PRIME", "I", "I_PRIME"),
                      help="CHSH polarizer angles in degrees (default -22.5 22.5 0 -45)")

    parser = UsageErrorParser(prog="entanglement", description="Atom-photon entanglement toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eta", parents=[common], help="mixing angle from Clebsch-Gordan coefficients")
    p.add_argument("--Fa", type=_quantum_number, default=HalfInt.of(3))
    p.add_argument("--Fb", type=_quantum_number, default=HalfInt.of(2))
    p.add_argument("--Fc", type=_quantum_number, default=HalfInt.of(3))
    p.set_defaults(handler=cmd_eta)

    p = sub.add_parser("predict-fringe", parents=[common], help="coincidence fringe over theta_s")
    p.add_argument("--eta", **eta_arg)
    p.add_argument("--theta-i", type=float, default=67.5, help="idler polarizer angle in degrees")
    p.add_argument("--amplitude", type=float, default=1.0)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--background", type=float, default=0.0)
    group.add_argument("--visibility", type=float, help="choose the background giving this visibility")
    p.add_argument("--points", type=int, default=64, help="samples per period")
    p.add_argument("--periods", type=int, default=1)
    p.set_defaults(handler=cmd_predict_fringe)

    p = sub.add_parser("predict-chsh", parents=[common], help="E values and S for a white-noise state")
    p.add_argument("--eta", **eta_arg)
    p.add_argument("--visibility", type=float, default=1.0)
    p.add_argument("--angles", **angles_arg)
    p.set_defaults(handler=cmd_predict_chsh)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo event log")
    p.add_argument("--config", type=Path, help="key = value experiment config file")
    p.add_argument("--settings", type=Path, help="'setting <id> <theta_s_deg> <theta_i_deg>' lines")
    p.add_argument("-n", "--trials", type=_non_negative_int, required=True, help="trials per setting")
    p.add_argument("--delta-t-ns", type=float, help="override the storage time")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(handler=cmd_simulate)

    for name, handler, text in (("analyze-chsh", cmd_analyze_chsh, "S from an event log"),
                                ("analyze-gsi", cmd_analyze_gsi, "g_si and detection efficiencies")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("log", type=Path)
        p.add_argument("--gate-d1-ns", type=float, help="D1 gate width (default from the log)")
        p.add_argument("--gate-d2-ns", type=float, help="D2 gate width (default from the log)")
        if name == "analyze-chsh":
            p.add_argument("--angles", **angles_arg)
        p.set_defaults(handler=handler)

    p = sub.add_parser("fit-fringe", parents=[common],
                       help="fit a fringe; CSV columns theta_s_deg,counts,sigma")
    p.add_argument("data", type=Path)
    p.add_argument("--eta", **eta_arg)
    p.add_argument("--theta-i", type=float, default=67.5, help="idler polarizer angle in degrees")
    p.set_defaults(handler=cmd_fit_fringe)

    p = sub.add_parser("fit-decay", parents=[common],
                       help="fit g_si decay; CSV columns delta_t_ns,g_si,sigma")
    p.add_argument("data", type=Path)
    p.set_defaults(handler=cmd_fit_decay)

    p = sub.add_parser("check-ops", parents=[common], help="collective operator scaling with N")
    p.add_argument("-N", "--n-max", type=int, default=12, help="largest atom number (1..12)")
    p.add_argument("--Fa", type=_quantum_number, default=HalfInt.of(3))
    p.add_argument("--Fb", type=_quantum_number, default=HalfInt.of(2))
    p.add_argument("--Fc", type=_quantum_number, default=HalfInt.of(3))
    p.set_defaults(handler=cmd_check_ops)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate" and args.output is None:
        parser.error("simulate requires -o/--output for the event log")
    configure_logging(args.log_level)
    try:
        report = args.handler(args)
    except FitError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FIT
    except (ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA

    text = render(report, args.format or "text")
    if args.output is not None and args.command != "simulate":
        args.output.parent.mkdir(parents=True, exist_ok=True)
        args.output.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
