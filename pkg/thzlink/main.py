import argparse
import logging
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

from thzlink import __version__
from thzlink.config import settings
from thzlink.exceptions import ConfigError, DomainError, InfeasibleError, NumericalError
from thzlink.executors.field_executor import field_filename
from thzlink.schemas.enums import FieldSource, OracleType, OptimizerKind, StrategyName
from thzlink.schemas.experiment import ExperimentConfig
from thzlink.schemas.surrogate import OptimizerConfig
from thzlink.services.absorption_service import AbsorptionService
from thzlink.services.calibration_service import CalibrationService
from thzlink.services.channel_service import ChannelService
from thzlink.services.dataset_service import DatasetService
from thzlink.services.experiment_service import ExperimentService
from thzlink.services.flowfield_service import FlowfieldService
from thzlink.services.geometry_service import GeometryService
from thzlink.services.optimizer_service import OptimizerService
from thzlink.services.oracle_service import OracleService
from thzlink.services.report_service import ReportService
from thzlink.services.scenario_service import ScenarioService
from thzlink.services.surrogate_service import SurrogateService
from thzlink.services.turbulence_service import TurbulenceService

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4


def _field_source(args) -> FieldSource:
    return FieldSource.IMPORT if args.field_dir else FieldSource.GENERATOR


def _model_path(args) -> str:
    return args.model or os.path.join(args.out, "surrogate.json")


def _dataset_path(args) -> str:
    return args.dataset or os.path.join(args.out, "dataset.txt")


def _write_diagnostics(scenario, args, mach: float, attack: float) -> None:
    field = FlowfieldService.generate_wake_field(mach, attack, seed=args.seed)
    c0 = CalibrationService.resolve_c0()
    rows = []
    for path in GeometryService.all_slots(scenario):
        rows.extend(
            TurbulenceService.diagnostics(
                field, path, settings.reference_frequency_hz, scenario.altitude_m, scenario.ground_ref_m, c0=c0
            )
        )
    TurbulenceService.write_diagnostics(os.path.join(args.out, "turbulence_diagnostics.csv"), rows)


def cmd_gen_fields(args, scenario) -> int:
    field_dir = args.field_dir or os.path.join(args.out, "fields")
    for mach, attack in ExperimentService.feasible_pairs(scenario):
        field = FlowfieldService.generate_wake_field(mach, attack, seed=args.seed)
        FlowfieldService.export_field(field, os.path.join(field_dir, field_filename(mach, attack)))
    logger.info(f"Exported {len(scenario.feasible_mach) * len(scenario.feasible_attack_deg)} fields to {field_dir}")
    return EXIT_OK


def cmd_gen_dataset(args, scenario) -> int:
    c0 = CalibrationService.resolve_c0()
    rows = DatasetService.generate_dataset(scenario, DatasetService.default_conditions(), c0, seed=args.seed)
    DatasetService.save_dataset(rows, _dataset_path(args))
    return EXIT_OK


def cmd_train_surrogate(args, scenario) -> int:
    dataset = DatasetService.load_dataset(_dataset_path(args))
    overrides = {"kind": args.optimizer}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    result = SurrogateService.train(dataset, opt_config=OptimizerConfig(**overrides), seed=args.seed)
    SurrogateService.save_model(result.model, _model_path(args))
    logger.info(
        f"Trained surrogate for {result.epochs_run} epochs (final loss {result.loss_trace[-1]:.4e})",
        extra={"early_stopped": result.early_stopped},
    )
    return EXIT_OK


def cmd_calibrate(args, scenario) -> int:
    result = CalibrationService.calibrate(scenario, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "calibration.json"), "w", encoding="utf-8") as handle:
        handle.write(result.model_dump_json(indent=1) + "\n")
    print(f"THZLINK_C0_SCALE={result.scale!r} c0={result.c0!r} range_db=[{result.min_loss_db:.3f}, {result.max_loss_db:.3f}]")
    if args.diagnostics:
        _write_diagnostics(scenario, args, settings.calibration_mach, 0.0)
    return EXIT_OK


def _experiment_config(args) -> ExperimentConfig:
    return ExperimentConfig(
        scenario_path=args.scenario,
        field_source=_field_source(args),
        field_dir=args.field_dir,
        model_path=_model_path(args),
        strategies=args.strategies,
        seed=args.seed,
        output_dir=args.out,
        svg=args.svg,
        full_band=args.full_band,
        concurrent=args.concurrent,
    )


def cmd_run(args, scenario) -> int:
    config = _experiment_config(args)
    results = ExperimentService.run_experiment(config, scenario)
    ReportService.report(results, config.output_dir, config.svg)
    for result in results:
        if result.trace is not None:
            OptimizerService.write_trace(
                result.trace, os.path.join(config.output_dir, f"trace_{result.strategy.value}.csv")
            )
    return EXIT_OK


def cmd_report(args, scenario) -> int:
    results_path = args.results or os.path.join(args.out, "results.json")
    results = ReportService.load_results_json(results_path)
    ReportService.report(results, args.out, args.svg)
    return EXIT_OK


def _true_oracle(args, scenario):
    return OracleService.build(OracleType.FIELD, scenario, _field_source(args), args.field_dir, seed=args.seed)


def cmd_sweep(args, scenario) -> int:
    rows = ExperimentService.attenuation_sweep(scenario, _true_oracle(args, scenario))
    ExperimentService.write_rows(rows, os.path.join(args.out, "attenuation_sweep.csv"))
    if args.diagnostics:
        _write_diagnostics(scenario, args, settings.calibration_mach, 0.0)
    return EXIT_OK


def cmd_compare(args, scenario) -> int:
    rows = ExperimentService.compare_power_allocation(scenario, _true_oracle(args, scenario))
    ExperimentService.write_rows(rows, os.path.join(args.out, "power_allocation.csv"))
    if args.seeds:
        config = _experiment_config(args)
        model = SurrogateService.load_model(config.model_path) if StrategyName.OPTIMIZED in config.strategies else None
        seeds = range(args.seed, args.seed + args.seeds)
        ordering, hits = ExperimentService.ordering_study(config, scenario, seeds, model)
        ExperimentService.write_rows(ordering, os.path.join(args.out, "ordering.csv"))
        print(f"ordering held on {hits}/{len(ordering)} seeds")
    return EXIT_OK


def cmd_spectrum(args, scenario) -> int:
    k = args.slot if args.slot is not None else (scenario.slot_count + 1) // 2
    rows = ExperimentService.spectrum_rows(scenario, _true_oracle(args, scenario), args.mach, args.attack, k)
    ExperimentService.write_rows(rows, os.path.join(args.out, "attenuation_spectrum.csv"))
    AbsorptionService.save_table(ChannelService.absorption_table(scenario), os.path.join(args.out, "absorption_table.txt"))
    if args.svg:
        ReportService.plot_spectrum(rows, os.path.join(args.out, "attenuation_spectrum.svg"))
    return EXIT_OK


def cmd_evaluate_surrogate(args, scenario) -> int:
    model = SurrogateService.load_model(_model_path(args))
    evaluation = SurrogateService.evaluate_surrogate(
        model, scenario, DatasetService.held_out_conditions(), seed=args.seed
    )
    ExperimentService.write_rows(
        [row.model_dump() for row in evaluation.rows], os.path.join(args.out, "surrogate_evaluation.csv")
    )
    print(f"rmse_db={evaluation.rmse_db!r}")
    return EXIT_OK


COMMANDS = {
    "gen-fields": cmd_gen_fields,
    "gen-dataset": cmd_gen_dataset,
    "train-surrogate": cmd_train_surrogate,
    "calibrate": cmd_calibrate,
    "run": cmd_run,
    "report": cmd_report,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "evaluate-surrogate": cmd_evaluate_surrogate,
    "spectrum": cmd_spectrum,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="INI scenario file (defaults built in)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="results", help="Output directory")
    common.add_argument("--full-band", action="store_true", help="Tile the band with 10 MHz sub-bands")
    common.add_argument("--field-dir", help="Directory of field files (import source, or gen-fields target)")
    common.add_argument("--model", help="Surrogate model JSON (default <out>/surrogate.json)")
    common.add_argument("--dataset", help="Dataset text file (default <out>/dataset.txt)")
    common.add_argument("--log-level", default=None, help="Logging level (default from THZLINK_LOG_LEVEL)")

    parser = argparse.ArgumentParser(prog="thzlink", description="Turbulence-aware THz air-to-ground link simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        command = sub.add_parser(name, parents=[common])
        if name in ("run", "report", "compare", "spectrum"):
            command.add_argument("--svg", action="store_true", help="Also write SVG plots")
        if name in ("run", "compare"):
            command.add_argument(
                "--strategies",
                default=",".join(s.value for s in StrategyName),
                help="Comma-separated subset of optimized,expert,random,fixed",
            )
            command.add_argument("--concurrent", action="store_true", help="Run strategies on a thread pool")
        if name in ("calibrate", "sweep"):
            command.add_argument("--diagnostics", action="store_true", help="Dump per-sample B and running variance")
        if name == "report":
            command.add_argument("--results", help="results.json to re-render (default <out>/results.json)")
        if name == "compare":
            command.add_argument("--seeds", type=int, default=0, help="Also run the strategy ordering over N seeds")
        if name == "spectrum":
            command.add_argument("--slot", type=int, default=None, help="Slot index (default the middle slot)")
            command.add_argument("--mach", type=float, default=0.7)
            command.add_argument("--attack", type=float, default=0.0)
        if name == "train-surrogate":
            command.add_argument("--optimizer", default=OptimizerKind.SGD.value, choices=[k.value for k in OptimizerKind])
            command.add_argument("--epochs", type=int, default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        scenario = ScenarioService.load_scenario(args.scenario, args.full_band)
        return COMMANDS[args.command](args, scenario)
    except (ConfigError, ValidationError, DomainError) as exc:
        logger.error(f"Configuration error: {exc}", extra={"command": args.command})
        return EXIT_CONFIG
    except InfeasibleError as exc:
        logger.error(f"Infeasible: {exc}", extra={"command": args.command})
        return EXIT_INFEASIBLE
    except NumericalError as exc:
        logger.error(f"Numerical failure: {exc}", extra={"command": args.command})
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
