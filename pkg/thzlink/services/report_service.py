import csv
import json
import logging
import os
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from thzlink.exceptions import ConfigError
from thzlink.schemas.experiment import StrategyResult

logger = logging.getLogger(__name__)

# stable SVG output across runs
matplotlib.rcParams["svg.hashsalt"] = "thzlink"


class ReportService:
    """CSV tables, JSON results and SVG plots for a set of strategy results"""

    @staticmethod
    def _prepare(results: List[StrategyResult], out_dir: str) -> None:
        if not results:
            raise ConfigError("No strategy results to report")
        counts = {len(r.attenuation_db) for r in results}
        if len(counts) != 1:
            raise ConfigError(f"Strategy results disagree on the slot count: {sorted(counts)}")
        try:
            os.makedirs(out_dir, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"Cannot create output directory {out_dir}: {exc}") from exc

    @staticmethod
    def _write(path: str, header: List[str], rows: List[List]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            for row in rows:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])

    @staticmethod
    def write_attenuation_by_slot(results: List[StrategyResult], path: str) -> None:
        header = ["slot"] + [f"{r.strategy.value}_attenuation_db" for r in results]
        rows = [
            [k + 1] + [float(r.attenuation_db[k]) for r in results] for k in range(len(results[0].attenuation_db))
        ]
        ReportService._write(path, header, rows)

    @staticmethod
    def write_power_by_slot(results: List[StrategyResult], path: str) -> None:
        """Per-slot total transmit power, capacity and flight configuration of each strategy."""
        header = ["slot"]
        for r in results:
            name = r.strategy.value
            header += [f"{name}_mach", f"{name}_attack_deg", f"{name}_power_w", f"{name}_capacity_bps"]
        rows = []
        for k in range(len(results[0].attenuation_db)):
            row: List = [k + 1]
            for r in results:
                row += [
                    float(r.plan.mach[k]),
                    float(r.plan.attack_deg[k]),
                    float(sum(r.power_w[k])),
                    float(r.capacity_bps[k]),
                ]
            rows.append(row)
        ReportService._write(path, header, rows)

    @staticmethod
    def write_summary(results: List[StrategyResult], path: str) -> None:
        header = ["strategy", "mean_attenuation_db", "spectral_efficiency_bps_hz", "bound_fraction"]
        rows = [
            [r.strategy.value, float(r.mean_attenuation_db), float(r.spectral_efficiency), float(r.bound_fraction)]
            for r in results
        ]
        ReportService._write(path, header, rows)

    @staticmethod
    def write_results_json(results: List[StrategyResult], path: str) -> None:
        payload = [r.model_dump(mode="json") for r in results]
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=1)
            handle.write("\n")

    @staticmethod
    def load_results_json(path: str) -> List[StrategyResult]:
        if not os.path.exists(path):
            raise ConfigError(f"Results file not found: {path}")
        with open(path, encoding="utf-8") as handle:
            return [StrategyResult.model_validate(item) for item in json.load(handle)]

    @staticmethod
    def plot(results: List[StrategyResult], out_dir: str) -> List[str]:
        """Attenuation and power over slots (lines) and spectral efficiency (bars) as SVG."""
        slots = list(range(1, len(results[0].attenuation_db) + 1))
        written = []

        def save(fig, name: str) -> None:
            path = os.path.join(out_dir, name)
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)

        fig, ax = plt.subplots(figsize=(7, 4))
        for r in results:
            ax.plot(slots, r.attenuation_db, marker="o", label=r.strategy.value)
        ax.set_xlabel("Time slot")
        ax.set_ylabel("Turbulent attenuation (dB)")
        ax.legend()
        ax.grid(True, alpha=0.3)
        save(fig, "attenuation_by_slot.svg")

        fig, ax = plt.subplots(figsize=(7, 4))
        for r in results:
            ax.plot(slots, [sum(row) for row in r.power_w], marker="s", label=r.strategy.value)
        ax.set_xlabel("Time slot")
        ax.set_ylabel("Transmit power (W)")
        ax.legend()
        ax.grid(True, alpha=0.3)
        save(fig, "power_by_slot.svg")

        fig, ax = plt.subplots(figsize=(6, 4))
        names = [r.strategy.value for r in results]
        ax.bar(names, [r.spectral_efficiency for r in results], color="tab:blue")
        ax.set_ylabel("Spectral efficiency (bit/s/Hz)")
        save(fig, "spectral_efficiency.svg")
        return written

    @staticmethod
    def plot_spectrum(rows: List[Dict[str, float]], path: str) -> str:
        """Loss components against frequency as one SVG."""
        freqs_ghz = [row["frequency_hz"] / 1e9 for row in rows]
        fig, ax = plt.subplots(figsize=(7, 4))
        for column, label in (
            ("fspl_db", "Free-space"),
            ("absorption_db", "Molecular absorption"),
            ("turbulence_db", "Turbulence"),
            ("total_db", "Total"),
        ):
            ax.plot(freqs_ghz, [row[column] for row in rows], marker=".", label=label)
        ax.set_xlabel("Frequency (GHz)")
        ax.set_ylabel("Loss (dB)")
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        return path

    @staticmethod
    def report(results: List[StrategyResult], out_dir: str, svg: bool = False) -> Dict[str, str]:
        """
        Write every report artifact for `results` into `out_dir`.

        Returns:
            Mapping of artifact name to path
        """
        ReportService._prepare(results, out_dir)
        paths = {
            "attenuation_by_slot": os.path.join(out_dir, "attenuation_by_slot.csv"),
            "power_by_slot": os.path.join(out_dir, "power_by_slot.csv"),
            "summary": os.path.join(out_dir, "summary.csv"),
            "results": os.path.join(out_dir, "results.json"),
        }
        ReportService.write_attenuation_by_slot(results, paths["attenuation_by_slot"])
        ReportService.write_power_by_slot(results, paths["power_by_slot"])
        ReportService.write_summary(results, paths["summary"])
        ReportService.write_results_json(results, paths["results"])
        if svg:
            for path in ReportService.plot(results, out_dir):
                paths[os.path.splitext(os.path.basename(path))[0] + "_svg"] = path
        logger.info(f"Wrote report for {len(results)} strategies to {out_dir}", extra={"out_dir": out_dir})
        return paths
