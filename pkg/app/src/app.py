import logging
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import TOOL_VERSION, get_default_correlation
from src.data_models import G2Curve
from src.errors import ConfigError
from src.fit_adapters import FitModelFactory
from src.fit_models import FitResult
from src.model import (
    eval_g2_detected,
    eval_g2_sd,
    eval_g2_tpi,
    temporal_filter_bandwidth,
)
from src.models import ExperimentConfig, RunManifest, StarkParams, TpiConfig
from src.montecarlo import simulate_experiment
from src.parallel import WorkerPool
from src.repositories import (
    G2_COLUMNS,
    TUNING_COLUMNS,
    CurveRepository,
    DocumentRepository,
    PathLike,
    TagRepository,
    file_digest,
    manifest_path,
)
from src.stark import VoltageSolution, voltage_for_detuning
from src.tagproc import correlate_stream

logger = logging.getLogger("app")

DATA_COLUMNS = {"g2": G2_COLUMNS, "tuning": TUNING_COLUMNS}


class HomLabApp:
    """
    Runs the command workflows: simulate, correlate, fit, stark, predict.
    Storage is injected so the workflows can be driven from tests with
    any repository implementation.
    """

    def __init__(
        self,
        tags: TagRepository,
        curves: CurveRepository,
        documents: DocumentRepository,
        threads: int = 1,
    ):
        self.tags = tags
        self.curves = curves
        self.documents = documents
        self.threads = threads

    def _write_manifest(
        self,
        command: str,
        started: Tuple[str, float],
        outputs: Sequence[PathLike],
        inputs: Sequence[PathLike] = (),
        config: Optional[Dict[str, Any]] = None,
        seed: Optional[int] = None,
        metadata: Optional[Dict[str, Any]] = None,
    ) -> Path:
        started_at, clock = started
        manifest = RunManifest(
            command=command,
            tool_version=TOOL_VERSION,
            config=config or {},
            seed=seed,
            inputs=[file_digest(p) for p in inputs],
            outputs=[file_digest(p) for p in outputs],
            started_at=started_at,
            wall_clock_s=time.perf_counter() - clock,
            metadata=metadata or {},
        )
        path = manifest_path(outputs[0])
        self.documents.save(manifest, path)
        logger.info(f"Wrote manifest {path}")
        return path

    @staticmethod
    def _start() -> Tuple[str, float]:
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        return stamp, time.perf_counter()

    def simulate(
        self, config_path: PathLike, out: PathLike, seed: Optional[int] = None
    ) -> Dict[str, Any]:
        started = self._start()
        config = self.documents.load(config_path, ExperimentConfig)
        if seed is not None:
            config = ExperimentConfig.model_validate(
                {**config.model_dump(), "seed": seed}
            )

        with WorkerPool(self.threads) as pool:
            stream = simulate_experiment(config, pool=pool)
        self.tags.write(stream, out)
        logger.info(f"Wrote {len(stream)} tags to {out}")

        metadata = {**stream.metadata, "duration_ps": stream.duration}
        self._write_manifest(
            "simulate",
            started,
            outputs=[out],
            inputs=[config_path],
            config=config.model_dump(mode="json"),
            seed=config.seed,
            metadata=metadata,
        )
        return {
            "tags": len(stream),
            "per_channel": stream.channel_counts(),
            "duration_ps": stream.duration,
            **stream.metadata.get("counters", {}),
        }

    def correlate(
        self,
        tags_path: PathLike,
        out: PathLike,
        channel_a: int = 1,
        channel_b: int = 2,
        bin_width_ps: Optional[int] = None,
        window_ps: Optional[int] = None,
    ) -> G2Curve:
        started = self._start()
        defaults = get_default_correlation()
        bin_width_ps = bin_width_ps or defaults.bin_width_ps
        window_ps = window_ps or defaults.window_ps

        stream = self.tags.read(tags_path)
        with WorkerPool(self.threads) as pool:
            curve = correlate_stream(
                stream,
                channel_a,
                channel_b,
                bin_width_ps,
                window_ps,
                slices=self.threads,
                pool=pool,
            )
        self.curves.write_g2(curve, out)
        logger.info(f"Wrote {len(curve)} bins to {out}")

        self._write_manifest(
            "correlate",
            started,
            outputs=[out],
            inputs=[tags_path],
            config={
                "channel_a": channel_a,
                "channel_b": channel_b,
                "bin_width_ps": bin_width_ps,
                "window_ps": window_ps,
            },
            metadata={
                "duration_ps": stream.duration,
                "counts": stream.channel_counts(),
                "coincidences": int(curve.counts.sum()),
            },
        )
        return curve

    def fit(
        self,
        data_path: PathLike,
        model_name: str,
        out: PathLike,
        init_path: Optional[PathLike] = None,
    ) -> FitResult:
        started = self._start()
        try:
            strategy = FitModelFactory.get_strategy(model_name)
        except ValueError as e:
            raise ConfigError(str(e))

        columns = self.curves.columns(data_path)
        expected = DATA_COLUMNS[strategy.data_kind]
        if not set(expected) <= set(columns):
            raise ConfigError(
                f"model '{model_name}' needs columns {', '.join(expected)}; "
                f"{data_path} has {', '.join(columns)}"
            )

        if init_path is None:
            try:
                init = strategy.init_model()
            except ValueError:
                raise ConfigError(
                    f"model '{model_name}' needs an --init document"
                )
        else:
            init = self.documents.load(init_path, strategy.init_model)

        if strategy.data_kind == "g2":
            data = self.curves.read_g2(data_path)
        else:
            data = self.curves.read_tuning(data_path)

        result = strategy.fit(data, init)
        self.documents.save(result, out)
        logger.info(f"Wrote fit result to {out}")

        self._write_manifest(
            "fit",
            started,
            outputs=[out],
            inputs=[data_path] + ([init_path] if init_path else []),
            config={"model": model_name, "init": init.model_dump(mode="json")},
            metadata={"status": result.status.value},
        )
        return result

    def stark(
        self,
        params_path: PathLike,
        target_hz: float,
        bracket: Optional[Tuple[float, float]] = None,
    ) -> VoltageSolution:
        params = self.documents.load(params_path, StarkParams)
        return voltage_for_detuning(
            params.model, params.trap, target_hz, bracket
        )

    def predict(
        self,
        tpi_path: PathLike,
        out: PathLike,
        window_ps: int,
        bin_width_ps: int,
        jitter_ps: float = 0.0,
    ) -> Dict[str, np.ndarray]:
        started = self._start()
        cfg = self.documents.load(tpi_path, TpiConfig)

        half_bins = window_ps // bin_width_ps
        tau_ps = np.arange(-half_bins, half_bins + 1) * float(bin_width_ps)
        tau = tau_ps * 1e-12
        columns = {
            "tau_ps": tau_ps,
            "g2_tpi": eval_g2_tpi(cfg, tau),
            "g2_sd": eval_g2_sd(cfg, tau),
            "g2_detected": eval_g2_detected(
                cfg,
                tau,
                jitter_sigma=jitter_ps * 1e-12,
                bin_width=bin_width_ps * 1e-12,
            ),
        }
        self.curves.write_table(columns, out)
        logger.info(f"Wrote {tau.size}-point model curve to {out}")

        self._write_manifest(
            "predict",
            started,
            outputs=[out],
            inputs=[tpi_path],
            config={
                "window_ps": window_ps,
                "bin_width_ps": bin_width_ps,
                "jitter_ps": jitter_ps,
            },
            metadata={
                "filter_bandwidth_rad_s": temporal_filter_bandwidth(
                    bin_width_ps * 1e-12
                )
            },
        )
        return columns


def validation_messages(error: Any) -> List[str]:
    """`field.path: message` lines for a pydantic ValidationError."""
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"])
        lines.append(f"{location}: {item['msg']}" if location else item["msg"])
    return lines


def summarize_fit(result: FitResult) -> str:
    derived = result.derived
    if "v_hom" in derived:
        sigma = derived.get("v_hom_sigma")
        text = f"V_HOM(0) = {derived['v_hom']:.3f}"
        text += f" +- {sigma:.3f}" if sigma is not None else " (sigma n/a)"
        if derived.get("v_hom_bin_zero") is not None:
            text += f", bin-zero {derived['v_hom_bin_zero']:.3f}"
    elif "kink_voltage" in derived:
        kink = derived["kink_voltage"]
        text = (
            f"kink voltage = {kink:.3f} V"
            if kink is not None
            else "kink voltage undefined"
        )
    else:
        text = f"g2(0) = {derived.get('g2_zero', float('nan')):.3f}"
    return f"{result.model}: {text} [{result.status.value}]"
