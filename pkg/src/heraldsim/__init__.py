"""Event-level simulator and time-tag analysis for a heralded single-photon source
with an on-chip beamsplitter."""

__version__ = "0.1.0"

from .coincidence import (  # noqa: E402
    CoincidenceCounts,
    CorrelationReport,
    Estimate,
    analyze,
    count_coincidences,
    g2_auto_estimate,
    g2_cross_estimate,
    g2_heralded_estimate,
)
from .montecarlo import DetectorModel, ExperimentConfig, simulate, simulate_run, simulation_stream  # noqa: E402
from .squeezed_state import SqueezedSourceModel, analytic_prediction, g2_heralded_from_unheralded  # noqa: E402
from .tagstream import TagStream, TimeTag, read_tagstream, write_tagstream  # noqa: E402

__all__ = [
    "CoincidenceCounts",
    "CorrelationReport",
    "DetectorModel",
    "Estimate",
    "ExperimentConfig",
    "SqueezedSourceModel",
    "TagStream",
    "TimeTag",
    "analytic_prediction",
    "analyze",
    "count_coincidences",
    "g2_auto_estimate",
    "g2_cross_estimate",
    "g2_heralded_estimate",
    "g2_heralded_from_unheralded",
    "read_tagstream",
    "simulate",
    "simulate_run",
    "simulation_stream",
    "write_tagstream",
]
