"""MVOCC MCP Server - Exposes multi-view one-class experiments via Model Context Protocol."""

import logging
import os
from typing import Annotated, Any, Dict, List, Optional

from mcp.server.fastmcp import FastMCP
from pydantic import Field

from .cli import configure_logging
from .config import ENV_OUTPUT_DIR, SWEEP_GRIDS, SWEEP_PARAMETERS, parse_config
from .evaluation import LATE_FUSION_STRATEGIES, METRICS
from .methods import ALIGNMENT_METHODS, FUSION_METHODS, METHOD_IDS, PER_VIEW_METHODS, PREDICTION_METHODS
from .runner import best_single_view, generate, run, sweep
from .synth import SynthSpec

logger = logging.getLogger(__name__)

# Initialize MCP server
mcp = FastMCP("Multi-view One-class Classification")


def _experiment(config: Dict[str, Any], output_dir: Optional[str], jobs: Optional[int]):
    return parse_config(config, flags={"output_dir": output_dir, "jobs": jobs})


# ============================================================================
# Catalogue
# ============================================================================


@mcp.tool()
def list_methods() -> Dict[str, Any]:
    """
    List the eleven baselines, late-fusion strategies, metrics and sweepable parameters.

    **Use this when:**
    - Choosing methods for an experiment config
    - Checking which hyperparameter applies to which method
    """
    return {
        "success": True,
        "message": f"{len(METHOD_IDS)} methods available",
        "data": {
            "methods": list(METHOD_IDS),
            "families": {
                "fusion": list(FUSION_METHODS),
                "alignment": list(ALIGNMENT_METHODS),
                "per_view": list(PER_VIEW_METHODS),
                "cross_view_prediction": list(PREDICTION_METHODS),
            },
            "late_fusion": list(LATE_FUSION_STRATEGIES),
            "metrics": list(METRICS),
            "sweeps": {
                name: {"methods": list(methods), "default_grid": SWEEP_GRIDS[name]}
                for name, (methods, _) in SWEEP_PARAMETERS.items()
            },
        },
    }


# ============================================================================
# Experiments
# ============================================================================


@mcp.tool()
def run_experiment(
    config: Annotated[Dict[str, Any], Field(description="Experiment config (same keys as the JSON config file)")],
    output_dir: Annotated[Optional[str], Field(description="Directory for report.json/summary.csv")] = None,
    jobs: Annotated[Optional[int], Field(description="Worker processes")] = None,
) -> Dict[str, Any]:
    """
    Run an experiment and return per-method mean/std/p-values and best performers.

    Reports are written to ``output_dir`` (or MVOCC_OUTPUT_DIR, or ./results).
    """
    try:
        experiment = _experiment(config, output_dir, jobs)
        report = run(experiment)
        return {
            "success": True,
            "message": f"Finished {len(report['records'])} jobs; reports in {experiment.output_dir}",
            "data": {
                "config_hash": report["config_hash"],
                "summary": report["summary"],
                "best": report["best"],
            },
        }
    except Exception as e:
        logger.error(f"Experiment failed: {e}")
        return {"success": False, "error": str(e)}


@mcp.tool()
def sweep_hyperparameter(
    config: Annotated[Dict[str, Any], Field(description="Experiment config")],
    parameter: Annotated[str, Field(description="R (TF rank), m (SIM margin) or alpha (alignment weight)")],
    grid: Annotated[Optional[List[float]], Field(description="Values to try (default grid if omitted)")] = None,
    output_dir: Annotated[Optional[str], Field(description="Directory for sweep.json/sweep.csv")] = None,
) -> Dict[str, Any]:
    """
    Sweep one hyperparameter and return AUROC for every grid value.

    The parameter must apply to every configured method (R->TF, m->SIM, alpha->DIS/SIM/DCCA).
    """
    try:
        experiment = _experiment(config, output_dir, None)
        values = grid if grid is not None else list(SWEEP_GRIDS.get(parameter, []))
        result = sweep(experiment, parameter, values)
        return {
            "success": True,
            "message": f"Swept {parameter} over {len(result['grid'])} values",
            "data": result,
        }
    except Exception as e:
        logger.error(f"Sweep failed: {e}")
        return {"success": False, "error": str(e)}


@mcp.tool()
def best_single_view_reference(
    config: Annotated[Dict[str, Any], Field(description="Experiment config; methods are replaced by DAE")],
    output_dir: Annotated[Optional[str], Field(description="Directory for best_single_view.json")] = None,
) -> Dict[str, Any]:
    """
    Per-view DAE AUROCs and the best view.

    The best view is picked on test data: treat it as a hindsight reference, not a method.
    """
    try:
        result = best_single_view(_experiment(config, output_dir, None))
        result.pop("records", None)
        return {"success": True, "message": f"Computed {result['reference']}", "data": result}
    except Exception as e:
        logger.error(f"Best single view failed: {e}")
        return {"success": False, "error": str(e)}


@mcp.tool()
def generate_synthetic_dataset(
    spec: Annotated[Dict[str, Any], Field(description="Synthetic spec: n_views, dims, shift, noise, ...")],
    output_dir: Annotated[str, Field(description="Dataset directory to write")],
    format: Annotated[str, Field(description="View file format: csv or binary")] = "csv",
) -> Dict[str, Any]:
    """
    Generate a synthetic multi-view dataset and report its nearest-mean oracle AUROC.
    """
    try:
        if format not in ("csv", "binary"):
            return {"success": False, "error": f"Invalid format '{format}', expected csv or binary"}
        result = generate(SynthSpec.model_validate(spec), output_dir, format)
        return {
            "success": True,
            "message": f"Wrote {result['manifest']} (oracle AUROC {result['oracle_auroc']:.4f})",
            "data": result,
        }
    except Exception as e:
        logger.error(f"Synthetic generation failed: {e}")
        return {"success": False, "error": str(e)}


def main():
    """Run the MVOCC MCP server."""
    configure_logging()
    logger.info("Starting MVOCC MCP Server...")
    logger.info(f"Output directory: {os.getenv(ENV_OUTPUT_DIR, 'results')}")
    mcp.run()


if __name__ == "__main__":
    main()
