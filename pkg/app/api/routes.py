"""API routes for the experiment service."""
import logging

from fastapi import APIRouter, HTTPException

from app.core.errors import BlowUpError, ConfigError, InvalidArgumentError
from app.core.schemas import RunRequest, ValidationResponse
from app.services.experiment_service import ExperimentService, parse_config
from app.utils.io_utils import to_jsonable

router = APIRouter(prefix="/api")
logger = logging.getLogger(__name__)

# Initialize service
experiment_service = ExperimentService()


def _config_error(e: ConfigError) -> HTTPException:
    return HTTPException(status_code=422, detail={"message": str(e), "key": e.key, "line": e.line})


@router.get("/health")
async def health_check():
    """Check if the API is healthy."""
    return {"status": "ok"}


@router.post("/experiments/validate", response_model=ValidationResponse)
async def validate_experiment(request: RunRequest):
    """
    Validate an experiment configuration.

    Args:
        request: Configuration and optional seed

    Returns:
        The configuration with resolved defaults and its content hash
    """
    try:
        config = parse_config(request.config)
        echo = experiment_service.echo(config, experiment_service.resolve_seed(request.seed, config))
    except ConfigError as e:
        raise _config_error(e)
    return ValidationResponse(valid=True, content_hash=echo["content_hash"], config=to_jsonable(echo))


@router.post("/experiments/run")
def run_experiment(request: RunRequest):
    """
    Run an experiment and return its report.

    Artifacts are written to the configured output directory as for the CLI.

    Args:
        request: Configuration and optional seed

    Returns:
        Experiment report; non-finite numbers are returned as null
    """
    try:
        config = parse_config(request.config)
        result = experiment_service.run_config(config, seed=request.seed)
        return to_jsonable(result.report.dict())
    except ConfigError as e:
        raise _config_error(e)
    except InvalidArgumentError as e:
        logger.error(f"Invalid experiment: {str(e)}")
        raise HTTPException(status_code=422, detail={"message": str(e)})
    except BlowUpError as e:
        logger.error(f"Numerical blow-up: {str(e)}")
        raise HTTPException(status_code=500, detail={"message": str(e), "step": e.step})
