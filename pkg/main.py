"""HTTP entry point for the SPDE uniqueness harness."""
import logging
import os
import traceback

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from app import __version__
from app.api.routes import router
from app.core.config import settings
from app.core.errors import SimulationError

logging.basicConfig(
    level=logging.DEBUG if settings.debug else settings.log_level,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger("spde-uniqueness")

app = FastAPI(
    title="SPDE Uniqueness Harness API",
    description="Simulate stochastic Fokker-Planck and porous-media equations and verify their energy estimates",
    version=__version__,
)

if settings.allow_origins:
    app.add_middleware(
        CORSMiddleware,
        allow_origins=settings.allow_origins,
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )

app.include_router(router)


@app.exception_handler(SimulationError)
async def simulation_error_handler(request: Request, exc: SimulationError):
    # exit code 2 is a caller error, anything else failed while simulating
    status_code = 422 if exc.exit_code == 2 else 500
    logger.error(f"{type(exc).__name__} on {request.url.path}: {str(exc)}")
    return JSONResponse(status_code=status_code, content={"error": type(exc).__name__, "detail": str(exc)})


@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    logger.error(f"Unhandled exception: {str(exc)}")
    logger.error(traceback.format_exc())
    return JSONResponse(status_code=500, content={"error": "Internal server error", "detail": str(exc)})


@app.get("/health")
async def health_check():
    """Liveness check used by docker-compose."""
    return {"status": "ok", "version": __version__}


@app.on_event("startup")
async def startup_event():
    logger.info(f"Starting SPDE Uniqueness Harness API {__version__} on {settings.api_host}:{settings.api_port}")
    logger.info(
        f"Runs go to {settings.output_dir} (threads={settings.threads}, figures={settings.figures}, "
        f"default seed={settings.default_seed})"
    )
    os.makedirs(settings.output_dir, exist_ok=True)


@app.on_event("shutdown")
async def shutdown_event():
    logger.info("Shutting down SPDE Uniqueness Harness API")


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(
        "main:app",
        host=settings.api_host,
        port=settings.api_port,
        workers=settings.api_workers,
        reload=settings.debug,
    )
