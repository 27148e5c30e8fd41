"""
Services package: solvers, the energy harness and experiment orchestration.

Modules are imported directly (``app.services.experiment_service``) so that
the utilities can depend on the noise model without an import cycle.
"""
