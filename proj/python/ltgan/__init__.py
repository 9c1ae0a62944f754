"""Latent-transformation GAN: training, evaluation and the serving API."""

import json

from ._ltgan import (
    CheckpointError,
    Config,
    ConfigKeyError,
    Model,
    Service,
    Trainer,
    TrainError,
)

__all__ = [
    "CheckpointError",
    "Config",
    "ConfigKeyError",
    "Model",
    "Service",
    "Trainer",
    "TrainError",
    "request",
]


def request(service, method, path, payload=None):
    """Call a service endpoint with a JSON payload; returns (status, decoded body)."""
    body = "" if payload is None else json.dumps(payload)
    status, text = service.handle(method, path, body)
    return status, json.loads(text)
