"""Client for external tile classifiers served over HTTP.

Keeps a slot open for heavyweight CNN models: tiles go out as base64 PNGs,
probability vectors come back and are validated before use.
"""

from __future__ import annotations

import base64
import logging

import numpy as np
import requests

log = logging.getLogger(__name__)

PREDICT_ROUTE = "/v1/predict"
NORMALIZATION_TOLERANCE = 1e-6


class RemoteError(Exception):
    """Transport failure or a response that violates the wire schema."""


def remote_predict(
    endpoint: str,
    model: str,
    level: int,
    tile_size: int,
    tiles: list[tuple[str, bytes]],
    timeout: float = 30.0,
) -> tuple[tuple[str, ...], dict[str, np.ndarray]]:
    """POST one batch of tiles, returning (class names, id -> probabilities).

    Probability vectors off unit sum by more than the tolerance are
    renormalized with a warning; wrong arity or negative entries are errors.
    """
    request = {
        "model": model,
        "tile_size": tile_size,
        "level": level,
        "tiles": [
            {"id": tile_id, "png_base64": base64.b64encode(png).decode("ascii")}
            for tile_id, png in tiles
        ],
    }
    url = endpoint.rstrip("/") + PREDICT_ROUTE
    try:
        response = requests.post(url, json=request, timeout=timeout)
    except requests.RequestException as exc:
        raise RemoteError(f"transport failure calling {url}: {exc}") from exc
    if response.status_code != 200:
        raise RemoteError(f"{url} returned status {response.status_code}")
    try:
        doc = response.json()
        classes = tuple(str(c) for c in doc["classes"])
        predictions = doc["predictions"]
    except (ValueError, KeyError, TypeError) as exc:
        raise RemoteError(f"malformed response from {url}: {exc}") from exc
    if not classes:
        raise RemoteError(f"{url}: empty class list")

    out: dict[str, np.ndarray] = {}
    for entry in predictions:
        try:
            tile_id = str(entry["id"])
            probs = np.asarray([float(p) for p in entry["probs"]], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise RemoteError(f"malformed prediction entry: {exc}") from exc
        if probs.shape[0] != len(classes):
            raise RemoteError(
                f"tile {tile_id}: got {probs.shape[0]} probabilities for {len(classes)} classes"
            )
        if (probs < 0).any() or not np.all(np.isfinite(probs)):
            raise RemoteError(f"tile {tile_id}: invalid probability vector")
        total = float(probs.sum())
        if total <= 0:
            raise RemoteError(f"tile {tile_id}: probabilities sum to {total}")
        if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
            log.warning("tile %s: probabilities sum to %.6f, renormalizing", tile_id, total)
            probs = probs / total
        out[tile_id] = probs

    missing = {tile_id for tile_id, _ in tiles} - set(out)
    if missing:
        raise RemoteError(f"response missing predictions for {sorted(missing)[:5]}")
    return classes, out
