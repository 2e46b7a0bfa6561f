#!/usr/bin/env python3
# ooc-engine
# Copyright(C) 2020 Red Hat, Inc.
#
# This program is free software: you can redistribute it and / or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program. If not, see <http://www.gnu.org/licenses/>.

"""Collection of methods used by the command line front end."""

import datetime
import json
import logging

from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Union

import numpy as np

from prometheus_client import push_to_gateway

from .configuration import Configuration

_LOGGER = logging.getLogger(__name__)

LAST_RUN_FILE = "last-run.json"


def format_value(value: Union[np.ndarray, float]) -> str:
    """Format a printed value, one matrix row per line."""
    array = np.atleast_2d(np.asarray(value, dtype=np.float64))
    return "\n".join(" ".join(f"{element:.15g}" for element in row) for row in array)


def store_last_run(store: Union[str, Path], io_report: Dict[str, int], script: str) -> Path:
    """Persist counters of the last run so that a later process can show them."""
    path = Path(store) / LAST_RUN_FILE
    document = {
        "script": script,
        "datetime": datetime.datetime.utcnow().strftime("%Y-%m-%dT%H:%M:%S"),
        "io_report": io_report,
    }
    path.write_text(json.dumps(document, indent=2))
    _LOGGER.debug(f"Stored counters of the last run at {path}")
    return path


def load_last_run(store: Union[str, Path]) -> Optional[Dict[str, Any]]:
    """Counters of the last run, None if nothing ran against the store yet."""
    path = Path(store) / LAST_RUN_FILE
    if not path.exists():
        return None

    return json.loads(path.read_text())


def push_io_report(io_report: Dict[str, int], configuration: Configuration, script: str) -> None:
    """Set the I/O gauges and push them to Pushgateway when one is configured."""
    for metric_name, value in io_report.items():
        if metric_name in configuration.riot_io:
            configuration.riot_io[metric_name].labels(script=script).set(value)
            _LOGGER.debug("(script=%r, metric_name=%r)=%r", script, metric_name, value)

    if not configuration.pushgateway_endpoint:
        return

    try:
        push_to_gateway(configuration.pushgateway_endpoint, job="riot", registry=configuration.prometheus_registry)
        _LOGGER.info("Pushed I/O report to Prometheus Pushgateway.")
    except Exception as e_pushgateway:
        _LOGGER.exception(f"Could not push metrics to Pushgateway...{e_pushgateway}")


def uniform_rows(rows: int, cols: int, seed: int, chunk_rows: int = 4096) -> Iterator[np.ndarray]:
    """Seeded uniform [0, 1) values in row-major order, produced in bands of rows."""
    rng = np.random.default_rng(seed)
    for row_start in range(0, rows, chunk_rows):
        yield rng.random((min(chunk_rows, rows - row_start), cols))
