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

"""Configuration of the out-of-core array engine."""

import logging
import os

from pathlib import Path
from typing import Optional, Union

from prometheus_client import CollectorRegistry, Gauge

from .buffer_pool import ResourceBudget

_LOGGER = logging.getLogger(__name__)

DEFAULT_MEMORY_SCALARS = 1048576
DEFAULT_BLOCK_SCALARS = 1024
DEFAULT_STORE = "./riot-store"
DEFAULT_SEED = 42

IO_REPORT_FIELDS = ("blocks_read", "blocks_written", "elements_computed", "peak_pinned_blocks", "conversion_blocks")


def _env_flag(name: str) -> bool:
    """Read a 0/1 environment flag."""
    return bool(int(os.getenv(name, 0)))


class Configuration:
    """Configuration of the engine, CLI flags override environment variables."""

    def __init__(
        self,
        memory_scalars: Optional[int] = None,
        block_scalars: Optional[int] = None,
        store: Optional[Union[str, Path]] = None,
        seed: Optional[int] = None,
        optimize: Optional[bool] = None,
        pushgateway_endpoint: Optional[str] = None,
    ):
        """Initialize configuration."""
        self.memory_scalars = int(
            memory_scalars if memory_scalars is not None else os.getenv("RIOT_MEMORY_SCALARS", DEFAULT_MEMORY_SCALARS)
        )
        self.block_scalars = int(
            block_scalars if block_scalars is not None else os.getenv("RIOT_BLOCK_SCALARS", DEFAULT_BLOCK_SCALARS)
        )
        self.store = Path(store if store is not None else os.getenv("RIOT_STORE", DEFAULT_STORE))
        self.seed = int(seed if seed is not None else os.getenv("RIOT_SEED", DEFAULT_SEED))
        self.optimize = optimize if optimize is not None else not _env_flag("RIOT_NO_OPTIMIZE")
        self.debug = _env_flag("DEBUG_LEVEL")

        self.budget = ResourceBudget(memory_scalars=self.memory_scalars, block_scalars=self.block_scalars)
        self.store.mkdir(parents=True, exist_ok=True)

        # Prometheus
        self.pushgateway_endpoint = pushgateway_endpoint or os.getenv("PROMETHEUS_PUSHGATEWAY_URL")
        self.prometheus_registry = CollectorRegistry()

        self.riot_io = {
            field_name: Gauge(
                f"riot_io_{field_name}",
                f"Out-of-core engine {field_name.replace('_', ' ')} of the last run",
                ["script"],
                registry=self.prometheus_registry,
            )
            for field_name in IO_REPORT_FIELDS
        }

        _LOGGER.debug(
            f"Budget M={self.memory_scalars} B={self.block_scalars} ({self.budget.frames} frames), "
            f"store {self.store}, optimize={self.optimize}"
        )
