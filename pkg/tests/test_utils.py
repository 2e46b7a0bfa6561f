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


"""Tests of configuration and command line helpers."""

import numpy as np
import pytest

from thoth.ooc_engine import utils
from thoth.ooc_engine.configuration import Configuration
from thoth.ooc_engine.exceptions import BudgetError
from thoth.ooc_engine.utils import format_value
from thoth.ooc_engine.utils import load_last_run
from thoth.ooc_engine.utils import push_io_report
from thoth.ooc_engine.utils import store_last_run
from thoth.ooc_engine.utils import uniform_rows

IO_REPORT = {
    "blocks_read": 12,
    "blocks_written": 3,
    "elements_computed": 130,
    "peak_pinned_blocks": 3,
    "conversion_blocks": 0,
}


@pytest.fixture
def environment(monkeypatch):
    """Environment without engine variables."""
    for name in (
        "RIOT_MEMORY_SCALARS",
        "RIOT_BLOCK_SCALARS",
        "RIOT_STORE",
        "RIOT_SEED",
        "RIOT_NO_OPTIMIZE",
        "PROMETHEUS_PUSHGATEWAY_URL",
    ):
        monkeypatch.delenv(name, raising=False)

    return monkeypatch


class TestConfiguration:
    """Flags, environment and defaults."""

    def test_defaults(self, environment, tmp_path):
        """One mebi scalar of memory in blocks of 1024."""
        environment.chdir(tmp_path)
        configuration = Configuration()

        assert (configuration.memory_scalars, configuration.block_scalars) == (1048576, 1024)
        assert configuration.budget.frames == 1024
        assert configuration.seed == 42
        assert configuration.optimize is True
        assert configuration.pushgateway_endpoint is None
        assert (tmp_path / "riot-store").is_dir()

    def test_environment(self, environment, tmp_path):
        """Environment variables replace the defaults."""
        environment.setenv("RIOT_MEMORY_SCALARS", "4096")
        environment.setenv("RIOT_BLOCK_SCALARS", "256")
        environment.setenv("RIOT_STORE", str(tmp_path / "env-store"))
        environment.setenv("RIOT_NO_OPTIMIZE", "1")

        configuration = Configuration()

        assert configuration.budget.frames == 16
        assert configuration.store == tmp_path / "env-store"
        assert configuration.optimize is False

    def test_flags_win(self, environment, tmp_path):
        """Explicit values override the environment."""
        environment.setenv("RIOT_BLOCK_SCALARS", "256")
        environment.setenv("RIOT_SEED", "7")

        configuration = Configuration(block_scalars=64, seed=3, store=tmp_path, memory_scalars=640)

        assert configuration.block_scalars == 64
        assert configuration.seed == 3

    def test_invalid_budget(self, environment, tmp_path):
        """Budgets below three blocks are rejected."""
        with pytest.raises(BudgetError):
            Configuration(memory_scalars=128, block_scalars=64, store=tmp_path)


class TestUtils:
    """Helpers of the command line."""

    def test_format_value(self):
        """Shortest exact form, one row per line."""
        assert format_value(2.0) == "2"
        assert format_value(np.array([[0.1], [100.0]])) == "0.1\n100"
        assert format_value(np.array([[1.0, 2.5], [3.0, 4.0]])) == "1 2.5\n3 4"

    def test_last_run(self, tmp_path):
        """Counters survive between processes through the store."""
        assert load_last_run(tmp_path) is None

        store_last_run(tmp_path, IO_REPORT, "clamp.r")
        last_run = load_last_run(tmp_path)

        assert last_run["script"] == "clamp.r"
        assert last_run["io_report"] == IO_REPORT
        assert "datetime" in last_run

    def test_gauges_without_gateway(self, environment, tmp_path):
        """Gauges are set even when nothing is pushed."""
        configuration = Configuration(memory_scalars=640, block_scalars=64, store=tmp_path)

        push_io_report(IO_REPORT, configuration, "clamp.r")

        value = configuration.prometheus_registry.get_sample_value("riot_io_blocks_read", {"script": "clamp.r"})
        assert value == 12.0

    def test_push(self, environment, tmp_path, monkeypatch):
        """Reports are pushed to a configured gateway, failures are only logged."""
        pushed = []
        monkeypatch.setattr(utils, "push_to_gateway", lambda endpoint, job, registry: pushed.append((endpoint, job)))
        configuration = Configuration(
            memory_scalars=640, block_scalars=64, store=tmp_path, pushgateway_endpoint="localhost:9091"
        )

        push_io_report(IO_REPORT, configuration, "clamp.r")
        assert pushed == [("localhost:9091", "riot")]

        def _unreachable(endpoint, job, registry):
            raise OSError("connection refused")

        monkeypatch.setattr(utils, "push_to_gateway", _unreachable)
        push_io_report(IO_REPORT, configuration, "clamp.r")

    def test_uniform_rows(self):
        """Bands of rows concatenate to one seeded draw."""
        bands = list(uniform_rows(10, 3, seed=4, chunk_rows=4))

        assert [band.shape for band in bands] == [(4, 3), (4, 3), (2, 3)]
        np.testing.assert_array_equal(np.vstack(bands), np.random.default_rng(4).random((10, 3)))
