import asyncio
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from core import BacksteppingToolkit, KernelCache
from core.database import cache_key
from features.kernels.kernels import KernelFamily, control_kernel


def test_cache_key_separates_inputs():
    base = cache_key(KernelFamily.CONTROL, 20, 10, 64, 1e-12, 200)
    assert base == cache_key("control", 20.0, 10.0, 64, 1e-12, 200)
    assert base != cache_key(KernelFamily.INVERSE, 20, 10, 64, 1e-12, 200)
    assert base != cache_key(KernelFamily.CONTROL, 10, 20, 64, 1e-12, 200)
    assert base != cache_key(KernelFamily.CONTROL, 20, 10, 64, 1e-10, 200)


def test_cache_round_trip(tmp_path):
    kf = control_kernel(20.0, 10.0, 16)
    key = cache_key(kf.family, 20.0, 10.0, 16, 1e-12, 200)

    async def scenario():
        cache = KernelCache(str(tmp_path / "db" / "kernels.db"))
        await cache.initialize()
        try:
            assert await cache.get_kernel(key) is None
            await cache.store_kernel(key, kf, 1e-12, 200)
            await cache.store_kernel(key, kf, 1e-12, 200)
            assert await cache.count() == 1
            loaded = await cache.get_kernel(key)
            await cache.clear()
            assert await cache.count() == 0
            return loaded
        finally:
            await cache.close()

    loaded = asyncio.run(scenario())
    assert loaded.family is KernelFamily.CONTROL
    assert (loaded.n, loaded.lambda1, loaded.lambda2) == (16, 20.0, 10.0)
    assert loaded.metadata["cached"] is True
    assert loaded.metadata["iterations"] == list(kf.metadata["iterations"])
    for name, component in kf.components().items():
        np.testing.assert_array_equal(loaded.components()[name], component)


def test_toolkit_serves_repeat_solves_from_cache(tmp_path):
    async def scenario():
        async with BacksteppingToolkit(log_dir=str(tmp_path / "logs"), cache_path=str(tmp_path / "k.db"),
                                       enable_cache=True) as toolkit:
            first = await toolkit.kernel(KernelFamily.INVERSE, 5.0, 2.0, 16)
            second = await toolkit.kernel(KernelFamily.INVERSE, 5.0, 2.0, 16)
            stored = await toolkit.cache.count()
        return first, second, stored

    first, second, stored = asyncio.run(scenario())
    assert stored == 1
    assert not first.metadata.get("cached", False)
    assert second.metadata["cached"] is True
    np.testing.assert_array_equal(first.Kuu, second.Kuu)


def test_concurrent_requests_share_one_solve(tmp_path):
    async def scenario():
        async with BacksteppingToolkit(log_dir=str(tmp_path / "logs"), enable_cache=False) as toolkit:
            return await asyncio.gather(*[toolkit.kernel(KernelFamily.CONTROL, 3.0, 1.0, 16) for _ in range(3)])

    fields = asyncio.run(scenario())
    assert fields[0] is fields[1] is fields[2]


def test_toolkit_registers_every_command(tmp_path):
    async def scenario():
        async with BacksteppingToolkit(log_dir=str(tmp_path / "logs"), enable_cache=False) as toolkit:
            return set(toolkit.commands), await toolkit.run_command("launch", None)

    commands, status = asyncio.run(scenario())
    assert commands == {"kernels", "simulate", "verify", "spectrum"}
    assert status == 2


@pytest.mark.parametrize("module", ["features.goursat.goursat", "features.kernels.kernels",
                                    "features.simulation.simulation", "features.analysis.analysis",
                                    "features.verification.verification", "utils.config",
                                    "utils.csv_io", "core.database", "core"])
def test_module_imports_in_fresh_interpreter(module):
    root = Path(__file__).resolve().parent.parent
    result = subprocess.run([sys.executable, "-c", f"import {module}"], cwd=root,
                            capture_output=True, text=True)
    assert result.returncode == 0, result.stderr
