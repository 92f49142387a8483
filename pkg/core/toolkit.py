"""
Backstepping Toolkit - Core Toolkit Class
Sets up logging and the kernel cache, loads feature modules and dispatches
command-line commands to them.
"""

import asyncio
import importlib
import logging
import os
from pathlib import Path
from typing import TYPE_CHECKING, Awaitable, Callable, Dict, Optional, Tuple

from core.database import KernelCache, cache_key
from core.errors import ConfigError, ToolkitError

if TYPE_CHECKING:
    from features.kernels.kernels import KernelFamily, KernelField

CommandHandler = Callable[[object], Awaitable[int]]

FEATURES = [
    'features.goursat.goursat',
    'features.kernels.kernels',
    'features.simulation.simulation',
    'features.analysis.analysis',
    'features.verification.verification',
]


class BacksteppingToolkit:
    """Backstepping kernel and observer toolkit."""

    def __init__(self, log_dir: Optional[str] = None, cache_path: Optional[str] = None,
                 enable_cache: Optional[bool] = None):
        log_dir = Path(log_dir or os.getenv('BACKSTEP_LOG_DIR', 'logs'))
        log_dir.mkdir(parents=True, exist_ok=True)

        logging.basicConfig(
            level=getattr(logging, os.getenv('BACKSTEP_LOG_LEVEL', 'INFO').upper(), logging.INFO),
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            handlers=[
                logging.FileHandler(log_dir / 'backstep.log', encoding='utf-8'),
                logging.StreamHandler()
            ]
        )
        self.logger = logging.getLogger('Backstep')

        if enable_cache is None:
            enable_cache = os.getenv('BACKSTEP_ENABLE_CACHE', 'true').lower() == 'true'
        self.cache: Optional[KernelCache] = None
        if enable_cache:
            self.cache = KernelCache(cache_path or os.getenv('BACKSTEP_CACHE_PATH', 'database/kernels.db'))

        self.commands: Dict[str, Tuple[CommandHandler, str]] = {}
        self._pending: Dict[str, asyncio.Future] = {}

    async def setup(self):
        """Open the cache and load every feature."""
        if self.cache:
            try:
                await self.cache.initialize()
            except Exception as e:
                self.logger.error(f"Kernel cache unavailable, solving without it: {e}")
                self.cache = None
        await self.load_features()
        self.logger.info("Toolkit setup completed")

    async def load_features(self):
        """Import feature modules and run their setup hooks."""
        for feature in FEATURES:
            try:
                module = importlib.import_module(feature)
                await module.setup(self)
                self.logger.debug(f"Loaded feature: {feature}")
            except Exception as e:
                self.logger.error(f"Failed to load {feature}: {e}")

    def add_command(self, name: str, handler: CommandHandler, description: str = ""):
        self.commands[name] = (handler, description)

    async def run_command(self, name: str, args) -> int:
        """Dispatch `name`; returns the process exit status."""
        if name not in self.commands:
            self.logger.error(f"Unknown command: {name}")
            return 2
        handler, _ = self.commands[name]
        try:
            return await handler(args)
        except ConfigError as e:
            self.logger.error(f"Configuration error: {e}")
            print(f"❌ Configuration error: {e}")
            return 2
        except ToolkitError as e:
            self.logger.error(f"{name} failed: {e}")
            print(f"❌ {name} failed: {e}")
            return 2

    async def kernel(self, family: "KernelFamily", lambda1: float, lambda2: float, n: int,
                     tol: float = 1e-12, max_iter: int = 200) -> "KernelField":
        """Solved kernel field, served from the cache when possible.

        Concurrent requests for the same key share one solve.
        """
        from features.kernels.kernels import KernelFamily

        family = KernelFamily(family)
        key = cache_key(family, lambda1, lambda2, n, tol, max_iter)
        if key in self._pending:
            return await self._pending[key]

        future = asyncio.get_running_loop().create_future()
        self._pending[key] = future
        try:
            kf = await self._fetch(key, family, lambda1, lambda2, n, tol, max_iter)
            future.set_result(kf)
            return kf
        except Exception as e:
            future.set_exception(e)
            future.exception()
            raise
        finally:
            del self._pending[key]

    async def _fetch(self, key, family, lambda1, lambda2, n, tol, max_iter) -> "KernelField":
        from features.kernels.kernels import FAMILY_SOLVERS

        if self.cache:
            try:
                cached = await self.cache.get_kernel(key)
                if cached is not None:
                    self.logger.info(f"Cache hit: {key}")
                    return cached
            except Exception as e:
                self.logger.warning(f"Cache lookup failed for {key}: {e}")

        kf = await asyncio.to_thread(FAMILY_SOLVERS[family], lambda1, lambda2, n, tol, max_iter)

        if self.cache:
            try:
                await self.cache.store_kernel(key, kf, tol, max_iter)
            except Exception as e:
                self.logger.warning(f"Could not cache {key}: {e}")
        return kf

    async def close(self):
        if self.cache:
            await self.cache.close()

    async def __aenter__(self):
        await self.setup()
        return self

    async def __aexit__(self, exc_type, exc, tb):
        await self.close()
