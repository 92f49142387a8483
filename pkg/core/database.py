"""
Backstepping Toolkit - Kernel Cache Database
Stores solved kernel fields so repeated runs skip the Goursat solves.
"""

import io
import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import aiosqlite
import numpy as np

if TYPE_CHECKING:
    from features.kernels.kernels import KernelFamily, KernelField

logger = logging.getLogger('Backstep.Cache')


def cache_key(family: "KernelFamily", lambda1: float, lambda2: float, n: int,
              tol: float, max_iter: int) -> str:
    """Identifier of one solve; floats use repr so distinct inputs never collide."""
    from features.kernels.kernels import KernelFamily

    return f"{KernelFamily(family).value}:{float(lambda1)!r}:{float(lambda2)!r}:{n}:{float(tol)!r}:{max_iter}"


class KernelCache:
    """aiosqlite-backed cache of kernel fields keyed by their solve inputs."""

    def __init__(self, db_path: str = "database/kernels.db"):
        self.db_path = db_path
        self.connection: Optional[aiosqlite.Connection] = None

    async def initialize(self):
        """Open the database and create the cache table."""
        Path(self.db_path).parent.mkdir(parents=True, exist_ok=True)
        self.connection = await aiosqlite.connect(self.db_path)
        await self._create_tables()
        logger.info(f"Kernel cache initialized at {self.db_path}")

    async def _create_tables(self):
        if not self.connection:
            return

        await self.connection.execute("""
            CREATE TABLE IF NOT EXISTS kernel_cache (
                id TEXT PRIMARY KEY,
                family TEXT NOT NULL,
                lambda1 REAL NOT NULL,
                lambda2 REAL NOT NULL,
                n INTEGER NOT NULL,
                tol REAL NOT NULL,
                max_iter INTEGER NOT NULL,
                payload BLOB NOT NULL,
                metadata TEXT,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            )
        """)
        await self.connection.commit()

    async def store_kernel(self, key: str, kf: "KernelField", tol: float, max_iter: int):
        """Insert or replace one solved field."""
        if not self.connection:
            return
        buffer = io.BytesIO()
        np.savez(buffer, **kf.components())
        metadata = {k: v for k, v in kf.metadata.items() if k != "cached"}

        await self.connection.execute("""
            INSERT OR REPLACE INTO kernel_cache
            (id, family, lambda1, lambda2, n, tol, max_iter, payload, metadata, created_at)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, CURRENT_TIMESTAMP)
        """, (
            key,
            kf.family.value,
            kf.lambda1,
            kf.lambda2,
            kf.n,
            tol,
            max_iter,
            buffer.getvalue(),
            json.dumps(metadata),
        ))
        await self.connection.commit()
        logger.debug(f"Cached kernel {key}")

    async def get_kernel(self, key: str) -> Optional["KernelField"]:
        """Cached field for `key`, or None on a miss."""
        from features.kernels.kernels import COMPONENTS, KernelFamily, KernelField

        if not self.connection:
            return None
        cursor = await self.connection.execute(
            "SELECT family, lambda1, lambda2, n, payload, metadata FROM kernel_cache WHERE id = ?",
            (key,))
        row = await cursor.fetchone()
        if not row:
            return None

        family, lambda1, lambda2, n, payload, metadata = row
        try:
            with np.load(io.BytesIO(payload)) as arrays:
                comps = {name: arrays[name] for name in COMPONENTS}
            meta = json.loads(metadata) if metadata else {}
        except Exception as e:
            logger.warning(f"Discarding unreadable cache entry {key}: {e}")
            return None
        meta["cached"] = True
        return KernelField(n=n, family=KernelFamily(family), lambda1=lambda1,
                           lambda2=lambda2, metadata=meta, **comps)

    async def count(self) -> int:
        if not self.connection:
            return 0
        cursor = await self.connection.execute("SELECT COUNT(*) FROM kernel_cache")
        result = await cursor.fetchone()
        return result[0] if result else 0

    async def clear(self):
        if not self.connection:
            return
        await self.connection.execute("DELETE FROM kernel_cache")
        await self.connection.commit()
        logger.info("Kernel cache cleared")

    async def close(self):
        """Close database connection."""
        if self.connection:
            await self.connection.close()
            self.connection = None
