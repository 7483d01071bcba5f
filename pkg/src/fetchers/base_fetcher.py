from abc import ABC, abstractmethod
from contextlib import asynccontextmanager
from typing import List, Optional
import asyncio
import logging
import ssl

import aiohttp
import certifi

from ..errors import DataError

logger = logging.getLogger(__name__)


class BaseFetcher(ABC):
    """Downloads a public dataset and converts it to the package's CSV format"""

    name = ''

    def __init__(self, max_retries: int = 3, timeout: float = 60.0):
        self.headers = {
            'User-Agent': 'pairfair (+https://pypi.org/project/pairfair)',
            'Accept': 'text/plain,*/*;q=0.8',
        }
        self.max_retries = max_retries
        self.timeout = aiohttp.ClientTimeout(total=timeout)
        self.session: Optional[aiohttp.ClientSession] = None

    @asynccontextmanager
    async def get_session(self):
        """Context manager for handling session lifecycle"""
        if not self.session:
            self.session = aiohttp.ClientSession(timeout=self.timeout)
        try:
            yield self.session
        finally:
            if self.session:
                await self.session.close()
                self.session = None

    async def fetch_text(self, session: aiohttp.ClientSession, url: str) -> str:
        """GET `url` over verified TLS, retrying on 429/5xx and connection errors"""
        ssl_context = ssl.create_default_context(cafile=certifi.where())
        last_error = ''
        for attempt in range(self.max_retries):
            try:
                async with session.get(url, headers=self.headers, ssl=ssl_context) as response:
                    if response.status == 200:
                        return await response.text()
                    last_error = f"HTTP {response.status}"
                    if response.status == 429:
                        wait_time = float(response.headers.get('Retry-After', 2 ** attempt))
                    elif response.status >= 500:
                        wait_time = 2 ** attempt
                    else:
                        break
                    logger.warning("%s answered %s, retrying in %.0f s", url, response.status, wait_time)
                    await asyncio.sleep(wait_time)
            except (aiohttp.ClientError, asyncio.TimeoutError) as e:
                last_error = str(e) or e.__class__.__name__
                logger.warning("Connection error for %s: %s", url, last_error)
                await asyncio.sleep(2 ** attempt)
        raise DataError(f"could not download {url}: {last_error}")

    @abstractmethod
    async def fetch(self, out_dir: str) -> List[str]:
        """
        Download the dataset and write it under out_dir

        Args:
            out_dir (str): Directory receiving the CSV files

        Returns:
            List[str]: Paths of the written files
        """
        pass
