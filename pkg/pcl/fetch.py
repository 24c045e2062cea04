"""
Dataset download for Pairwise Continual.

Downloads the gzip-compressed IDX files of MNIST or Fashion-MNIST,
decompresses them into ``<data_dir>/<dataset>/`` and checks their sizes.
Files that are already present with the right size are left alone, so
the engine runs fully offline once the data is in place.
"""

from __future__ import annotations

import gzip
import zlib
from dataclasses import dataclass
from pathlib import Path
from urllib.error import HTTPError, URLError
from urllib.request import Request, urlopen

from . import __version__
from .data import IDX_FILES, dataset_dir
from .logger import get_logger


MIRRORS = {
    "mnist": "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "fashion_mnist": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
}

# Decompressed sizes; identical for both datasets.
EXPECTED_SIZES = {
    "train-images-idx3-ubyte": 47_040_016,
    "train-labels-idx1-ubyte": 60_008,
    "t10k-images-idx3-ubyte": 7_840_016,
    "t10k-labels-idx1-ubyte": 10_008,
}

# Request timeout in seconds
REQUEST_TIMEOUT = 60


class FetchError(Exception):
    """Raised when a dataset file cannot be downloaded or fails verification."""
    pass


@dataclass
class FetchResult:
    """Outcome for one file.

    Attributes:
        name: IDX file name.
        path: Where the decompressed file lives.
        downloaded: False if a valid copy was already present.
        size: Size in bytes of the decompressed file.
    """
    name: str
    path: Path
    downloaded: bool
    size: int


def _download(url: str) -> bytes:
    request = Request(url, headers={"User-Agent": f"pairwise-continual/{__version__}"})
    try:
        with urlopen(request, timeout=REQUEST_TIMEOUT) as response:
            return response.read()
    except HTTPError as e:
        raise FetchError(f"{url}: HTTP {e.code} {e.reason}")
    except URLError as e:
        raise FetchError(f"{url}: network error: {e.reason}")
    except TimeoutError:
        raise FetchError(f"{url}: request timed out")


def _is_valid(path: Path, expected: int) -> bool:
    return path.exists() and path.stat().st_size == expected


def fetch_datasets(
    data_dir: Path | str, dataset: str, mirror_url: str | None = None
) -> list[FetchResult]:
    """Download the four IDX files of ``dataset`` into ``data_dir``.

    Missing directories are created. A file whose size is wrong (for
    example a partial earlier download) is fetched again.

    Raises:
        FetchError: On a download failure, corrupt gzip data or a size
            mismatch after decompression.
    """
    logger = get_logger()
    target = dataset_dir(data_dir, dataset).resolve()
    target.mkdir(parents=True, exist_ok=True)

    base = mirror_url or MIRRORS[dataset]
    if not base.endswith("/"):
        base += "/"

    results: list[FetchResult] = []
    for names in IDX_FILES.values():
        for name in names:
            path = target / name
            expected = EXPECTED_SIZES[name]
            if _is_valid(path, expected):
                logger.debug(f"{path} already present")
                results.append(FetchResult(name, path, downloaded=False, size=expected))
                continue

            url = f"{base}{name}.gz"
            logger.info(f"Downloading {url}")
            try:
                payload = gzip.decompress(_download(url))
            except (OSError, EOFError, zlib.error) as e:
                raise FetchError(f"{url}: corrupt gzip data ({e})")
            if len(payload) != expected:
                raise FetchError(f"{url}: {len(payload)} bytes after decompression, expected {expected}")

            tmp = path.with_suffix(".part")
            tmp.write_bytes(payload)
            tmp.replace(path)
            results.append(FetchResult(name, path, downloaded=True, size=expected))

    fetched = sum(r.downloaded for r in results)
    logger.info(f"{dataset}: {fetched} file(s) downloaded, {len(results) - fetched} already present")
    return results
