from __future__ import annotations  # to support the -> List[Downloader] return type
from typing import List, Union
import pathlib
import tarfile
import urllib.parse
import logging
import re

from bs4 import BeautifulSoup
import requests
from tqdm import tqdm

import semsec

logger = logging.getLogger(__name__)

CIFAR_URL = "https://www.cs.toronto.edu/~kriz/"
CIFAR_ARCHIVE = "cifar-10-binary*"
CIFAR_DIR = "cifar-10-batches-bin"


class Downloader:
    """
    Lists the files behind a URL and downloads them.

    Parameters
    ----------
    url: str
        The dataset URL.
    download_dir: str or pathlib.Path
        The download directory. Must either specify here, or when you call
        Downloader.download().

    Example
    -------
    | # Find the CIFAR-10 binary archive and download it.
    |
    | import semsec
    |
    | d = semsec.Downloader('https://www.cs.toronto.edu/~kriz/', download_dir=semsec.config['data_dir'])
    | archives = d.ls(match='cifar-10-binary*')
    | print(f"The first file's name is: {archives[0].name()} at url {archives[0].url}")
    | path = archives[0].download(stream=True)
    | print(f'The file was downloaded to {path}')
    """
    def __init__(self, url: str, download_dir=None) -> None:
        self.url = url
        self.download_dir = download_dir
        return

    def ls(self, match: str = '*') -> List[Downloader]:
        """
        List files and folders in self.url.

        Parameters
        ----------
        match: str
            An optional string pattern to match.

        Return
        ------
        list
            A Downloader for every matching URL.
        """
        r = requests.get(self.url)
        if r.status_code // 100 in [4, 5]:
            raise ConnectionError(f'{self.url} returned a {r.status_code} error response.')

        matched_hrefs = self._search_hrefs(r.content, match=match)
        cls = type(self)
        return [
            cls(urllib.parse.urljoin(self.url, href, allow_fragments=True), download_dir=self.download_dir)
            for href in matched_hrefs
        ]

    def download(self, download_dir=None, overwrite: bool = False, stream: bool = False) -> pathlib.Path:
        """
        Downloads file from self.url to the download_dir directory.

        Parameters
        ----------
        download_dir: str or pathlib.Path
            The parent directory where to save the data to. Set it either
            here or when initializing the class.
        overwrite: bool
            Will overwrite an existing file.
        stream: bool
            Download the data in one chunk if False, or in 5 MB chunks with a
            progress bar if True.

        Returns
        -------
        pathlib.Path
            The full path to the file.
        """
        if download_dir is None and self.download_dir is None:
            raise ValueError('download_dir kwarg needs to be set either '
                             'in Downloader() or Downloader.download.')
        if download_dir is not None:
            self.download_dir = download_dir

        self.download_dir = pathlib.Path(self.download_dir)
        self.download_dir.mkdir(parents=True, exist_ok=True)
        download_path = self.download_dir / self.name()

        if download_path.exists() and not overwrite:
            logger.info(f'{download_path} already exists, skipping the download.')
            return download_path

        r = requests.get(self.url, stream=stream)
        if r.status_code // 100 in [4, 5]:
            raise ConnectionError(f'{self.url} returned a {r.status_code} error response.')
        if stream:
            file_size = int(r.headers.get('content-length', 0)) or None
            megabyte = 1024 * 1024
            with open(download_path, 'wb') as f, tqdm(
                total=file_size, unit='B', unit_scale=True, desc=f'Downloading {self.name()}'
            ) as bar:
                for data in r.iter_content(chunk_size=5 * megabyte):
                    f.write(data)
                    bar.update(len(data))
        else:
            with open(download_path, 'wb') as f:
                f.write(r.content)
        logger.info(f'Downloaded {self.name()} to {download_path}.')
        return download_path

    def name(self) -> str:
        """
        Get the url filename
        """
        return pathlib.Path(urllib.parse.urlparse(self.url).path).name

    def _search_hrefs(self, content: bytes, match: str = '*') -> List[str]:
        """
        Find all hyper references in an HTML page matching the wildcard
        pattern match.

        Raises
        ------
        FileNotFoundError
            If no hyper references were found.
        """
        soup = BeautifulSoup(content, 'html.parser')
        pattern = re.compile(match.replace('.', r'\.').replace('*', '.*'))
        # Sorting links such as "?C=N;O=D" are not files.
        matched_hrefs = [a['href'] for a in soup.find_all('a', href=pattern) if '?' not in a['href']]
        if len(matched_hrefs) == 0:
            raise FileNotFoundError(
                f'The url {self.url} does not contain any hyper '
                f'references containing the match kwarg="{match}".'
            )
        return matched_hrefs

    def __repr__(self) -> str:
        params = f'{self.url}, download_dir={self.download_dir},'
        return f'{self.__class__.__qualname__}(' + params + ')'

    def __str__(self) -> str:
        return (f'{self.__class__.__qualname__} with url={self.url} and '
                f'download_dir={self.download_dir}')


def fetch_cifar10(data_dir: Union[str, pathlib.Path] = None, url: str = CIFAR_URL,
                  overwrite: bool = False) -> pathlib.Path:
    """
    Download the CIFAR-10 binary archive into data_dir (semsec.config['data_dir']
    by default) and extract it.

    Returns
    -------
    pathlib.Path
        The extracted cifar-10-batches-bin directory, which is what a
        ``[data] source`` of ``cifar-10-batches-bin`` resolves to.
    """
    data_dir = pathlib.Path(semsec.config['data_dir'] if data_dir is None else data_dir).expanduser()
    target = data_dir / CIFAR_DIR
    if target.exists() and not overwrite:
        logger.info(f'{target} already exists.')
        return target
    archive = Downloader(url, download_dir=data_dir).ls(match=CIFAR_ARCHIVE)[0].download(
        overwrite=overwrite, stream=True
    )
    with tarfile.open(archive, 'r:gz') as tar:
        members = [m for m in tar.getmembers() if m.name.startswith(CIFAR_DIR) and not m.issym() and not m.islnk()]
        tar.extractall(data_dir, members=members)
    logger.info(f'Extracted {archive.name} to {target}.')
    return target
