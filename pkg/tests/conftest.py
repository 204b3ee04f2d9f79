import itertools
import shutil
import sys
import tempfile
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from listio_pfs.bench import launch_cluster

_names = itertools.count(1)


@pytest.fixture(scope="session")
def cluster():
    """One shared 8-daemon loopback cluster for the whole test session."""
    root = tempfile.mkdtemp(prefix="listio-pfs-test-")
    c = launch_cluster(servers=8, storage_root=root)
    yield c
    c.shutdown()
    shutil.rmtree(root, ignore_errors=True)


@pytest.fixture()
def unique_name():
    """Fresh file name per use (the manager namespace is append-only)."""
    def make(prefix="f"):
        return f"{prefix}-{next(_names)}"
    return make
