import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mrag import autodiff as ad

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

REFERENCE_SRC = Path(__file__).parent / "reference" / "jpeg_ref.c"


@pytest.fixture(autouse=True)
def _default_precision():
    ad.set_precision(32)
    yield
    ad.set_precision(32)


@pytest.fixture(scope="session")
def jpeg_ref(tmp_path_factory):
    """Path to the libjpeg-based reference tool, compiled once per session."""
    if shutil.which("gcc") is None:
        pytest.fail("gcc is required to build the libjpeg reference decoder")
    exe = tmp_path_factory.mktemp("ref") / "jpeg_ref"
    subprocess.run(["gcc", "-O2", "-o", str(exe), str(REFERENCE_SRC), "-ljpeg"], check=True)
    return exe


def run_ref(exe, mode, path):
    return subprocess.run([str(exe), mode, str(path)], capture_output=True, check=True).stdout


def ref_encode(exe, rgb, quality, restart=0):
    h, w = rgb.shape[:2]
    return subprocess.run([str(exe), "encode", str(w), str(h), str(quality), str(restart)],
                          input=np.ascontiguousarray(rgb, dtype=np.uint8).tobytes(),
                          capture_output=True, check=True).stdout


@pytest.fixture(scope="session")
def photos():
    from mrag.data import source_images

    return source_images()


@pytest.fixture(scope="session")
def reference_files(tmp_path_factory, photos, jpeg_ref):
    """Baseline 4:4:4 files written by libjpeg: Pillow with default and
    optimized Huffman tables at several qualities, plus restart markers."""
    from PIL import Image

    root = tmp_path_factory.mktemp("jpegs")
    files = []
    for i, (q, optimize) in enumerate([(75, False), (90, True), (50, False), (30, True), (95, False)]):
        path = root / f"pil{i}.jpg"
        Image.fromarray(photos[i][: 64 + 8 * i, :72]).save(path, quality=q, subsampling=0,
                                                          optimize=optimize)
        files.append(path)
    for i, restart in enumerate([1, 3]):
        path = root / f"restart{i}.jpg"
        path.write_bytes(ref_encode(jpeg_ref, photos[5 + i][:40, :56], 80, restart))
        files.append(path)
    return files
