import zipfile
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def mxl_fixture(tmp_path_factory) -> Path:
    """Compressed container wrapping the two-staff fixture score."""
    out = tmp_path_factory.mktemp("mxl") / "two_staff_eight_notes.mxl"
    inner = (DATA / "two_staff_eight_notes.musicxml").read_bytes()
    container = (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        "<container><rootfiles>"
        '<rootfile full-path="score.xml"/>'
        "</rootfiles></container>\n"
    )
    with zipfile.ZipFile(out, "w") as zf:
        zf.writestr("META-INF/container.xml", container)
        zf.writestr("score.xml", inner)
    return out
