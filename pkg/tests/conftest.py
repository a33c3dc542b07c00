from pathlib import Path

import pytest

from viscokernel.fem import MaterialParams, assemble, build_mesh
from viscokernel.io import read_csv

DATA = Path(__file__).parent / "data"


def csv_columns(path) -> dict:
    header, data = read_csv(path)
    return {name: data[:, i] for i, name in enumerate(header)}


@pytest.fixture(scope="session")
def desk_assembly():
    return assemble(build_mesh(1.0, 0.1, 0.04, 12, 2, 1), MaterialParams())
