"""Shared fixtures. Desk-scale datasets are expensive (minutes), so they are
generated once and cached on disk under $IRP_TEST_CACHE (default
~/.cache/irp_tests), keyed by the generation arguments plus a hash of the
simulation sources so physics changes invalidate stale caches."""

import hashlib
import os
import pathlib

import pytest

from irp import dataset as dsm

_SRC = pathlib.Path(__file__).resolve().parent.parent / "src" / "irp"


def _code_salt() -> str:
    h = hashlib.sha256()
    for name in ("core.py", "sim_rope.py", "sim_cloth.py", "dataset.py",
                 "raster.py"):
        h.update((_SRC / name).read_bytes())
    return h.hexdigest()[:12]


def cache_dir() -> pathlib.Path:
    root = os.environ.get("IRP_TEST_CACHE",
                          os.path.expanduser("~/.cache/irp_tests"))
    path = pathlib.Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cached_dataset(tag: str, **gen_kwargs) -> dsm.Dataset:
    key = f"{tag}_{_code_salt()}"
    path = cache_dir() / f"{key}.irpd"
    if path.exists():
        ds = dsm.load(str(path))
    else:
        jobs = max(os.cpu_count() or 1, 1)
        ds = dsm.generate(jobs=jobs, **gen_kwargs)
        dsm.split(ds)
        dsm.save(ds, str(path))
    return ds


@pytest.fixture(scope="session")
def small_rope_ds():
    """4x4 params x 5^3 actions x 2 repeats; fast unit-test sweep."""
    return cached_dataset("small_rope", task="rope", param_dims=(4, 4),
                          action_dims=(5, 5, 5), repeats=2, seed=11)


@pytest.fixture(scope="session")
def small_rope_noiseless_ds():
    """Same grid with init noise off; repeats collapse to identical runs."""
    from irp.core import WorldVariant
    return cached_dataset("small_rope_nl", task="rope", param_dims=(4, 4),
                          action_dims=(5, 5, 5), repeats=2, seed=12,
                          world=WorldVariant.training(init_noise_sd=0.0))


@pytest.fixture(scope="session")
def small_cloth_ds():
    """4x4 cloths x (3,3,3,2) actions; fast unit-test sweep."""
    return cached_dataset("small_cloth", task="cloth", param_dims=(4, 4),
                          action_dims=(3, 3, 3, 2), repeats=1, seed=13)


@pytest.fixture(scope="session")
def desk_rope_ds():
    """Full desk-scale rope sweep (8x8 x 9^3 x 3)."""
    return cached_dataset("desk_rope", task="rope", seed=0)


@pytest.fixture(scope="session")
def desk_cloth_ds():
    """Full desk-scale cloth sweep (6x6 x 4x6^3 x 1)."""
    return cached_dataset("desk_cloth", task="cloth", seed=0)
