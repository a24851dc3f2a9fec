import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def us_small():
    """A simulated and featurised US-family ensemble of 6 grids (about 430 lines)."""
    from gridstab.dynamics import sweep_failures
    from gridstab.features import attach_labels, featurize_grids
    from gridstab.ml import Dataset
    from gridstab.scenarios import build_ensemble, family_config

    ens = build_ensemble(family_config("US", ensemble_size=6, seed=101))
    labels = sweep_failures(ens.grids)
    vectors = attach_labels(featurize_grids(ens.grids), labels)
    return ens, labels, vectors, Dataset.from_vectors(vectors, "US")
