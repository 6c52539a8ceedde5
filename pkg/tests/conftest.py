import numpy as np
import pytest

from lcaug.dataset import LabelSet, SynthSpec, synth_dataset
from lcaug.image import ImageU8


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, width=8, height=8):
    return ImageU8(rng.integers(0, 256, (height, width, 3), dtype=np.uint8))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Tiny 3-class corpus for fast search/train tests."""
    out = tmp_path_factory.mktemp("small_corpus")
    labels = LabelSet(("alpha", "beta", "gamma"))
    spec = SynthSpec(labels=labels, per_class=20, size=64, seed=7, images_per_lesion=2)
    manifest = synth_dataset(spec, out)
    return out, manifest


@pytest.fixture(scope="session")
def search_corpus(tmp_path_factory):
    """Larger 3-class corpus: after a holdout split every fold still covers
    all classes, so full two-stage searches run without undefined metrics."""
    out = tmp_path_factory.mktemp("search_corpus")
    labels = LabelSet(("alpha", "beta", "gamma"))
    spec = SynthSpec(labels=labels, per_class=40, size=64, seed=3, images_per_lesion=1)
    manifest = synth_dataset(spec, out)
    return out, manifest
