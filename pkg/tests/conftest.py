import numpy as np
import pytest

from ppgauth import corpus
from ppgauth.seeding import derive_seed


@pytest.fixture(scope="session")
def profiles():
    return corpus.make_profiles(5, 42)


@pytest.fixture(scope="session")
def small_records():
    """Six subjects, sit + walk, 60 s each; enough for pair sampling."""
    return corpus.generate_corpus(
        6, 11, activities=("sit", "walk"), duration_s=60.0, fs_hz=60.0
    )


def zero_jitter_profile(hr=60.0, noise=0.0):
    base = corpus.make_profiles(1, 0)[0]
    from dataclasses import replace

    return replace(base, hr_mean_bpm=hr, hr_jitter_bpm=0.0, noise_sigma=noise)
