import pytest

from chartcf.pipeline import load_manifest
from chartcf.testing import build_mock_corpus


@pytest.fixture(scope="session")
def mock_corpus(tmp_path_factory):
    """The standard 100-sample scripted corpus, built once per session."""
    return build_mock_corpus(tmp_path_factory.mktemp("corpus"), n=100)


@pytest.fixture(scope="session")
def corpus_seeds(mock_corpus):
    return load_manifest(mock_corpus.manifest)
