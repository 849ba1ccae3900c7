import numpy as np
import pytest

from tabscribe.domain import PRESET_SCHEMAS, CellId, ColumnSchema
from tabscribe.synth import CorpusSpec, gen_corpus, long_tail_weights, uniform_codes, write_corpus


@pytest.fixture(scope="session")
def occupation_schema() -> ColumnSchema:
    return PRESET_SCHEMAS["occupation"]


@pytest.fixture(scope="session")
def small_corpus_spec() -> CorpusSpec:
    codes = uniform_codes(12, seed=3)
    return CorpusSpec(
        n_cells=60,
        codes=codes,
        code_weights=long_tail_weights(12),
        blank_fraction=0.1,
        text_fraction=0.05,
        seed=17,
    )


@pytest.fixture(scope="session")
def small_corpus(small_corpus_spec):
    return gen_corpus(small_corpus_spec)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, small_corpus, occupation_schema):
    out = tmp_path_factory.mktemp("corpus")
    manifest_path = write_corpus(small_corpus, occupation_schema, out)
    return manifest_path
