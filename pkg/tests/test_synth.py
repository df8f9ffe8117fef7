import numpy as np
import pytest
from pydantic import ValidationError

from mvocc.data import normalize_apply, normalize_fit, one_vs_all_split
from mvocc.evaluation import auroc, late_fuse
from mvocc.synth import NEGATIVE_LABEL, POSITIVE_LABEL, SynthSpec, distance_to_mean_scores, synth_generate
from mvocc.tensor import Rng


def _oracle_auroc(dataset, seed=0):
    split = one_vs_all_split(dataset, POSITIVE_LABEL, 0.7, Rng(seed))
    stats = normalize_fit(split.train_views)
    scores = distance_to_mean_scores(
        normalize_apply(stats, split.train_views), normalize_apply(stats, split.test_views)
    )
    return auroc(late_fuse("AVG", scores), split.test_labels)


def test_shapes_and_labels():
    dataset = synth_generate(SynthSpec(n_views=3, dims=[5, 6, 7], n_positive=40, n_negative=30))
    assert dataset.dims == [5, 6, 7]
    assert dataset.n_rows == 70
    assert int(np.sum(dataset.labels == POSITIVE_LABEL)) == 40
    assert int(np.sum(dataset.labels == NEGATIVE_LABEL)) == 30


def test_same_seed_is_bit_identical():
    spec = SynthSpec(n_positive=50, n_negative=20, seed=11)
    first, second = synth_generate(spec), synth_generate(spec)
    for a, b in zip(first.views, second.views):
        np.testing.assert_array_equal(a, b)


def test_separable_benchmark_oracle():
    assert _oracle_auroc(synth_generate(SynthSpec(shift=6.0, seed=1))) > 0.99


def test_zero_shift_is_indistinguishable():
    values = [_oracle_auroc(synth_generate(SynthSpec(shift=0.0, seed=s)), s) for s in range(5)]
    assert abs(np.mean(values) - 0.5) < 0.05


def test_noise_view_carries_no_class_signal():
    dataset = synth_generate(SynthSpec(shift=6.0, noise_views=[0], seed=2))
    split = one_vs_all_split(dataset, POSITIVE_LABEL, 0.7, Rng(0))
    scores = distance_to_mean_scores(split.train_views, split.test_views)
    assert auroc(scores[:, 1], split.test_labels) > 0.95
    assert abs(auroc(scores[:, 0], split.test_labels) - 0.5) < 0.1


def test_spec_validation():
    with pytest.raises(ValidationError):
        SynthSpec(n_views=2, dims=[3])
    with pytest.raises(ValidationError):
        SynthSpec(noise_views=[5])
