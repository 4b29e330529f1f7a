import numpy as np
import pytest

from vcguard import datasets
from vcguard.tinynet import Mlp, TrainConfig, train

from _digits import build_corpus

DESK_LAYER_DIMS = (784, 128, 64, 10)
DESK_SEED = 42
DESK_EPOCHS = 20  # Table-style recipe at desk scale; epoch 5 already clears 0.90


@pytest.fixture(scope="session")
def corpus():
    """Desk-scale digit corpus: 10k train / 1k val / 2k evaluation pool."""
    data = build_corpus()
    return {
        "train": datasets.LabeledDataset(*data["train"]),
        "val": datasets.LabeledDataset(*data["val"]),
        "pool": datasets.LabeledDataset(*data["pool"]),
        "source": data["source"],
    }


@pytest.fixture(scope="session")
def desk_run(corpus):
    """The trained desk-scale classifier and its full training trajectory."""
    net = Mlp.init(DESK_LAYER_DIMS, seed=DESK_SEED)
    trajectory = train(
        net,
        corpus["train"],
        corpus["val"],
        TrainConfig(epochs=DESK_EPOCHS, seed=DESK_SEED),
    )
    return net, trajectory


@pytest.fixture(scope="session")
def blob_splits():
    """Small synthetic-blob classification task for fast harness tests."""
    ds = datasets.synth_blobs(n=1200, classes=4, dim=64, spread=0.18, seed=7)
    order = np.random.default_rng(1).permutation(len(ds))
    return ds.subset(order[:900]), ds.subset(order[900:1050]), ds.subset(order[1050:])


@pytest.fixture(scope="session")
def blob_net(blob_splits):
    train_set, val_set, _ = blob_splits
    net = Mlp.init((64, 32, 16, 4), seed=0)
    train(net, train_set, val_set, TrainConfig(epochs=15, seed=0, learning_rate=0.003))
    return net


@pytest.fixture
def blob_idx_files(tmp_path, blob_splits):
    """Blob data written out as IDX files (8x8 layout) for CLI runs."""
    train_set, _, _ = blob_splits
    images = tmp_path / "blobs-images.idx3"
    labels = tmp_path / "blobs-labels.idx1"
    datasets.write_idx_images(train_set.images, images, rows=8, cols=8)
    datasets.write_idx_labels(train_set.labels, labels)
    return images, labels
