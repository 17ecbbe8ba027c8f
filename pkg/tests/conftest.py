import numpy as np
import pytest

from entroprune.corpus import RepetitionSpec, generate_corpus
from entroprune.model import ToyModelConfig, init_model, train_briefly
from entroprune.trace import ActivationTrace, Position, SnapshotLabel


def make_trace(snapshot_arrays, seed=0, source="test"):
    """Assemble a valid trace from a list of 2L+1 float32 arrays."""
    arrays = [np.asarray(a, dtype=np.float32) for a in snapshot_arrays]
    layers = (len(arrays) - 1) // 2
    labels = [SnapshotLabel(0, Position.PRE_ATTENTION)]
    for i in range(layers):
        labels.append(SnapshotLabel(i, Position.POST_ATTENTION))
        labels.append(SnapshotLabel(i, Position.POST_MLP))
    return ActivationTrace(
        hidden_dim=arrays[0].shape[1],
        token_count=arrays[0].shape[0],
        seed=seed,
        source=source,
        snapshots=list(zip(labels, arrays)),
    )


@pytest.fixture(scope="session")
def tiny_model():
    """A 2-layer model lightly trained so blocks differ in usefulness."""
    cfg = ToyModelConfig(layers=2, hidden_dim=16, heads=2, ffn_dim=32,
                         vocab=32, max_seq=32, seed=1)
    model = init_model(cfg)
    corpus = generate_corpus(RepetitionSpec(period=4, noise=0.1, seed=3),
                             cfg.vocab, 4, 16)
    train_briefly(model, corpus, 30, 0.05)
    return model, corpus
