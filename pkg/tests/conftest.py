import pytest

from gesturerep import synthgen, trainer
from gesturerep.towers import GestureEncoderConfig

MICRO_SYNTH = dict(n_dialogues=2, speakers_per_dialogue=2, referents=4,
                   gestures_per_speaker=8, seed=11)

MICRO_ENCODER = GestureEncoderConfig(channels=(3, 4), temporal_kernel=3,
                                     temporal_strides=(1, 2), output_dim=8)


def micro_train_config(**overrides):
    defaults = dict(mode="combined", batch_size=8, max_epochs=3, seed=5,
                    encoder=MICRO_ENCODER, speech_hidden_dim=8, speech_output_dim=8,
                    projection_dim=6)
    defaults.update(overrides)
    return trainer.TrainConfig(**defaults)


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("micro_corpus")
    corpus = synthgen.generate(synthgen.SynthConfig(**MICRO_SYNTH), root)
    return corpus


@pytest.fixture(scope="session")
def micro_dataset(micro_corpus):
    return trainer.GestureDataset.from_corpus(micro_corpus.root)
