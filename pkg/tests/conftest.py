import numpy as np
import pytest

from fewtune import SyntheticSpec, gen_synthetic, make_rng


@pytest.fixture(scope="session")
def small_dataset():
    """Five classes, small dims, with a pretrained head; fast to train on."""
    spec = SyntheticSpec(n_classes=5, n_train=12, n_support=4, n_query=4,
                         d_img=12, d_txt=10, d_joint=6, sigma_within=0.4)
    return gen_synthetic(spec, make_rng(90210))


@pytest.fixture(scope="session")
def ten_class_dataset():
    """Ten classes with the stock per-class split sizes."""
    spec = SyntheticSpec(n_classes=10, n_train=20, n_support=6, n_query=6,
                         d_img=16, d_txt=12, d_joint=8, sigma_within=0.8)
    return gen_synthetic(spec, make_rng(4242))


def random_dataset(rng, n_classes=3, with_projection=True, d_img=7, d_txt=5, d_joint=4,
                   n_train=4, n_support=2, n_query=2):
    """Arbitrary float32-valued dataset for serialization round-trips."""
    from fewtune import ClassRecord, EmbeddingDataset

    def f32(shape):
        return rng.normal(size=shape).astype(np.float32).astype(np.float64)

    classes = tuple(
        ClassRecord(
            name=f"thing {k}",
            text_embedding=f32((d_txt,)),
            train=f32((n_train, d_img)),
            support=f32((n_support, d_img)),
            query=f32((n_query, d_img)),
        )
        for k in range(n_classes)
    )
    pretrained = (f32((d_img, d_joint)), f32((d_txt, d_joint))) if with_projection else None
    return EmbeddingDataset(d_img=d_img, d_txt=d_txt, d_joint=d_joint, classes=classes,
                            prompt_template="A photo of {label}.", pretrained=pretrained).validate()
