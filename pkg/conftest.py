import os

os.environ.setdefault('S2OSC_ENV', 'testing')

import numpy as np
import pytest

from s2osc.models.example import Example
from s2osc.models.experiment_config import ExperimentConfig
from s2osc.services.dataset_store import write_idx_images, write_idx_labels


def make_blobs(n_classes=6, per_class=30, size=8, seed=0, noise=0.08):
    """uint8 images where class c lights row c (mod size) and a class-specific column band"""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for c in range(n_classes):
        for _ in range(per_class):
            img = rng.random((size, size)) * noise
            img[c % size, :] += 0.9
            img[:, (2 * c) % size] += 0.5
            images.append(np.clip(img, 0, 1))
            labels.append(c)
    images = np.rint(np.stack(images) * 255).astype(np.uint8)
    return images, np.asarray(labels, dtype=np.uint8)


def blob_examples(n_classes=6, per_class=30, size=8, seed=0):
    images, labels = make_blobs(n_classes, per_class, size, seed)
    return [Example(images[i][None].astype(np.float32) / 255.0, int(labels[i]), i)
            for i in range(len(labels))]


@pytest.fixture
def blobs():
    return blob_examples()


@pytest.fixture
def idx_files(tmp_path):
    images, labels = make_blobs()
    images_path = tmp_path / 'images-idx3-ubyte'
    labels_path = tmp_path / 'labels-idx1-ubyte'
    write_idx_images(images_path, images)
    write_idx_labels(labels_path, labels)
    return str(images_path), str(labels_path)


@pytest.fixture
def tiny_config(idx_files, tmp_path):
    """A config that trains in seconds on the blob images"""
    images_path, labels_path = idx_files
    return ExperimentConfig(
        images_path=images_path,
        labels_path=labels_path,
        known_fraction=0.5,
        n_unknown=1,
        K=10,
        embed_dim=16,
        f_epochs=4,
        f_batch_size=16,
        g_epochs=3,
        g_batch_size=16,
        u_epochs=3,
        u_batch_size=16,
        memory_size=60,
        k_values=[5, 10],
        output_dir=str(tmp_path / 'run'),
    )


TOY_SHAPE = (1, 4, 4)


def toy_model(class_ids, seed):
    """Linear float64 model on 4x4 inputs; at most 5 outputs keeps it under 100 parameters"""
    from s2osc.agents.backbone import BackboneAgent
    model = BackboneAgent('mlp').new_model(TOY_SHAPE, class_ids, seed)
    model.network.double()
    return model


def assert_gradients_match(loss_fn, model, eps=1e-6, tolerance=1e-3):
    """Autograd against central finite differences over every parameter"""
    import torch
    from torch.nn.utils import parameters_to_vector, vector_to_parameters

    params = list(model.network.parameters())
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in params]).detach().clone()

    theta = parameters_to_vector(params).detach().clone()
    numeric = torch.zeros_like(theta)
    with torch.no_grad():
        for k in range(len(theta)):
            for sign in (1, -1):
                shifted = theta.clone()
                shifted[k] += sign * eps
                vector_to_parameters(shifted, params)
                numeric[k] += sign * float(loss_fn()) / (2 * eps)
        vector_to_parameters(theta, params)
    error = (analytic - numeric).norm() / max(float(analytic.norm() + numeric.norm()), 1e-12)
    assert float(error) < tolerance
