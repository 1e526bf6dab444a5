import copy
import hashlib
import logging

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from s2osc.config import get_config, seed_everything
from s2osc.errors import (DegenerateTaskError, InputError, MissingClassError,
                          ParameterError, PreconditionError)
from s2osc.models.class_centers import ClassCenters
from s2osc.models.example import Example, stack_pixels

logger = logging.getLogger(__name__)

INFERENCE_CHUNK = 1024


class SmallConvNet(nn.Module):
    """Two conv blocks, an embedding layer and a linear head"""

    def __init__(self, in_channels, height, width, n_classes, embed_dim=64):
        super().__init__()
        if height < 4 or width < 4:
            raise InputError(f"small_cnn needs images of at least 4x4, got {height}x{width}")
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, 16, kernel_size=3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, kernel_size=3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Flatten(),
            nn.Linear(32 * (height // 4) * (width // 4), embed_dim),
            nn.ReLU(),
        )
        self.head = nn.Linear(embed_dim, n_classes)

    def features(self, x):
        return self.body(x)

    def forward(self, x):
        return self.head(self.features(x))


class MlpNet(nn.Module):
    """Flatten, optional hidden layer, linear head; without a hidden layer the embedding is the input"""

    def __init__(self, in_channels, height, width, n_classes, hidden_dim=0):
        super().__init__()
        in_features = in_channels * height * width
        if hidden_dim:
            self.body = nn.Sequential(nn.Flatten(), nn.Linear(in_features, hidden_dim), nn.Tanh())
            embed_dim = hidden_dim
        else:
            self.body = nn.Flatten()
            embed_dim = in_features
        self.head = nn.Linear(embed_dim, n_classes)

    def features(self, x):
        return self.body(x)

    def forward(self, x):
        return self.head(self.features(x))


ARCHITECTURES = {
    'small_cnn': SmallConvNet,
    'mlp': MlpNet,
}


def build_network(arch, input_shape, n_classes, **kwargs):
    if arch not in ARCHITECTURES:
        raise ParameterError(f"unknown architecture {arch!r}")
    c, h, w = input_shape
    return ARCHITECTURES[arch](c, h, w, n_classes, **kwargs)


class ModelHandle:
    """A trainable classifier with its output label space"""

    def __init__(self, network, class_ids, arch, input_shape, arch_kwargs=None, training_log=None):
        self.network = network
        self.class_ids = list(class_ids)
        self.arch = arch
        self.input_shape = tuple(input_shape)
        self.arch_kwargs = dict(arch_kwargs or {})
        self.training_log = list(training_log or [])

    @property
    def n_classes(self):
        return self.network.head.out_features

    @property
    def embed_dim(self):
        return self.network.head.in_features

    def index_of(self, class_id):
        return self.class_ids.index(class_id)

    def logits(self, x):
        return self.network(x)

    def features(self, x):
        return self.network.features(x)

    def tag(self):
        """Short content hash of the parameters"""
        h = hashlib.sha256()
        for name, tensor in sorted(self.network.state_dict().items()):
            h.update(name.encode())
            h.update(tensor.detach().cpu().numpy().astype('<f4').tobytes())
        return f"{self.arch}-{h.hexdigest()[:12]}"

    def clone(self):
        return ModelHandle(copy.deepcopy(self.network), self.class_ids, self.arch, self.input_shape,
                           self.arch_kwargs, self.training_log)


def softmax_T(probs, T):
    """Raise each probability to the power 1/T and re-normalize"""
    if T <= 0:
        raise ParameterError(f"temperature must be positive, got {T}")
    probs = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide='ignore'):
        logp = np.log(probs) / T
    logp = logp - np.max(logp, axis=-1, keepdims=True)
    out = np.exp(logp)
    return out / out.sum(axis=-1, keepdims=True)


def tempered_log_softmax(logits, T):
    """log softmax_T(softmax(logits)); equal to log_softmax(logits / T)"""
    if T <= 0:
        raise ParameterError(f"temperature must be positive, got {T}")
    return F.log_softmax(logits / T, dim=-1)


def as_batch_tensor(batch, model=None):
    """Examples or a tensor -> float tensor (N, C, H, W), shape-checked against the model"""
    if isinstance(batch, torch.Tensor):
        x = batch
    else:
        batch = list(batch)
        if batch and not isinstance(batch[0], Example):
            raise InputError("batch must contain Example instances")
        x = stack_pixels(batch)
    if model is not None and x.numel() and tuple(x.shape[1:]) != model.input_shape:
        raise InputError(f"batch shape {tuple(x.shape[1:])} does not match model input {model.input_shape}")
    return x.float()


def make_optimizer(params, cfg):
    """SGD with Nesterov momentum"""
    return torch.optim.SGD(params, lr=cfg.learning_rate, momentum=cfg.momentum,
                           weight_decay=cfg.weight_decay, nesterov=cfg.momentum > 0)


def mean_cross_entropy(model, x, y):
    """Mean cross-entropy over a labeled tensor set, evaluated in chunks"""
    if len(x) == 0:
        return 0.0
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(x), INFERENCE_CHUNK):
            total += F.cross_entropy(model.logits(x[i:i + INFERENCE_CHUNK]),
                                     y[i:i + INFERENCE_CHUNK], reduction='sum').item()
    return total / len(x)


def extend_head(model, new_class_ids):
    """Copy of the model whose head gains zero-initialized rows for new classes"""
    new_class_ids = [c for c in new_class_ids if c not in model.class_ids]
    extended = model.clone()
    if not new_class_ids:
        return extended
    old = extended.network.head
    head = nn.Linear(old.in_features, old.out_features + len(new_class_ids))
    with torch.no_grad():
        head.weight.zero_()
        head.bias.zero_()
        head.weight[:old.out_features] = old.weight
        head.bias[:old.out_features] = old.bias
    extended.network.head = head
    extended.class_ids = model.class_ids + list(new_class_ids)
    return extended


class BackboneAgent:
    """Agent for pre-training the in-class model f and reading it out"""

    def __init__(self, arch='small_cnn', arch_kwargs=None):
        self.arch = arch
        self.arch_kwargs = dict(arch_kwargs or {})

    def new_model(self, input_shape, class_ids, seed):
        """Freshly initialized handle under a fixed seed"""
        torch.manual_seed(seed)
        kwargs = dict(self.arch_kwargs)
        if self.arch == 'mlp':
            kwargs.pop('embed_dim', None)
        else:
            kwargs.pop('hidden_dim', None)
        network = build_network(self.arch, input_shape, len(class_ids), **kwargs)
        return ModelHandle(network, class_ids, self.arch, input_shape, kwargs)

    def pretrain_f(self, train, cfg):
        """Minimize mean cross-entropy over the labeled train set"""
        if not train:
            raise PreconditionError("cannot pre-train on an empty train set")
        class_ids = sorted({x.label for x in train})
        if None in class_ids:
            raise PreconditionError("train set contains unlabeled examples")
        if len(class_ids) < 2:
            raise DegenerateTaskError(f"train set has a single class {class_ids}")

        seed_everything(cfg.seed)
        model = self.new_model(train[0].shape, class_ids, cfg.seed)
        x = as_batch_tensor(train, model)
        y = torch.tensor([model.index_of(e.label) for e in train], dtype=torch.long)
        self.fit(model, x, y, cfg, desc='pretrain f')
        return model

    def fit(self, model, x, y, cfg, desc='train'):
        """Mini-batch SGD on cross-entropy; appends the per-epoch mean loss to the training log"""
        generator = torch.Generator().manual_seed(cfg.seed)
        optimizer = make_optimizer(model.network.parameters(), cfg)
        model.network.train()
        initial = mean_cross_entropy(model, x, y)
        model.training_log.append({'epoch': 0, 'loss': initial})

        epochs = tqdm(range(1, cfg.epochs + 1), desc=desc, disable=not get_config().PROGRESS)
        for epoch in epochs:
            order = torch.randperm(len(x), generator=generator)
            total, seen = 0.0, 0
            for start in range(0, len(x), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                loss = F.cross_entropy(model.logits(x[idx]), y[idx])
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += loss.item() * len(idx)
                seen += len(idx)
            mean_loss = total / max(seen, 1)
            model.training_log.append({'epoch': epoch, 'loss': mean_loss})
            logger.debug("%s epoch %d loss %.5f", desc, epoch, mean_loss)
        model.network.eval()
        if cfg.epochs:
            logger.info("%s: loss %.4f -> %.4f over %d epochs", desc, initial,
                        model.training_log[-1]['loss'], cfg.epochs)
        return model

    def predict_logits(self, model, batch):
        """Logits as a float64 array, evaluated in chunks without gradients"""
        x = as_batch_tensor(batch, model)
        if len(x) == 0:
            raise PreconditionError("predict on an empty batch")
        model.network.eval()
        with torch.no_grad():
            chunks = [model.logits(x[i:i + INFERENCE_CHUNK]).double()
                      for i in range(0, len(x), INFERENCE_CHUNK)]
        return torch.cat(chunks).numpy()

    def predict_proba(self, model, batch):
        """Softmax probabilities, rows summing to 1"""
        logits = torch.from_numpy(self.predict_logits(model, batch))
        return torch.softmax(logits, dim=1).numpy()

    def embed(self, model, batch):
        """Penultimate-layer embeddings (input of the linear head)"""
        x = as_batch_tensor(batch, model)
        if len(x) == 0:
            return np.empty((0, model.embed_dim))
        model.network.eval()
        with torch.no_grad():
            chunks = [model.features(x[i:i + INFERENCE_CHUNK]).double()
                      for i in range(0, len(x), INFERENCE_CHUNK)]
        return torch.cat(chunks).numpy()

    def compute_centers(self, model, train, class_ids=None):
        """Mean embedding of each known class"""
        class_ids = list(class_ids if class_ids is not None else model.class_ids)
        by_class = {c: [] for c in class_ids}
        for x in train:
            if x.label in by_class:
                by_class[x.label].append(x)
        missing = [c for c, members in by_class.items() if not members]
        if missing:
            raise MissingClassError(f"no training instances for classes {missing}")
        centers = {c: self.embed(model, members).mean(axis=0) for c, members in by_class.items()}
        return ClassCenters(centers, source_model=model.tag())
