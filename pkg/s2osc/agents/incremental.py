import logging

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from s2osc.agents.backbone import BackboneAgent, as_batch_tensor, extend_head, make_optimizer
from s2osc.config import get_config, seed_everything
from s2osc.errors import ContractError, PreconditionError, ProtocolError, record_warning
from s2osc.models.example import SUPER_CLASS, class_groups
from s2osc.models.memory import MemoryBuffer, UpdatePacket

logger = logging.getLogger(__name__)


def label_oracle(predictions, truth_source, exclude_ids=()):
    """Ground-truth labels for every instance predicted as C'"""
    pool = truth_source.pool_by_id()
    excluded = set(exclude_ids)
    queried = sorted(i for i, label in predictions.items() if label == SUPER_CLASS and i not in excluded)
    return [pool[i].with_label(truth_source.truth(i)) for i in queried]


def update_memory(memory, new_class_data, seed, declared_classes=()):
    """Fill the new classes directly when they fit in the spare capacity; otherwise
    rebalance every class to floor(M / classes) and fill the new classes up to that quota"""
    groups = class_groups(new_class_data)
    for c in declared_classes:
        if c not in groups:
            record_warning('update_memory', 'new class has no instances; skipped', class_id=c)
    clash = sorted(c for c in groups if c in memory.store)
    if clash:
        raise ProtocolError(f"classes {clash} are already stored in memory")

    updated = memory.copy()
    if not groups:
        return updated
    rng = np.random.default_rng(seed)
    n_classes = len(updated.store) + len(groups)
    incoming = sum(len(members) for members in groups.values())
    if incoming <= updated.capacity - updated.size:
        for c, members in groups.items():
            updated.store[c] = [members[i] for i in rng.permutation(len(members))]
        logger.info("memory: %d classes, filled directly, %d/%d stored",
                    n_classes, updated.size, updated.capacity)
        return updated

    quota = updated.capacity // n_classes
    if quota == 0 and updated.capacity > 0:
        record_warning('update_memory', 'capacity smaller than class count; classes get no exemplars',
                       capacity=updated.capacity, classes=n_classes)

    for c in updated.store:
        updated.store[c] = updated.store[c][:quota]  # most recently added go first
    for c, members in groups.items():
        order = rng.permutation(len(members))[:quota]
        updated.store[c] = [members[i] for i in order]
    logger.info("memory: %d classes, quota %d, %d/%d stored", n_classes, quota, updated.size, updated.capacity)
    return updated


class IncrementalAgent:
    """Agent for the class-incremental update of f with exemplar replay and distillation"""

    def __init__(self, backbone=None):
        self.backbone = backbone or BackboneAgent()

    def store_targets(self, f_prev, memory):
        """q_j = f^{t-1}(x_j) for every exemplar, before any update"""
        exemplars = memory.examples()
        if not exemplars:
            return {}
        probs = self.backbone.predict_proba(f_prev, exemplars)
        targets = {}
        for x, q in zip(exemplars, probs):
            q = q.copy()
            q.setflags(write=False)
            targets[x.instance_id] = q
        return targets

    def make_packet(self, f_prev, memory, newly_labeled, window_index):
        return UpdatePacket(newly_labeled, window_index, self.store_targets(f_prev, memory), f_prev.class_ids)

    @staticmethod
    def distillation_term(model, x, q, n_old):
        """-sum q log f^t over the old classes; f^t re-normalized over its old-class outputs"""
        # q lives on the old head only. Normalizing f^t over the same outputs, rather than
        # zero-padding q against the extended head, leaves the new units to the cross entropy
        # and makes the term equal H(q) right after extend_head (see DESIGN.md, Losses).
        log_old = F.log_softmax(model.logits(x)[:, :n_old], dim=1)
        return -(q * log_old).sum(dim=1)

    @classmethod
    def incremental_loss(cls, model, x, y, q, has_q, n_old):
        """Classification on every example plus distillation on memory examples, batch mean"""
        ce = F.cross_entropy(model.logits(x), y, reduction='none')
        distill = cls.distillation_term(model, x, q, n_old) * has_q.to(ce.dtype)
        return (ce + distill).sum() / len(x)

    def incremental_update(self, f_prev, memory, packet, cfg):
        """f^t: head extended with the new classes, trained on D_out-hat and the memory"""
        if not packet.newly_labeled:
            raise PreconditionError("update packet has no labeled instances")
        new_classes = packet.new_class_ids
        collisions = sorted(set(new_classes) & set(f_prev.class_ids))
        if collisions:
            raise ProtocolError(f"new classes {collisions} collide with known classes")
        exemplars = memory.examples()
        if set(packet.q_targets) != {x.instance_id for x in exemplars}:
            raise ContractError("q_targets must cover exactly the memory instances")
        stray = sorted({x.label for x in exemplars} - set(f_prev.class_ids))
        if stray:
            raise ContractError(f"memory holds classes {stray} unknown to f_prev")

        digest = packet.targets_digest()
        seed_everything(cfg.seed)
        model = extend_head(f_prev, new_classes)
        model.training_log = []
        n_old = f_prev.n_classes

        data = list(packet.newly_labeled) + exemplars
        x = as_batch_tensor(data, model)
        y = torch.tensor([model.index_of(e.label) for e in data], dtype=torch.long)
        q = torch.zeros((len(data), n_old), dtype=x.dtype)
        has_q = torch.zeros(len(data), dtype=torch.bool)
        offset = len(packet.newly_labeled)
        for k, e in enumerate(exemplars):
            q[offset + k] = torch.from_numpy(np.asarray(packet.q_targets[e.instance_id], dtype=np.float32))
            has_q[offset + k] = True

        generator = torch.Generator().manual_seed(cfg.seed)
        optimizer = make_optimizer(model.network.parameters(), cfg)
        model.network.train()
        epochs = tqdm(range(1, cfg.epochs + 1), desc='update f', disable=not get_config().PROGRESS)
        for epoch in epochs:
            order = torch.randperm(len(data), generator=generator)
            total = 0.0
            for start in range(0, len(data), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                loss = self.incremental_loss(model, x[idx], y[idx], q[idx], has_q[idx], n_old)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += loss.item() * len(idx)
            model.training_log.append({'epoch': epoch, 'loss': total / len(data)})
        model.network.eval()

        if packet.targets_digest() != digest:
            raise ContractError("distillation targets changed during the update")
        logger.info("window %d update: +%s classes, %d labeled, %d exemplars", packet.window_index,
                    new_classes, len(packet.newly_labeled), len(exemplars))
        return model
