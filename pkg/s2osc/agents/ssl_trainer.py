import logging
import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from s2osc.agents.backbone import (BackboneAgent, INFERENCE_CHUNK, as_batch_tensor, extend_head,
                                   make_optimizer, tempered_log_softmax)
from s2osc.config import get_config, seed_everything
from s2osc.errors import (ContractError, InternalInvariantError, PreconditionError,
                          record_warning)
from s2osc.models.example import KNOWN_SUPER, SUPER_CLASS, stack_pixels
from s2osc.models.ssl_batch_loss import SslBatchLoss
from s2osc.services.dataset_store import weak_augment_batch

logger = logging.getLogger(__name__)

PSI_EPSILON = 1e-6


def kl_teacher_student(teacher_log_probs, student_log_probs):
    """Row-wise KL(teacher || student) from log-probabilities"""
    return F.kl_div(student_log_probs, teacher_log_probs, reduction='none', log_target=True).sum(dim=1)


def renormalize_known(probs, n_known):
    """Drop the C' column and re-normalize over the known classes"""
    known = np.asarray(probs, dtype=np.float64)[..., :n_known]
    return known / known.sum(axis=-1, keepdims=True)


def normalized_entropy(logits):
    """Prediction entropy divided by ln C, in [0, 1]"""
    log_p = F.log_softmax(logits, dim=1)
    entropy = -(log_p.exp() * log_p).sum(dim=1)
    return entropy / math.log(logits.shape[1])


def teacher_psi(f_star, x):
    """psi(x) = [1 - l, l] with l the normalized entropy of f*; clamped away from 0 and 1"""
    with torch.no_grad():
        score = normalized_entropy(f_star.logits(x)).clamp(PSI_EPSILON, 1 - PSI_EPSILON)
    psi = torch.stack([1 - score, score], dim=1)
    if not torch.isfinite(psi).all() or (psi < 0).any() or (psi > 1).any():
        raise InternalInvariantError("psi left the unit interval")
    return psi


def label_indices(g, examples):
    """Head indices of example labels; unlabeled examples violate the contract"""
    if any(x.label is None for x in examples):
        raise ContractError("supervised batch contains an unlabeled example")
    return torch.tensor([g.index_of(x.label) for x in examples], dtype=torch.long)


def _augment_seed(*parts):
    return int(np.random.SeedSequence([abs(int(p)) for p in parts]).generate_state(1)[0])


def _check_head(g, f_star):
    n_known = g.n_classes - 1
    if list(f_star.class_ids) != list(g.class_ids[:n_known]):
        raise ContractError(f"teacher classes {f_star.class_ids} do not match g {g.class_ids[:n_known]}")
    return n_known


class SslTrainerAgent:
    """Agent for training the transductive classifier g"""

    def __init__(self, backbone=None):
        self.backbone = backbone or BackboneAgent()

    # -- losses ---------------------------------------------------------

    def supervised_loss(self, g, f_star, x, y, cfg):
        """L_s over labeled examples of D_in (known labels) and D_out (label C')"""
        if (y < 0).any():
            raise ContractError("supervised batch contains an unlabeled example")
        n_known = _check_head(g, f_star)
        logits = g.logits(x)
        log_p = F.log_softmax(logits, dim=1)
        ce = F.nll_loss(log_p, y, reduction='none')
        with torch.no_grad():
            confused = (log_p.exp()[:, :n_known].max(dim=1).values >= cfg.tau).to(ce.dtype)
            teacher = tempered_log_softmax(f_star.logits(x), cfg.temperature)
        # H_in for known labels; H_out for C' except rows g confidently places in a known class
        gate = torch.where(y == n_known, 1 - confused, torch.ones_like(ce))
        l_s1 = ce * gate
        l_s2 = kl_teacher_student(teacher, tempered_log_softmax(logits[:, :n_known], cfg.temperature))
        return (l_s1 + cfg.alpha * l_s2).sum() / (2 * len(x))

    def unsupervised_loss(self, g, f_star, x_u, cfg, seed):
        """(L_u, retained count): pseudo-labels on clean inputs, loss on the weak view"""
        if len(x_u) == 0:
            return torch.zeros((), dtype=torch.get_default_dtype()), 0
        n_known = _check_head(g, f_star)
        with torch.no_grad():
            q = torch.softmax(g.logits(x_u), dim=1)
            confidence, pseudo = q.max(dim=1)
            mask = confidence >= cfg.tau
            teacher = tempered_log_softmax(f_star.logits(x_u), cfg.temperature)
        logits = g.logits(weak_augment_batch(x_u, seed))
        ce = F.cross_entropy(logits, pseudo, reduction='none')
        kl = kl_teacher_student(teacher, tempered_log_softmax(logits[:, :n_known], cfg.temperature))
        terms = (ce + cfg.alpha * kl) * mask.to(ce.dtype)
        return terms.sum() / (2 * len(x_u)), int(mask.sum())

    def binary_variant_loss(self, g2, f_star, x_l, y_l, x_u, cfg, seed):
        """Known-vs-unknown super-class loss with psi distillation; y_l is 0 known, 1 unknown"""
        if g2.n_classes != 2:
            raise ContractError(f"binary variant needs a 2-way head, got {g2.n_classes}")
        if ((y_l < 0) | (y_l > 1)).any():
            raise ContractError("binary labels must be 0 (known) or 1 (unknown)")

        logits_l = g2.logits(x_l)
        logits_l_aug = g2.logits(weak_augment_batch(x_l, _augment_seed(seed, 0)))
        psi_l = teacher_psi(f_star, x_l)
        l_s = (F.cross_entropy(logits_l, y_l, reduction='none')
               + cfg.alpha * kl_teacher_student(psi_l.log(), F.log_softmax(logits_l_aug, dim=1)))
        l_s = l_s.sum() / (2 * len(x_l))

        retained = 0
        l_u = torch.zeros((), dtype=l_s.dtype)
        if len(x_u):
            with torch.no_grad():
                confidence, pseudo = torch.softmax(g2.logits(x_u), dim=1).max(dim=1)
                mask = confidence >= cfg.tau
            logits_u_aug = g2.logits(weak_augment_batch(x_u, _augment_seed(seed, 1)))
            psi_u = teacher_psi(f_star, x_u)
            terms = (F.cross_entropy(logits_u_aug, pseudo, reduction='none')
                     + cfg.alpha * kl_teacher_student(psi_u.log(), F.log_softmax(logits_u_aug, dim=1)))
            l_u = (terms * mask.to(terms.dtype)).sum() / (2 * len(x_u))
            retained = int(mask.sum())
        return SslBatchLoss(l_s, l_u, l_s + cfg.lambda_u * l_u, retained, len(x_u))

    def batch_loss(self, g, f_star, x_l, y_l, x_u, cfg, seed):
        """L = L_s + lambda_u * L_u for the configured variant"""
        if cfg.variant == 'binary_superclass':
            return self.binary_variant_loss(g, f_star, x_l, y_l, x_u, cfg, seed)
        l_s = self.supervised_loss(g, f_star, x_l, y_l, cfg)
        l_u, retained = self.unsupervised_loss(g, f_star, x_u, cfg, seed)
        return SslBatchLoss(l_s, l_u, l_s + cfg.lambda_u * l_u, retained, len(x_u))

    # -- training -------------------------------------------------------

    def build_training_sets(self, f_star, x_labeled, pool, train, cfg):
        """Labeled examples X, their head labels and the unlabeled pool U"""
        train_by_id = {x.instance_id: x for x in train}
        pool_by_id = {x.instance_id: x for x in pool}
        d_out = [pool_by_id[i] for i in x_labeled.d_out]
        d_in = [train_by_id[i] for c in sorted(x_labeled.d_in) for i in x_labeled.d_in[c]]
        out_ids = set(x_labeled.d_out)
        unlabeled = [x for x in pool if x.instance_id not in out_ids]

        if cfg.variant == 'binary_superclass':
            # a total of |D_out| known examples, drawn across the stored classes
            rng = np.random.default_rng(cfg.train.seed)
            take = min(len(d_in), max(len(d_out), 1))
            known = [d_in[i] for i in sorted(rng.choice(len(d_in), size=take, replace=False))] if d_in else []
            labeled = [x.with_label(KNOWN_SUPER) for x in known] + [x.with_label(SUPER_CLASS) for x in d_out]
            class_ids = [KNOWN_SUPER, SUPER_CLASS]
        else:
            labeled = list(d_in) + [x.with_label(SUPER_CLASS) for x in d_out]
            class_ids = list(f_star.class_ids) + [SUPER_CLASS]

        if cfg.fold_labeled_into_unlabeled:
            unlabeled = unlabeled + [x.with_label(None) for x in labeled]
        return labeled, class_ids, unlabeled

    def init_g(self, f_star, class_ids, input_shape, cfg):
        if cfg.init_from_f:
            if cfg.variant == 'binary_superclass':
                g = f_star.clone()
                torch.manual_seed(cfg.train.seed)
                g.network.head = nn.Linear(g.embed_dim, 2)
                g.class_ids = list(class_ids)
                g.training_log = []
                return g
            g = extend_head(f_star, [SUPER_CLASS])
            g.training_log = []
            return g
        return self.backbone.new_model(input_shape, class_ids, cfg.train.seed)

    def train_g(self, f_star, x_labeled, u_pool, cfg, train):
        """Train g on X = {D_in, D_out} and U = D_te minus D_out"""
        if not x_labeled.d_out and not any(x_labeled.d_in.values()):
            raise PreconditionError("no labeled data for g")
        labeled, class_ids, unlabeled = self.build_training_sets(f_star, x_labeled, u_pool, train, cfg)
        if not labeled:
            raise PreconditionError("no labeled data for g")
        if not unlabeled:
            record_warning('train_g', 'empty unlabeled pool; training on L_s only')

        seed_everything(cfg.train.seed)
        g = self.init_g(f_star, class_ids, labeled[0].shape, cfg)
        x_l = as_batch_tensor(labeled, g)
        y_l = label_indices(g, labeled)
        x_u = stack_pixels(unlabeled).float() if unlabeled else torch.empty((0, *x_l.shape[1:]))

        tc = cfg.train
        generator = torch.Generator().manual_seed(tc.seed)
        optimizer = make_optimizer(g.network.parameters(), tc)
        n_l, n_u, b = len(x_l), len(x_u), tc.batch_size
        steps = max(math.ceil(n_l / b), math.ceil(n_u / b) if n_u else 0)
        f_star.network.eval()

        epochs = tqdm(range(1, tc.epochs + 1), desc='train g', disable=not get_config().PROGRESS)
        for epoch in epochs:
            g.network.train()
            perm_l = torch.randperm(n_l, generator=generator)
            perm_u = torch.randperm(n_u, generator=generator) if n_u else None
            sums = {'l_s': 0.0, 'l_u': 0.0, 'retained': 0, 'unlabeled': 0}
            for step in range(steps):
                idx_l = perm_l[torch.arange(step * b, step * b + min(b, n_l)) % n_l]
                if n_u:
                    idx_u = perm_u[torch.arange(step * b, step * b + min(b, n_u)) % n_u]
                    batch_u = x_u[idx_u]
                else:
                    batch_u = x_u
                loss = self.batch_loss(g, f_star, x_l[idx_l], y_l[idx_l], batch_u, cfg,
                                       _augment_seed(tc.seed, epoch, step))
                optimizer.zero_grad()
                loss.total.backward()
                optimizer.step()
                sums['l_s'] += float(loss.l_s)
                sums['l_u'] += float(loss.l_u)
                sums['retained'] += loss.n_unlabeled_retained
                sums['unlabeled'] += loss.n_unlabeled
            g.network.eval()
            row = {
                'epoch': epoch,
                'l_s': sums['l_s'] / max(steps, 1),
                'l_u': sums['l_u'] / max(steps, 1),
                'retained_fraction': sums['retained'] / sums['unlabeled'] if sums['unlabeled'] else 0.0,
                'labeled_accuracy': self._accuracy(g, x_l, y_l),
            }
            g.training_log.append(row)
            logger.info("train g epoch %d: l_s %.4f l_u %.4f retained %.3f labeled acc %.3f", epoch,
                        row['l_s'], row['l_u'], row['retained_fraction'], row['labeled_accuracy'])
        g.network.eval()
        return g

    def _accuracy(self, g, x, y):
        if len(x) == 0:
            return 0.0
        with torch.no_grad():
            pred = torch.cat([g.logits(x[i:i + INFERENCE_CHUNK]).argmax(dim=1)
                              for i in range(0, len(x), INFERENCE_CHUNK)])
        return float((pred == y).double().mean())

    # -- inference ------------------------------------------------------

    def classify_pool(self, g, pool, f_star=None):
        """instance_id -> predicted label (a known class id or C'); ties go to the lower class"""
        if not pool:
            return {}
        probs = self.backbone.predict_proba(g, pool)
        winners = np.argmax(probs, axis=1)
        labels = [g.class_ids[i] for i in winners]
        if KNOWN_SUPER in g.class_ids:
            if f_star is None:
                raise ContractError("the binary variant needs f* to subdivide the known super-class")
            known_rows = [i for i, label in enumerate(labels) if label == KNOWN_SUPER]
            if known_rows:
                f_probs = self.backbone.predict_proba(f_star, [pool[i] for i in known_rows])
                for row, i in zip(np.argmax(f_probs, axis=1), known_rows):
                    labels[i] = f_star.class_ids[row]
        return {x.instance_id: int(label) for x, label in zip(pool, labels)}
