"""End-to-end OSC / IOSC pipelines, the threshold baseline and the K sweep."""
import logging
import os

import numpy as np

from s2osc.agents.backbone import BackboneAgent
from s2osc.agents.incremental import IncrementalAgent, label_oracle, update_memory
from s2osc.agents.ssl_trainer import SslTrainerAgent
from s2osc.errors import ConfigError, capture_warnings, record_warning, stage
from s2osc.models.cluster_assignment import ClusterAssignment
from s2osc.models.example import SUPER_CLASS, sort_labels
from s2osc.models.memory import MemoryBuffer
from s2osc.models.report import WINDOW_COLUMNS, RunReport, WindowReport
from s2osc.services import artifact_store as store
from s2osc.services.checkpoint_service import save_checkpoint
from s2osc.services.dataset_store import build_stream, load_idx_dataset, make_osc_split, subsample
from s2osc.services.filter_service import pseudo_label_purity, run_filter
from s2osc.services.metrics_service import (average_over_windows, binary_confusion, classification_metrics,
                                            confusion_from_labels, f_out, forgetting)
from s2osc.services.novelty_cluster import kmeans, match_clusters

logger = logging.getLogger(__name__)

G_LOG_COLUMNS = ('epoch', 'l_s', 'l_u', 'retained_fraction', 'labeled_accuracy')
F_LOG_COLUMNS = ('epoch', 'loss')
K_SWEEP_COLUMNS = ('K', 'accuracy', 'precision', 'recall', 'weighted_f1', 'f_out', 'purity')


class Prepared:
    """Dataset, split and pre-trained f shared by runs that differ only downstream of f"""

    def __init__(self, dataset, split, f, centers):
        self.dataset = dataset
        self.split = split
        self.f = f
        self.centers = centers


class ExperimentService:
    """Runs one experiment per instance and persists every artifact under cfg.output_dir"""

    def __init__(self, cfg):
        self.cfg = cfg
        self.backbone = BackboneAgent(cfg.arch, {'embed_dim': cfg.embed_dim, 'hidden_dim': cfg.hidden_dim})
        self.ssl = SslTrainerAgent(self.backbone)
        self.incremental = IncrementalAgent(self.backbone)
        self.layout = store.OutputLayout(cfg.output_dir)

    # -- shared stages --------------------------------------------------

    def validate(self, protocol=None):
        """Stage 0: everything checkable without reading data"""
        with stage('config'):
            cfg = self.cfg
            for name in ('images_path', 'labels_path'):
                path = getattr(cfg, name)
                if not path:
                    raise ConfigError(f"{name} is required")
                if not os.path.exists(path):
                    raise ConfigError(f"{name} does not exist: {path}")
            if protocol and cfg.protocol != protocol:
                raise ConfigError(f"config protocol is {cfg.protocol!r}, this run needs {protocol!r}")
            self.layout.prepare()
            store.write_text(self.layout.snapshot_path, cfg.to_toml())

    def load(self):
        with stage('load'):
            dataset = load_idx_dataset(self.cfg.images_path, self.cfg.labels_path)
            if self.cfg.subset_size:
                dataset = subsample(dataset, self.cfg.subset_size, self.cfg.seed)
            return dataset

    def split(self, dataset):
        with stage('split'):
            cfg = self.cfg
            split = make_osc_split(dataset, cfg.known_fraction, cfg.n_unknown, cfg.known_holdout, cfg.seed)
            if cfg.protocol == 'iosc':
                n_classes = len(split.known_classes) + len(split.unknown_classes)
                if cfg.memory_size < n_classes:
                    raise ConfigError(f"memory_size {cfg.memory_size} cannot hold one exemplar "
                                      f"for each of {n_classes} classes")
            store.write_json(self.layout.path('splits', 'split.json'), split.to_dict())
            return split

    def pretrain(self, train, known_examples=None, name='f'):
        """f trained on `train`; centers from `known_examples` (train by default)"""
        with stage('pretrain_f'):
            f = self.backbone.pretrain_f(train, self.cfg.f_train_config())
            store.write_csv(self.layout.path('reports', f'train_{name}.csv'), F_LOG_COLUMNS, f.training_log)
        with stage('compute_centers'):
            centers = self.backbone.compute_centers(f, known_examples if known_examples is not None else train)
            save_checkpoint(self.layout.path('checkpoints', f'{name}.ckpt'), f, centers)
        return f, centers

    def prepare(self, protocol=None):
        self.validate(protocol)
        dataset = self.load()
        split = self.split(dataset)
        f, centers = self.pretrain(split.train)
        return Prepared(dataset, split, f, centers)

    def _reuse(self, prepared, protocol):
        # persist the shared artifacts again so this output directory replays on its own
        self.validate(protocol)
        store.write_json(self.layout.path('splits', 'split.json'), prepared.split.to_dict())
        save_checkpoint(self.layout.path('checkpoints', 'f.ckpt'), prepared.f, prepared.centers)
        store.write_csv(self.layout.path('reports', 'train_f.csv'), F_LOG_COLUMNS, prepared.f.training_log)
        return prepared

    def ssl_config_for(self, n_novel):
        ssl_cfg = self.cfg.ssl_config()
        if self.cfg.variant == 'auto':
            variant = 'multiclass' if n_novel <= 1 else 'binary_superclass'
            ssl_cfg = ssl_cfg.model_copy(update={'variant': variant})
        return ssl_cfg

    def detect(self, f, centers, known_examples, pool, truth, n_novel, suffix=''):
        """filter -> train g -> classify; returns (predictions, g, filter outcome, ssl config)"""
        cfg = self.cfg
        with stage('filter'):
            outcome = run_filter(f, centers, pool, known_examples, cfg.K, cfg.lambda_, cfg.seed, self.backbone)
            novel = {t for t in truth.values() if t not in f.class_ids}
            outcome.purity = pseudo_label_purity(outcome.d_out, truth, novel)
            store.write_json(self.layout.path('filters', f'filter{suffix}.json'), outcome.to_dict())
        ssl_cfg = self.ssl_config_for(n_novel)
        with stage('train_g'):
            g = self.ssl.train_g(f, outcome, pool, ssl_cfg, known_examples)
            save_checkpoint(self.layout.path('checkpoints', f'g{suffix}.ckpt'), g)
            store.write_csv(self.layout.path('reports', f'train_g{suffix}.csv'), G_LOG_COLUMNS, g.training_log)
        with stage('classify'):
            predictions = self.ssl.classify_pool(g, pool, f)
        return predictions, g, outcome, ssl_cfg

    def score(self, predictions, embed_model, pool, truth, known_classes, n_clusters,
              window_index=0, suffix=''):
        """Cluster the C' predictions, match clusters to novel classes and compute window metrics"""
        cfg = self.cfg
        ids = [x.instance_id for x in pool]
        truth_labels = [truth[i] for i in ids]
        novel = {t for t in truth_labels if t not in known_classes}
        if n_clusters is None:
            n_clusters = max(1, len(novel))
        final = {i: predictions[i] for i in ids}
        super_pool = [x for x in pool if predictions[x.instance_id] == SUPER_CLASS]
        cluster_info = None

        with stage('cluster'):
            if super_pool and novel:
                B = min(n_clusters, len(super_pool))
                if B < n_clusters:
                    record_warning('cluster', "fewer C' predictions than clusters",
                                   predicted=len(super_pool), clusters=n_clusters)
                assignment = kmeans(self.backbone.embed(embed_model, super_pool), B, cfg.seed,
                                    cfg.kmeans_max_iter, cfg.kmeans_tol,
                                    instance_ids=[x.instance_id for x in super_pool], n_init=cfg.kmeans_n_init)
                # match on the members whose true class is novel
                keep = [k for k, i in enumerate(assignment.instance_ids) if truth[i] in novel]
                novel_part = ClusterAssignment(assignment.labels[keep], assignment.centroids,
                                               assignment.iterations_run,
                                               [assignment.instance_ids[k] for k in keep])
                mapping = match_clusters(novel_part, truth)
                for i, c in zip(assignment.instance_ids, assignment.labels):
                    mapped = mapping[int(c)]
                    final[i] = SUPER_CLASS if mapped is None else mapped
                cluster_info = {'n_clusters': B, 'mapping': {str(k): v for k, v in mapping.items()},
                                'iterations': assignment.iterations_run,
                                'wcss': assignment.wcss_history[-1]}
                store.write_json(self.layout.path('reports', f'clusters{suffix}.json'),
                                 {**assignment.to_dict(), 'mapping': cluster_info['mapping']})

        with stage('metrics'):
            predicted = [final[i] for i in ids]
            label_order = sort_labels(set(truth_labels) | set(predicted))
            cm = confusion_from_labels(truth_labels, predicted, label_order)
            accuracy, precision, recall, weighted_f1 = classification_metrics(cm)
            cm_out = binary_confusion([t in novel for t in truth_labels],
                                      [predictions[i] == SUPER_CLASS for i in ids])
            store.write_json(self.layout.path('reports', f'predictions{suffix}.json'),
                             {'predictions': {str(i): final[i] for i in ids},
                              'confusion': cm.to_dict(), 'unknown_confusion': cm_out})
            report = WindowReport(window_index, accuracy, precision, recall, weighted_f1, f_out(cm_out),
                                  extra={'n_predicted_super': len(super_pool),
                                         'novel_classes': sorted(novel),
                                         'clusters': cluster_info})
        logger.info("window %d: accuracy %.4f weighted F1 %.4f F_out %s", window_index, accuracy,
                    weighted_f1, report.f_out)
        return report, final

    def export_embeddings(self, model, pool, truth, final, suffix=''):
        embeddings = self.backbone.embed(model, pool)
        ids = [x.instance_id for x in pool]
        return store.export_embeddings(self.layout.path('reports', f'embeddings{suffix}.tsv'),
                                       self.layout.path('reports', f'embeddings{suffix}_meta.tsv'),
                                       embeddings, ids, [truth[i] for i in ids], [final[i] for i in ids])

    def finish(self, windows, extra, warnings):
        """Average the windows, attach warnings, write report.json and windows.csv"""
        with stage('report'):
            report = average_over_windows(windows, {**extra, 'warnings': list(warnings)})
            store.write_text(self.layout.path('reports', 'report.json'), report.to_json())
            store.write_csv(self.layout.path('reports', 'windows.csv'), WINDOW_COLUMNS,
                            [w.row() for w in windows])
        return report

    def _run_extra(self, split, protocol):
        return {
            'protocol': protocol,
            'config_digest': self.cfg.digest(),
            'known_classes': sorted(split.known_classes),
            'unknown_classes': sorted(split.unknown_classes),
            'seed': self.cfg.seed,
        }

    # -- pipelines ------------------------------------------------------

    def run_osc(self, prepared=None):
        """pretrain f -> centers -> filter -> g -> classify -> cluster -> metrics"""
        with capture_warnings() as warnings:
            prepared = self._reuse(prepared, 'osc') if prepared else self.prepare('osc')
            split, f = prepared.split, prepared.f
            pool, truth = split.test_pool, split.withheld_labels
            predictions, g, outcome, ssl_cfg = self.detect(f, prepared.centers, split.train, pool, truth,
                                                           len(split.unknown_classes))
            window, final = self.score(predictions, g, pool, truth, set(f.class_ids),
                                       self.cfg.resolved_n_clusters)
            window.extra.update({'variant': ssl_cfg.variant, 'n_d_out': len(outcome.d_out),
                                 'purity': outcome.purity, 'filter_components': outcome.component_summary()})
            self.export_embeddings(g, pool, truth, final)
            extra = self._run_extra(split, 'osc')
            extra.update({'K': self.cfg.K, 'purity': outcome.purity})
        return self.finish([window], extra, warnings)

    def run_baseline_threshold(self, prepared=None):
        """f alone: unknown when the max softmax falls below theta"""
        cfg = self.cfg
        with capture_warnings() as warnings:
            prepared = self._reuse(prepared, None) if prepared else self.prepare()
            split, f = prepared.split, prepared.f
            pool, truth = split.test_pool, split.withheld_labels
            with stage('classify'):
                probs = self.backbone.predict_proba(f, pool)
                confidence = probs.max(axis=1)
                flagged = np.ones(len(pool), dtype=bool) if cfg.theta >= 1 else confidence < cfg.theta
                winners = np.argmax(probs, axis=1)
                predictions = {x.instance_id: SUPER_CLASS if flag else f.class_ids[w]
                               for x, flag, w in zip(pool, flagged, winners)}
            window, final = self.score(predictions, f, pool, truth, set(f.class_ids), cfg.resolved_n_clusters)
            window.extra.update({'theta': cfg.theta, 'n_flagged': int(flagged.sum())})
            self.export_embeddings(f, pool, truth, final)
            extra = self._run_extra(split, 'baseline')
            extra['theta'] = cfg.theta
        return self.finish([window], extra, warnings)

    def run_iosc(self):
        """Stream windows: detect with f^{t-1}, query the oracle, update f and the memory"""
        cfg = self.cfg
        with capture_warnings() as warnings:
            self.validate('iosc')
            dataset = self.load()
            split = self.split(dataset)
            with stage('stream'):
                schedule = build_stream(split, cfg.class_arrival, cfg.seed)
                store.write_json(self.layout.path('splits', 'schedule.json'), schedule.to_dict())
            with stage('update_memory'):
                memory = update_memory(MemoryBuffer(cfg.memory_size), split.train, cfg.seed)
            f, _ = self.pretrain(split.train, memory.examples(), name='f_0')

            truth = split.withheld_labels
            slices = {0: self._eval_slice(split.test_pool, truth, split.known_classes, cfg.seed)}
            revealed = []
            windows = []
            for window in schedule.stream_windows:
                t = window.index
                pool = window.instances
                slices[t] = self._eval_slice(pool, truth, set(window.novel_class_ids), cfg.seed + t)
                with stage('compute_centers'):
                    known_examples = memory.examples()
                    centers = self.backbone.compute_centers(f, known_examples)
                window_truth = {x.instance_id: truth[x.instance_id] for x in pool}
                predictions, g, outcome, ssl_cfg = self.detect(f, centers, known_examples, pool, window_truth,
                                                               len(window.novel_class_ids), suffix=f'_{t}')
                report, final = self.score(predictions, g, pool, window_truth, set(f.class_ids),
                                           None, window_index=t, suffix=f'_{t}')

                with stage('label_oracle'):
                    excluded = [i for ids in slices.values() for i in ids]
                    newly = label_oracle(predictions, split, exclude_ids=excluded)
                    revealed.extend(newly)
                f, memory, packet = self._update(f, memory, newly, window, t)

                with stage('evaluate'):
                    report.acc_per_classset = {j: self._slice_accuracy(f, split, ids)
                                               for j, ids in sorted(slices.items())}
                report.extra.update({'variant': ssl_cfg.variant, 'n_d_out': len(outcome.d_out),
                                     'purity': outcome.purity, 'novel_class_ids': window.novel_class_ids,
                                     'n_oracle_labeled': len(newly),
                                     'new_class_ids': packet.new_class_ids if packet else [],
                                     'average_accuracy': report.average_accuracy})
                windows.append(report)
                if t == schedule.stream_windows[-1].index:
                    self.export_embeddings(g, pool, window_truth, final)

            extra = self._run_extra(split, 'iosc')
            extra.update({'memory_size': cfg.memory_size, 'use_memory': cfg.use_memory,
                          'class_arrival': cfg.class_arrival, 'n_windows': len(windows)})
            with stage('oracle'):
                a_star = self._oracle_accuracy(split, revealed, slices)
            extra['a_star'] = a_star
            per_window = [w.average_accuracy for w in windows]
            if a_star > 0:
                extra['forgetting'] = forgetting(per_window, a_star)
            else:
                record_warning('oracle', 'joint offline accuracy is zero; forgetting undefined')
                extra['forgetting'] = None
        return self.finish(windows, extra, warnings)

    def _update(self, f, memory, newly, window, t):
        cfg = self.cfg
        with stage('incremental_update'):
            if not newly:
                record_warning('incremental_update', 'no instances predicted as novel; model kept', window=t)
                update_memory(memory, [], cfg.seed + t, declared_classes=window.novel_class_ids)
                return f, memory, None
            replay = memory if cfg.use_memory else MemoryBuffer(memory.capacity)
            packet = self.incremental.make_packet(f, replay, newly, t)
            store.write_json(self.layout.path('reports', f'packet_{t}.json'), packet.to_dict())
            f_next = self.incremental.incremental_update(f, replay, packet, cfg.update_train_config(cfg.seed + t))
            save_checkpoint(self.layout.path('checkpoints', f'f_{t}.ckpt'), f_next)
        with stage('update_memory'):
            new_data = [x for x in newly if x.label in packet.new_class_ids]
            memory = update_memory(memory, new_data, cfg.seed + t, declared_classes=window.novel_class_ids)
            store.write_json(self.layout.path('reports', f'memory_{t}.json'), memory.to_manifest())
        return f_next, memory, packet

    def _eval_slice(self, pool, truth, classes, seed):
        """Ids held out for acc_{k,j}; a fixed fraction of the pool members of `classes`"""
        members = sorted(x.instance_id for x in pool if truth[x.instance_id] in classes)
        if not members:
            return []
        rng = np.random.default_rng(seed)
        n = max(1, int(round(self.cfg.eval_fraction * len(members))))
        return sorted(int(i) for i in rng.choice(members, size=min(n, len(members)), replace=False))

    def _slice_accuracy(self, model, split, ids):
        if not ids:
            return 0.0
        pool = split.pool_by_id()
        probs = self.backbone.predict_proba(model, [pool[i] for i in ids])
        predicted = [model.class_ids[k] for k in np.argmax(probs, axis=1)]
        return float(np.mean([p == split.truth(i) for p, i in zip(predicted, ids)]))

    def _oracle_accuracy(self, split, revealed, slices):
        """A*: one model trained on all labels revealed across the stream, cached by config digest"""
        path = self.layout.path('reports', 'oracle.json')
        digest = self.cfg.digest()
        if os.path.exists(path):
            cached = store.read_json(path)
            if cached.get('digest') == digest:
                logger.info("reusing cached A* %.4f", cached['a_star'])
                return cached['a_star']
        oracle = self.backbone.pretrain_f(list(split.train) + list(revealed), self.cfg.f_train_config())
        accs = {j: self._slice_accuracy(oracle, split, ids) for j, ids in sorted(slices.items())}
        a_star = float(np.mean(list(accs.values())))
        store.write_json(path, {'digest': digest, 'a_star': a_star,
                                'acc_per_classset': {str(j): v for j, v in accs.items()}})
        return a_star

    def sweep_k(self):
        """run_osc for every K in k_values, sharing the split and f"""
        cfg = self.cfg
        with capture_warnings() as warnings:
            prepared = self.prepare('osc')
            rows = []
            for k in cfg.k_values:
                sub = ExperimentService(cfg.with_overrides(K=k, output_dir=os.path.join(cfg.output_dir, f'K_{k}')))
                report = sub.run_osc(prepared)
                rows.append({'K': k, **report.averages, 'purity': report.extra.get('purity')})
            store.write_csv(self.layout.path('reports', 'k_sweep.csv'), K_SWEEP_COLUMNS, rows)
            extra = self._run_extra(prepared.split, 'sweep')
            extra['k_sweep'] = rows
        report = RunReport(windows=[], averages={}, extra={**extra, 'warnings': list(warnings)})
        store.write_text(self.layout.path('reports', 'report.json'), report.to_json())
        return report
