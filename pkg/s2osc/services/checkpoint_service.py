"""Self-describing binary checkpoints: JSON header plus little-endian float32 payload."""
import json
import logging
import struct

import numpy as np
import torch

from s2osc.agents.backbone import ModelHandle, build_network
from s2osc.errors import FormatError
from s2osc.models.class_centers import ClassCenters

logger = logging.getLogger(__name__)

MAGIC = b'S2OSCCKP'
VERSION = 1


def save_checkpoint(path, model, centers=None):
    """Write model parameters (and optional class centers) to one container file"""
    state = model.network.state_dict()
    names = sorted(state)
    header = {
        'arch': model.arch,
        'arch_kwargs': model.arch_kwargs,
        'input_shape': list(model.input_shape),
        'n_classes': model.n_classes,
        'class_ids': model.class_ids,
        'tensors': [{'name': n, 'shape': list(state[n].shape)} for n in names],
        'centers': None,
    }
    if centers is not None:
        header['centers'] = {
            'class_ids': centers.class_ids,
            'dim': centers.dim,
            'source_model': centers.source_model,
        }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as fh:
        fh.write(MAGIC)
        fh.write(struct.pack('<II', VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for n in names:
            fh.write(state[n].detach().cpu().numpy().astype('<f4').tobytes())
        if centers is not None:
            fh.write(centers.matrix().astype('<f4').tobytes())
    logger.debug("saved checkpoint %s (%s)", path, model.arch)
    return path


def load_checkpoint(path):
    """Returns (ModelHandle, ClassCenters or None)"""
    with open(path, 'rb') as fh:
        raw = fh.read()
    if raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    offset = len(MAGIC)
    version, header_len = struct.unpack('<II', raw[offset:offset + 8])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    offset += 8
    header = json.loads(raw[offset:offset + header_len].decode('utf-8'))
    offset += header_len

    network = build_network(header['arch'], tuple(header['input_shape']), header['n_classes'],
                            **header['arch_kwargs'])
    state = {}
    for spec in header['tensors']:
        count = int(np.prod(spec['shape'])) if spec['shape'] else 1
        values = np.frombuffer(raw, dtype='<f4', count=count, offset=offset)
        state[spec['name']] = torch.from_numpy(values.astype(np.float32).reshape(spec['shape']))
        offset += count * 4
    network.load_state_dict(state)
    network.eval()
    model = ModelHandle(network, header['class_ids'], header['arch'], header['input_shape'],
                        header['arch_kwargs'])

    centers = None
    if header.get('centers'):
        info = header['centers']
        n, dim = len(info['class_ids']), info['dim']
        matrix = np.frombuffer(raw, dtype='<f4', count=n * dim, offset=offset).reshape(n, dim)
        offset += n * dim * 4
        centers = ClassCenters(dict(zip(info['class_ids'], matrix.astype(np.float64))),
                               source_model=info.get('source_model'))
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return model, centers
