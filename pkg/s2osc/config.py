import os
import random
import logging

import numpy as np
import torch


class Config:
    LOG_LEVEL = os.environ.get('S2OSC_LOG_LEVEL', 'INFO')
    NUM_THREADS = int(os.environ.get('S2OSC_NUM_THREADS', '1'))
    PROGRESS = os.environ.get('S2OSC_PROGRESS', '1') not in ('0', 'false', 'False')
    OUTPUT_ROOT = os.environ.get('S2OSC_OUTPUT_ROOT', 'runs')
    DEBUG = False
    TESTING = False

class DevelopmentConfig(Config):
    DEBUG = True
    LOG_LEVEL = os.environ.get('S2OSC_LOG_LEVEL', 'DEBUG')

class ProductionConfig(Config):
    DEBUG = False

class TestingConfig(Config):
    TESTING = True
    PROGRESS = False
    LOG_LEVEL = os.environ.get('S2OSC_LOG_LEVEL', 'WARNING')

# Configuration dictionary
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': ProductionConfig
}

def get_config():
    """Returns the appropriate configuration based on environment"""
    env = os.environ.get('S2OSC_ENV', 'default')
    return config.get(env, config['default'])


def configure_logging(level=None):
    """Install a single stream handler on the root logger"""
    level = level or get_config().LOG_LEVEL
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        force=True,
    )


def seed_everything(seed):
    """Seed every RNG and pin torch to deterministic single-process kernels"""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    torch.set_num_threads(get_config().NUM_THREADS)
    torch.use_deterministic_algorithms(True)
