"""Error hierarchy, stage tagging and warning records."""
import logging
from contextlib import contextmanager
from contextvars import ContextVar

logger = logging.getLogger(__name__)


class S2oscError(ValueError):
    """Root of every error raised by the library"""

class FormatError(S2oscError):
    pass

class ConsistencyError(S2oscError):
    pass

class ProtocolError(S2oscError):
    pass

class PreconditionError(S2oscError):
    pass

class DegenerateTaskError(S2oscError):
    pass

class InputError(S2oscError):
    pass

class ParameterError(S2oscError):
    pass

class MissingClassError(S2oscError):
    pass

class StateError(S2oscError):
    pass

class ContractError(S2oscError):
    pass

class InfeasibleError(S2oscError):
    pass

class UndefinedMetricError(S2oscError):
    pass

class InternalInvariantError(S2oscError):
    pass

class ConfigError(S2oscError):
    pass


class StageError(S2oscError):
    """A failure inside a named experiment stage"""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause

    def to_dict(self):
        return {
            'stage': self.stage,
            'error': type(self.cause).__name__,
            'message': str(self.cause),
        }


@contextmanager
def stage(name):
    """Tag any exception raised in the block with the stage name"""
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        logger.error("stage %s failed: %s", name, e)
        raise StageError(name, e) from e


_collector = ContextVar('s2osc_warning_collector', default=None)


def record_warning(stage_name, message, **fields):
    """Emit a warning record: logged, and kept by the active collector if any"""
    logger.warning("[%s] %s %s", stage_name, message, fields if fields else '')
    records = _collector.get()
    if records is not None:
        records.append({'stage': stage_name, 'message': message, **fields})


@contextmanager
def capture_warnings():
    """Collect warning records emitted inside the block"""
    records = []
    token = _collector.set(records)
    try:
        yield records
    finally:
        _collector.reset(token)
