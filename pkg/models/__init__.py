# models/__init__.py
from .configuration import Configuration, canonicalize
from .accuracy_table import AccuracyTable, pooled_accuracy, run_variance
from .problem import Problem, KnowledgePoint, LeakageVerdict, KP_STATUSES, FINAL_KP_STATUSES
from .rollout import RolloutRecord, EvaluationRequest
from .selection import SelectionOutcome, PhiParams, CssPartition, ConsensusReport, STRATEGIES
from .world import SyntheticWorld
from .analysis import ParadoxReport, BucketReport
