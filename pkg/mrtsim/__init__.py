__version__ = "0.1.0"

from .audit import AuditReport, corrupt, run_audit
from .estimator import EffectEstimate, EffectSpec, estimate, moderation_report, replicate, sensitivity_compare
from .eventlog import EventLog, read_event_log
from .pipeline import AnalysisRow, build_rows, build_variant
from .scenario import FaultKind, FaultSpec, ScenarioConfig, load_scenario
from .sim import GroundTruthLedger, World, inject_fault, run
from .sync import SyncStrategy
