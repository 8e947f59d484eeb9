"""DeepInspector: sampled pcap inspection, alerting and rule generation.

The daemon receives pcap paths over a local stream socket, classifies
every flow with the traffic model, and for each webshell-classified
flow emits an EVE-style alert plus a block rule for the source IP.
"""

from wsdetect.inspector.config import InspectorConfig, load_config
from wsdetect.inspector.pipeline import (
    Alert,
    Blacklist,
    GeneratedRule,
    InspectionResult,
    StubPredictor,
    emit_eve,
    inspect_pcap,
    parse_rule_line,
    write_rules,
)
from wsdetect.inspector.sampling import SamplingWindow, schedule
from wsdetect.inspector.daemon import InspectorDaemon, serve

__all__ = [
    "Alert",
    "Blacklist",
    "GeneratedRule",
    "InspectionResult",
    "InspectorConfig",
    "InspectorDaemon",
    "SamplingWindow",
    "StubPredictor",
    "emit_eve",
    "inspect_pcap",
    "load_config",
    "parse_rule_line",
    "schedule",
    "serve",
    "write_rules",
]
