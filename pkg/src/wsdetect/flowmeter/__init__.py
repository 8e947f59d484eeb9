"""PCAP ingestion, bidirectional flow assembly and flow feature extraction.

The feature set is CICFlowMeter-compatible: 83 named fields per flow of
which 79 feed the traffic model (Dst Port and Protocol as categoricals,
77 continuous including the epoch timestamp)."""

from wsdetect.flowmeter.pcapfile import PacketMeta, PcapError, PcapResult, read_pcap
from wsdetect.flowmeter.flows import Flow, assemble_flows
from wsdetect.flowmeter.features import (
    CATEGORICAL_NAMES,
    CONTINUOUS_NAMES,
    CSV_COLUMNS,
    FeatureRecord,
    compute_features,
    continuous_vector,
    label_to_class,
    model_inputs,
)
from wsdetect.flowmeter.fio import CsvReadResult, read_csv, write_csv, write_jsonl

__all__ = [
    "CATEGORICAL_NAMES",
    "CONTINUOUS_NAMES",
    "CSV_COLUMNS",
    "CsvReadResult",
    "Flow",
    "FeatureRecord",
    "PacketMeta",
    "PcapError",
    "PcapResult",
    "assemble_flows",
    "compute_features",
    "continuous_vector",
    "label_to_class",
    "model_inputs",
    "read_csv",
    "read_pcap",
    "write_csv",
    "write_jsonl",
]
