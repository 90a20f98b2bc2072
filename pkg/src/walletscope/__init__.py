"""Wallet contract analysis for Ethereum: skeletons, interfaces, blueprints,
trace patterns, call graphs and corpus statistics."""

from __future__ import annotations

__version__ = "0.1.0"

from .blueprint import (
    Blueprint,
    Classification,
    RuleSet,
    SignatureRule,
    TraceContext,
    TracePatternKind,
    WalletType,
    classify,
    derive_idiosyncratic_set,
    load_blueprints,
    match_interface,
)
from .evm import Bytecode, Source, detect_solc, disassemble, keccak256, locate_metadata
from .graph import CallGraph, build_call_graph, connected_components, remove_and_recompute
from .interface import InterfaceSet, Selector, extract_interface, selector_of
from .skeleton import Skeleton, skeleton_hash, skeletonize
from .store import Store
from .trace import Message, MessageKind, Registry, UsageBucket, ingest_traces, match_trace_patterns

__all__ = [
    "Blueprint", "Bytecode", "CallGraph", "Classification", "InterfaceSet", "Message",
    "MessageKind", "Registry", "RuleSet", "Selector", "SignatureRule", "Skeleton", "Source",
    "Store", "TraceContext", "TracePatternKind", "UsageBucket", "WalletType",
    "build_call_graph", "classify", "connected_components", "derive_idiosyncratic_set",
    "detect_solc", "disassemble", "extract_interface", "ingest_traces", "keccak256",
    "load_blueprints", "locate_metadata", "match_interface", "match_trace_patterns",
    "remove_and_recompute", "selector_of", "skeleton_hash", "skeletonize",
]
