"""Sliding-window feature extraction, atomic detection and complex event rules."""

from __future__ import annotations

from .analysis import ATOMIC_ADDRESS, COMPLEX_ADDRESS, AnalysisVerticle, Analyzer, event_from_envelope
from .engine import DEFAULT_K, CEPEngine, ComplexEvent, Fact, FactWindow, Matcher
from .features import (
    AtomicEvent,
    Correlation,
    CorrelationVector,
    Detector,
    FeatureExtractor,
    FeatureVector,
    LengthMismatch,
    StatisticalDetector,
    TooFewSamples,
    VicinityConfig,
    detect_atomic,
    divergence_score,
    pearson,
    temporal_params,
)
from .rules import Rule, RuleSyntaxError, format_rule, load_rules, parse_rule, parse_rules

__all__ = [
    "ATOMIC_ADDRESS", "COMPLEX_ADDRESS", "AnalysisVerticle", "Analyzer", "event_from_envelope",
    "DEFAULT_K", "CEPEngine", "ComplexEvent", "Fact", "FactWindow", "Matcher",
    "AtomicEvent", "Correlation", "CorrelationVector", "Detector", "FeatureExtractor", "FeatureVector",
    "LengthMismatch", "StatisticalDetector", "TooFewSamples", "VicinityConfig", "detect_atomic",
    "divergence_score", "pearson", "temporal_params",
    "Rule", "RuleSyntaxError", "format_rule", "load_rules", "parse_rule", "parse_rules",
]
