# SPDX-License-Identifier: Apache-2.0
"""Federated fine-tuning with stacked low-rank adapters."""

from ._flora import (
    ConfigError,
    Config,
    LoraAdapter,
    Report,
    UnsupportedRanksError,
    adapter_delta,
    aggregate_fedit,
    aggregate_flora,
    aggregate_zero_padding,
    build_config,
    compare,
    fedit_noise,
    init_adapter,
    merge,
    oracle_delta,
    parse_settings,
    preset_names,
    run,
    scale_adapter,
    shuffled_stack,
    split_rank1,
    stack_adapters,
    trainable_fraction,
    verify,
)

__all__ = [
    "ConfigError",
    "Config",
    "LoraAdapter",
    "Report",
    "UnsupportedRanksError",
    "adapter_delta",
    "aggregate_fedit",
    "aggregate_flora",
    "aggregate_zero_padding",
    "build_config",
    "compare",
    "fedit_noise",
    "init_adapter",
    "merge",
    "oracle_delta",
    "parse_settings",
    "preset_names",
    "run",
    "scale_adapter",
    "shuffled_stack",
    "split_rank1",
    "stack_adapters",
    "trainable_fraction",
    "verify",
]
