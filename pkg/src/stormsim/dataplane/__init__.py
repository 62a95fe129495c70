# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Storm dataplane: write-based RPCs, one-sided lookups and coroutine threads."""

from .callbacks import (
    NO_GUESS,
    DataStructureCallbacks,
    Fetched,
    HandlerRegistry,
    LookupMode,
    ReadPath,
)
from .cluster import StormCluster, connect_siblings
from .core import (
    BufferLayout,
    Coroutine,
    CoroutineContext,
    CoroutineState,
    Dataplane,
    DataplaneConfig,
    DataplaneStats,
    DataplaneThread,
    RemoteAccessError,
)
from .messages import (
    DEFAULT_MESSAGE_BYTES,
    HEADER_BYTES,
    MAX_NODES,
    ReplyStatus,
    RpcHeader,
    RpcMessage,
    RpcOpcode,
    RpcReply,
)

__all__ = [
    'DEFAULT_MESSAGE_BYTES',
    'HEADER_BYTES',
    'MAX_NODES',
    'NO_GUESS',
    'BufferLayout',
    'Coroutine',
    'CoroutineContext',
    'CoroutineState',
    'DataStructureCallbacks',
    'Dataplane',
    'DataplaneConfig',
    'DataplaneStats',
    'DataplaneThread',
    'Fetched',
    'HandlerRegistry',
    'LookupMode',
    'ReadPath',
    'RemoteAccessError',
    'ReplyStatus',
    'RpcHeader',
    'RpcMessage',
    'RpcOpcode',
    'RpcReply',
    'StormCluster',
    'connect_siblings',
]
