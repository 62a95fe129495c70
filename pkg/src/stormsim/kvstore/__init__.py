# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Hash table with inlined metadata and the allocators backing it."""

from .allocator import DEFAULT_CHUNK_BYTES, Chunk, ContiguousAllocator, NaiveAllocator
from .hashtable import (
    AddressCache,
    DistributedHashTable,
    HashTableCallbacks,
    JournalEntry,
    SlotView,
    TablePartition,
    check_value_fits,
    configure_table,
)
from .layout import (
    DEFAULT_VALUE_BYTES,
    EMPTY_KEY,
    LINK_BYTES,
    MAX_LINK_OFFSET,
    NIL,
    SLOT_HEADER_BYTES,
    Link,
    SlotHeader,
    TableLayout,
    home_of,
    mix64,
    table_size,
)

__all__ = [
    'DEFAULT_CHUNK_BYTES',
    'DEFAULT_VALUE_BYTES',
    'EMPTY_KEY',
    'LINK_BYTES',
    'MAX_LINK_OFFSET',
    'NIL',
    'SLOT_HEADER_BYTES',
    'AddressCache',
    'Chunk',
    'ContiguousAllocator',
    'DistributedHashTable',
    'HashTableCallbacks',
    'JournalEntry',
    'Link',
    'NaiveAllocator',
    'SlotHeader',
    'SlotView',
    'TableLayout',
    'TablePartition',
    'check_value_fits',
    'configure_table',
    'home_of',
    'mix64',
    'table_size',
]
