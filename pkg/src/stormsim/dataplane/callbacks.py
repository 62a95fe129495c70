# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Interface between the dataplane and remote data structures."""

from __future__ import annotations

import struct
from abc import ABC, abstractmethod
from collections.abc import Iterator, MutableMapping
from dataclasses import dataclass
from enum import Enum, auto

from .messages import ReplyStatus, RpcMessage, RpcReply

NO_GUESS = -1
"""Region id returned by ``lookup_start`` when it cannot guess an address."""


class LookupMode(Enum):
    """How read-set items are fetched."""

    STORM = auto()
    """One-sided read of the guessed address, RPC if that fails."""
    RPC_ONLY = auto()
    """Every lookup is an RPC."""
    PERFECT = auto()
    """Clients know every address, all lookups are one-sided reads."""
    FARM = auto()
    """One read of a whole neighborhood of slots, scanned on the client."""


class ReadPath(Enum):
    READ_ONLY = auto()
    READ_THEN_RPC = auto()
    RPC_ONLY = auto()


@dataclass(frozen=True, slots=True)
class Fetched:
    """Bytes fetched for one lookup and where they came from.

    For one-sided reads ``data`` holds the raw remote memory. For RPCs it holds
    the reply payload, and the address is the one reported by the owner.
    """

    data: bytes
    region_id: int
    offset: int
    status: ReplyStatus = ReplyStatus.OK
    via_rpc: bool = False

    @classmethod
    def from_reply(cls, reply: RpcMessage) -> Fetched:
        return cls(
            data=reply.payload,
            region_id=reply.header.region_id,
            offset=reply.header.offset,
            status=reply.header.status,
            via_rpc=True,
        )


class DataStructureCallbacks(ABC):
    """Callbacks a remote data structure registers with the dataplane.

    ``rpc_handler`` runs on the node owning the data. ``lookup_start`` and
    ``lookup_end`` run on the client and own any client-side address cache.
    """

    @abstractmethod
    def rpc_handler(self, message: RpcMessage) -> RpcReply:
        """Execute a request against local memory."""

    @abstractmethod
    def lookup_start(self, object_id: int, key: int) -> tuple[int, int]:
        """Guess ``(region_id, offset)`` of ``key``, or return ``NO_GUESS``."""

    @abstractmethod
    def lookup_end(self, buffer: Fetched, key: int) -> bool:
        """Whether ``buffer`` holds a valid copy of ``key``."""

    @abstractmethod
    def home_node(self, key: int) -> int:
        """Node owning ``key``."""

    def read_size(self, object_id: int) -> int:
        """Bytes fetched by one one-sided lookup."""
        raise NotImplementedError

    def read_request(self, key: int) -> bytes:
        """Payload of the READ RPC used when one-sided reads fail."""
        return struct.pack('<Q', key)

    def next_guess(self, buffer: Fetched, key: int) -> tuple[int, int] | None:
        """Address to try next after ``buffer`` failed validation."""
        return None


class HandlerRegistry(MutableMapping[int, DataStructureCallbacks]):
    """Callbacks by object id. Object ids can only be registered once."""

    def __init__(self) -> None:
        self._handlers: dict[int, DataStructureCallbacks] = {}

    def __getitem__(self, key: int) -> DataStructureCallbacks:
        return self._handlers[key]

    def __setitem__(self, key: int, value: DataStructureCallbacks) -> None:
        if key in self._handlers:
            raise KeyError(f"Object {key} already has a registered handler.")
        if not 0 <= key < 256:
            raise ValueError(f"Object ids must fit in one byte, got {key}.")
        self._handlers[key] = value

    def __delitem__(self, key: int) -> None:
        del self._handlers[key]

    def __iter__(self) -> Iterator[int]:
        return iter(self._handlers)

    def __len__(self) -> int:
        return len(self._handlers)
