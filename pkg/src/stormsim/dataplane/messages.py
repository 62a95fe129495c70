# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Wire format of write-based RPC messages.

Every message starts with a 16-byte header followed by an opaque payload.
The header identifies the sending coroutine so that replies can be matched,
and carries a memory address used by replies to let clients cache object
locations.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from enum import IntEnum

_HEADER = struct.Struct('<BBBBBBHII')
HEADER_BYTES = _HEADER.size
"""Size of :class:`RpcHeader` on the wire."""
DEFAULT_MESSAGE_BYTES = 128
MAX_NODES = 256
"""Node ids travel in one header byte."""


class RpcOpcode(IntEnum):
    READ = 1
    LOCK_READ = 2
    UPDATE_UNLOCK = 3
    UNLOCK = 4
    INSERT = 5
    DELETE = 6
    REPLY = 7


class ReplyStatus(IntEnum):
    OK = 0
    NOT_FOUND = 1
    LOCK_BUSY = 2
    EXISTS = 3
    NO_HANDLER = 4
    INVALID = 5


@dataclass(frozen=True, slots=True)
class RpcHeader:
    sender_node: int
    thread_id: int
    coroutine_id: int
    opcode: RpcOpcode
    object_id: int
    request_id: int
    status: ReplyStatus = ReplyStatus.OK
    region_id: int = 0
    offset: int = 0


@dataclass(frozen=True, slots=True)
class RpcMessage:
    header: RpcHeader
    payload: bytes = b''

    @property
    def size(self) -> int:
        return HEADER_BYTES + len(self.payload)

    @property
    def ok(self) -> bool:
        return self.header.status is ReplyStatus.OK

    def encode(self) -> bytes:
        h = self.header
        try:
            packed = _HEADER.pack(
                h.sender_node,
                h.thread_id,
                h.coroutine_id,
                h.opcode,
                h.status,
                h.object_id,
                h.region_id,
                h.request_id,
                h.offset,
            )
        except struct.error as err:
            raise ValueError(f"Header field out of range: {h}") from err
        return packed + self.payload

    @classmethod
    def decode(cls, data: bytes) -> RpcMessage:
        if len(data) < HEADER_BYTES:
            raise ValueError(f"Message of {len(data)} bytes is shorter than a header.")
        node, thread, coroutine, opcode, status, obj, region, request, offset = (
            _HEADER.unpack_from(data)
        )
        header = RpcHeader(
            sender_node=node,
            thread_id=thread,
            coroutine_id=coroutine,
            opcode=RpcOpcode(opcode),
            object_id=obj,
            request_id=request,
            status=ReplyStatus(status),
            region_id=region,
            offset=offset,
        )
        return cls(header, bytes(data[HEADER_BYTES:]))


@dataclass(frozen=True, slots=True)
class RpcReply:
    """What a data-structure handler returns for one request."""

    status: ReplyStatus = ReplyStatus.OK
    payload: bytes = b''
    region_id: int = 0
    offset: int = 0

    def to_message(self, request: RpcHeader, sender_node: int) -> RpcMessage:
        header = replace(
            request,
            sender_node=sender_node,
            opcode=RpcOpcode.REPLY,
            status=self.status,
            region_id=self.region_id,
            offset=self.offset,
        )
        return RpcMessage(header, self.payload)
