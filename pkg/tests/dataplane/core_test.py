# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
from collections.abc import Generator
from typing import Any

import pytest

from stormsim.dataplane import (
    NO_GUESS,
    BufferLayout,
    CoroutineContext,
    CoroutineState,
    DataplaneConfig,
    DataStructureCallbacks,
    Fetched,
    HandlerRegistry,
    ReadPath,
    RemoteAccessError,
    ReplyStatus,
    RpcMessage,
    RpcOpcode,
    RpcReply,
    StormCluster,
)
from stormsim.engine import Engine
from stormsim.nic import load_preset
from stormsim.verbs import Status, sibling_connection_count


class Echo(DataStructureCallbacks):
    """Replies with the reversed payload and never guesses addresses."""

    def rpc_handler(self, message: RpcMessage) -> RpcReply:
        return RpcReply(ReplyStatus.OK, message.payload[::-1])

    def lookup_start(self, object_id: int, key: int) -> tuple[int, int]:
        return NO_GUESS, 0

    def lookup_end(self, buffer: Fetched, key: int) -> bool:
        return buffer.via_rpc

    def home_node(self, key: int) -> int:
        return key % 2

    def read_size(self, object_id: int) -> int:
        return 64


@pytest.fixture
def cluster() -> StormCluster:
    config = DataplaneConfig(threads_per_node=2, coroutines_per_thread=4)
    cluster = StormCluster(Engine(), load_preset('cx4ib'), 2, config)
    cluster.register_handler(3, lambda _: Echo())
    return cluster


def run(cluster: StormCluster, body: Any, node: int = 0) -> Any:
    coroutine = cluster.dataplanes[node].threads[0].spawn(body)
    cluster.run()
    assert coroutine.state is CoroutineState.DONE
    return coroutine.result


def test_rpc_round_trip(cluster: StormCluster) -> None:
    def body(ctx: CoroutineContext) -> Generator[Any, Any, Any]:
        reply = yield from ctx.rpc_send(1, RpcOpcode.READ, 3, b'abc')
        return reply, ctx.n_rpcs, ctx.take_breakdown(), ctx.now

    reply, n_rpcs, breakdown, finished_at = run(cluster, body)
    assert reply.payload == b'cba'
    assert reply.header.opcode is RpcOpcode.REPLY
    assert reply.header.sender_node == 1
    assert n_rpcs == 1
    assert 0 < breakdown.total <= finished_at
    assert cluster.stats.rpcs_handled == 1
    assert cluster.stats.rpcs_issued[RpcOpcode.READ] == 1


def test_rpc_to_unknown_object_gets_no_handler(cluster: StormCluster) -> None:
    def body(ctx: CoroutineContext) -> Generator[Any, Any, Any]:
        reply = yield from ctx.rpc_send(1, RpcOpcode.READ, 9)
        return reply.header.status

    assert run(cluster, body) is ReplyStatus.NO_HANDLER


def test_remote_read_returns_remote_bytes(cluster: StormCluster) -> None:
    node = cluster.fabric.nodes[1]
    region = cluster.fabric.register_region(node, 4096)
    node.write(region.region_id, 100, b'storm')

    def body(ctx: CoroutineContext) -> Generator[Any, Any, Any]:
        fetched = yield from ctx.remote_read(region.region_id, 100, 5)
        return fetched

    fetched = run(cluster, body)
    assert fetched.data == b'storm'
    assert not fetched.via_rpc
    assert cluster.stats.direct_reads == 1
    assert cluster.stats.reads_issued == 0


def test_failed_read_raises_inside_coroutine(cluster: StormCluster) -> None:
    region = cluster.fabric.register_region(cluster.fabric.nodes[1], 4096)

    def body(ctx: CoroutineContext) -> Generator[Any, Any, Any]:
        try:
            yield from ctx.remote_read(region.region_id, 4090, 64)
        except RemoteAccessError as err:
            return err.status
        return None

    assert run(cluster, body) is Status.PROTECTION_ERROR


def test_read_larger_than_buffer_raises(cluster: StormCluster) -> None:
    def body(ctx: CoroutineContext) -> Generator[Any, Any, Any]:
        yield from ctx.remote_read(0, 0, 4096)

    cluster.dataplanes[0].threads[0].spawn(body)
    with pytest.raises(ValueError, match='read buffer'):
        cluster.run()


def test_lookup_without_guess_goes_straight_to_rpc(cluster: StormCluster) -> None:
    def body(ctx: CoroutineContext) -> Generator[Any, Any, Any]:
        return (yield from ctx.process_read_set_item(3, key=5))

    buffer, path = run(cluster, body)
    assert path is ReadPath.RPC_ONLY
    assert buffer.via_rpc
    assert buffer.data == (5).to_bytes(8, 'little')[::-1]
    stats = cluster.stats
    assert stats.lookup_rpcs == 1
    assert stats.accounting_errors() == []


class StaleGuess(Echo):
    """Guesses an address that runs past the end of its region."""

    def __init__(self, region_id: int) -> None:
        self.region_id = region_id

    def lookup_start(self, object_id: int, key: int) -> tuple[int, int]:
        return self.region_id, 4090


def test_out_of_range_guess_falls_back_to_rpc(cluster: StormCluster) -> None:
    region = cluster.fabric.register_region(cluster.fabric.nodes[1], 4096)
    cluster.register_handler(4, lambda _: StaleGuess(region.region_id))

    def body(ctx: CoroutineContext) -> Generator[Any, Any, Any]:
        return (yield from ctx.process_read_set_item(4, key=1))

    buffer, path = run(cluster, body)
    assert path is ReadPath.READ_THEN_RPC
    assert buffer.via_rpc
    stats = cluster.stats
    assert (stats.reads_issued, stats.lookup_rpcs) == (1, 1)
    assert stats.accounting_errors() == []


def test_accounting_errors_report_mismatches(cluster: StormCluster) -> None:
    stats = cluster.stats
    stats.lookup_rpcs = 2
    stats.reads_issued = 1
    assert len(stats.accounting_errors()) == 2


def test_concurrent_coroutines_share_a_thread(cluster: StormCluster) -> None:
    thread = cluster.dataplanes[0].threads[1]
    done = []

    def body(ctx: CoroutineContext) -> Generator[Any, Any, Any]:
        reply = yield from ctx.rpc_send(1, RpcOpcode.READ, 3, bytes([ctx.coroutine_id]))
        return reply.payload

    for _ in range(4):
        thread.spawn(body, on_done=lambda c: done.append((c.id, c.result)))
    assert thread.active_coroutines == 4
    with pytest.raises(RuntimeError, match='coroutine slots'):
        thread.spawn(body)
    cluster.run()
    assert sorted(done) == [(i, bytes([i])) for i in range(4)]
    assert thread.active_coroutines == 0
    assert thread.stats.max_inflight_per_target == 4


def test_cluster_connects_every_sibling_pair() -> None:
    config = DataplaneConfig(threads_per_node=2, coroutines_per_thread=1)
    cluster = StormCluster(Engine(), load_preset('cx5'), 3, config)
    for node in cluster.fabric.nodes:
        assert len(node.qps) == sibling_connection_count(3, 2) == 12
    assert len(list(cluster.threads())) == 6


@pytest.mark.parametrize('n_nodes', [0, 257])
def test_cluster_size_fits_header_node_ids(n_nodes: int) -> None:
    with pytest.raises(ValueError, match=r'n_nodes must lie in \[1, 256\]'):
        StormCluster(Engine(), load_preset('cx5'), n_nodes)


def test_handler_registry_accepts_each_object_once() -> None:
    registry = HandlerRegistry()
    registry[0] = Echo()
    with pytest.raises(KeyError, match='already has a registered handler'):
        registry[0] = Echo()
    with pytest.raises(ValueError, match='one byte'):
        registry[256] = Echo()
    del registry[0]
    assert len(registry) == 0


@pytest.mark.parametrize(
    ('kwargs', 'message'),
    [
        ({'threads_per_node': 0}, 'threads_per_node'),
        ({'coroutines_per_thread': 256}, 'coroutines_per_thread'),
        ({'rr_fallback_after': 0}, 'rr_fallback_after'),
        ({'message_bytes': 16}, 'header'),
        ({'read_buffer_bytes': 0}, 'read_buffer_bytes'),
    ],
)
def test_invalid_dataplane_config_raises(kwargs: dict[str, int], message: str) -> None:
    with pytest.raises(ValueError, match=message):
        DataplaneConfig(**kwargs)


def test_buffer_layout_areas_do_not_overlap() -> None:
    layout = BufferLayout(n_nodes=3, slots=4, message_bytes=128, read_bytes=1024)
    matrix = 3 * 4 * 128
    assert layout.request_in(2, 3) + 128 == matrix == layout.reply_in(0, 0)
    assert layout.reply_in(2, 3) + 128 == layout.reply_out(0, 0)
    assert layout.reply_out(2, 3) + 128 == layout.request_out(0)
    assert layout.request_out(3) + 128 == layout.read(0)
    assert layout.total == layout.read(3) + 1024
