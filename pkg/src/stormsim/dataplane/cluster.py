# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""A cluster of nodes running the dataplane over a shared fabric."""

from __future__ import annotations

from collections.abc import Callable, Iterator, Sequence

from ..engine import Engine, RunStats, SimTime
from ..logging import get_logger
from ..nic import NicConfig
from ..verbs import Fabric, Transport, sibling_connection_count
from .callbacks import DataStructureCallbacks
from .core import Dataplane, DataplaneConfig, DataplaneStats, DataplaneThread
from .messages import MAX_NODES


def connect_siblings(fabric: Fabric, dataplanes: Sequence[Dataplane]) -> None:
    """Connect thread ``j`` of every node to thread ``j`` of every node.

    Each pair of sibling threads gets two RC connections, one per direction,
    including a loopback pair on the local node.
    """
    threads = {len(d.threads) for d in dataplanes}
    if len(threads) != 1:
        raise ValueError("All nodes must run the same number of threads.")
    for j in range(threads.pop()):
        for client in dataplanes:
            for server in dataplanes:
                a = client.threads[j]
                b = server.threads[j]
                qa = fabric.create_qp(a.node, Transport.RC, a.send_cq, a.recv_cq)
                qb = fabric.create_qp(b.node, Transport.RC, b.send_cq, b.recv_cq)
                fabric.connect(qa, qb)
                a.attach_client(server.node_id, qa, b.region.region_id)
                b.attach_server(client.node_id, qb, a.region.region_id)


class StormCluster:
    """Nodes, fabric and per-node dataplanes driven by one engine.

    Parameters
    ----------
    engine:
        Event engine driving the simulation.
    nic_config:
        NIC model of every node.
    n_nodes:
        Number of nodes.
    config:
        Thread and coroutine layout shared by all nodes.
    """

    def __init__(
        self,
        engine: Engine,
        nic_config: NicConfig,
        n_nodes: int,
        config: DataplaneConfig | None = None,
    ) -> None:
        if not 1 <= n_nodes <= MAX_NODES:
            raise ValueError(f"n_nodes must lie in [1, {MAX_NODES}].")
        self.engine = engine
        self.config = config or DataplaneConfig()
        self.fabric = Fabric(engine, nic_config)
        nodes = [self.fabric.add_node() for _ in range(n_nodes)]
        self.dataplanes = [
            Dataplane(self.fabric, node, self.config, n_nodes) for node in nodes
        ]
        connect_siblings(self.fabric, self.dataplanes)
        get_logger().info(
            "Built cluster of %d nodes with %d threads and %d connections per node",
            n_nodes,
            self.config.threads_per_node,
            sibling_connection_count(n_nodes, self.config.threads_per_node),
        )

    @property
    def n_nodes(self) -> int:
        return len(self.dataplanes)

    @property
    def nic_config(self) -> NicConfig:
        return self.fabric.config

    def threads(self) -> Iterator[DataplaneThread]:
        for dataplane in self.dataplanes:
            yield from dataplane.threads

    def register_handler(
        self, object_id: int, factory: Callable[[Dataplane], DataStructureCallbacks]
    ) -> list[DataStructureCallbacks]:
        """Register callbacks built by ``factory`` for ``object_id`` on every node."""
        callbacks = []
        for dataplane in self.dataplanes:
            cb = factory(dataplane)
            dataplane.register_handler(object_id, cb)
            callbacks.append(cb)
        return callbacks

    def run(self, limit: SimTime | None = None) -> RunStats:
        return self.engine.run_until(limit)

    @property
    def stats(self) -> DataplaneStats:
        total = DataplaneStats()
        for dataplane in self.dataplanes:
            total.merge(dataplane.stats)
        return total
