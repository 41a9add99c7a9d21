#!/usr/bin/env python3
"""Spawnable loopback stack for frontend e2e tests.

Starts a master stub, a bridge node with the websocket bridge and a tf tree,
and a counter node that subscribes /cmd_vel and republishes per-message
digests on /cmd_vel_echo (so websocket clients can observe delivery without
touching Python internals). Prints one JSON line with the endpoints, then
serves until stdin closes.
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[3] / "src"))

from rosmini.bridge import serve_bridge  # noqa: E402
from rosmini.kinematics import FrameTree, Transform  # noqa: E402
from rosmini.node import NodeConfig, start_node  # noqa: E402
from rosmini.testing import MasterStub  # noqa: E402


def main() -> None:
    master = MasterStub().start()

    def mk(name):
        return start_node(NodeConfig(
            node_name=name, master_uri=master.uri,
            advertised_host="127.0.0.1", bind_address="127.0.0.1",
        ))

    bridge_node = mk("/bridge_node")
    counter_node = mk("/counter")

    tf = FrameTree()
    tf.set_transform("base_link", "map", Transform((1.0, 2.0, 0.0), (0.0, 0.0, 0.0, 1.0)))
    tf.set_transform("laser", "base_link", Transform((0.0, 0.5, 0.0), (0.0, 0.0, 0.0, 1.0)))

    echo_pub = counter_node.advertise("/cmd_vel_echo", "geometry_msgs/Twist")

    def on_twist(value, link):
        echo_pub.publish(value)

    counter_node.subscribe("/cmd_vel", "geometry_msgs/Twist", on_twist, queue_size=2000)

    bridge = serve_bridge(bridge_node, tf_tree=tf)
    print(json.dumps({"ws": bridge.url, "master": master.uri}), flush=True)

    try:
        sys.stdin.read()  # parent closes stdin (or dies) to stop us
    except KeyboardInterrupt:
        pass
    finally:
        bridge.close()
        counter_node.shutdown()
        bridge_node.shutdown()
        master.close()


if __name__ == "__main__":
    main()
