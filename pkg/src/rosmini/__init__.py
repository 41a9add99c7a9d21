"""rosmini: a self-contained ROS 1 client stack.

Message definition parsing with conformant md5 hashing, the TCPROS
transport, the XML-RPC graph APIs, URDF/TF kinematics, an asset loader
service, and a websocket JSON bridge for browser consoles.
"""

__version__ = "0.1.0"
