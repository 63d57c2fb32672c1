# This code is part of SwarmTune.
#
# (C) Copyright SwarmTune developers, 2026.
#
# This code is licensed under the Apache License, Version 2.0. You may
# obtain a copy of this license in the LICENSE.txt file in the root directory
# of this source tree or at http://www.apache.org/licenses/LICENSE-2.0.
#
# Any modifications or derivative works of this code must retain this
# copyright notice, and modified files need to carry a notice indicating
# that they have been altered from the originals.

"""Messages between the master and the flight agents, their JSON-lines wire
format, and two interchangeable ways of delivering them: an in-process bus
and one TCP connection per agent."""

import json
import logging
import queue
import socket
import threading
import time
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..config import DEFAULT_LISTEN, parse_address
from ..exceptions import (
    BarrierTimeoutError,
    MalformedLineError,
    TransportError,
    UnknownKindError,
)

logger = logging.getLogger(__name__)

_RECV_SIZE = 4096
_ACCEPT_POLL_S = 0.2


class _Message(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seq: int = Field(ge=0)
    mav_id: int = Field(ge=1)


class GainUpdate(_Message):
    kind: Literal["GAIN_UPDATE"] = "GAIN_UPDATE"
    k_p: float = Field(ge=0, le=1, allow_inf_nan=False)
    k_d: float = Field(ge=0, le=1, allow_inf_nan=False)


class StartFlight(_Message):
    kind: Literal["START_FLIGHT"] = "START_FLIGHT"
    primitive_id: int = Field(ge=0)


class CostReport(_Message):
    kind: Literal["COST_REPORT"] = "COST_REPORT"
    j: float = Field(ge=0, allow_inf_nan=False)


class StateNotify(_Message):
    kind: Literal["STATE_NOTIFY"] = "STATE_NOTIFY"
    state: Literal["IDLE", "FLYING", "OPTIMIZE"]


Message = Union[GainUpdate, StartFlight, CostReport, StateNotify]

MESSAGE_TYPES = {
    "GAIN_UPDATE": GainUpdate,
    "START_FLIGHT": StartFlight,
    "COST_REPORT": CostReport,
    "STATE_NOTIFY": StateNotify,
}


def encode(msg: Message) -> bytes:
    """Serializes a message to one LF-terminated UTF-8 JSON line.

    ``kind`` comes first, then ``seq``, ``mav_id`` and the payload fields.
    """
    data = {"kind": msg.kind, **msg.model_dump(exclude={"kind"})}
    return (json.dumps(data, separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


def decode(line: bytes) -> Message:
    """Parses one wire line back into a message.

    Parameters
    ----------
    line : bytes
        A single line, with or without its terminating LF.

    Raises
    ------
    MalformedLineError
        If the line is not a JSON object or does not match the schema of
        its kind. Carries the byte offset of the failure.
    UnknownKindError
        If ``kind`` names no known message.

    Returns
    -------
    Message
        The message.
    """
    if line.endswith(b"\n"):
        line = line[:-1]
    try:
        text = line.decode("utf-8")
    except UnicodeDecodeError as err:
        raise MalformedLineError(f"Invalid UTF-8: {err.reason}", err.start) from None

    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        offset = len(text[: err.pos].encode("utf-8"))
        raise MalformedLineError(f"Invalid JSON: {err.msg}", offset) from None

    if not isinstance(data, dict):
        raise MalformedLineError("Expected a JSON object")
    if "kind" not in data:
        raise MalformedLineError("Missing field 'kind'")
    model = MESSAGE_TYPES.get(data["kind"])
    if model is None:
        raise UnknownKindError(f"Unknown message kind {data['kind']!r}")

    try:
        return model.model_validate(data, strict=True)
    except ValidationError as err:
        first = err.errors()[0]
        where = ".".join(str(part) for part in first["loc"])
        raise MalformedLineError(f"{data['kind']}.{where}: {first['msg']}") from None


class LineDecoder:
    """Splits a byte stream into wire lines, keeping partial lines."""

    def __init__(self):
        self.__buffer = b""

    @property
    def pending(self) -> bytes:
        return self.__buffer

    def feed(self, data: bytes) -> List[Message]:
        lines = (self.__buffer + data).split(b"\n")
        self.__buffer = lines[-1]
        return [decode(line) for line in lines[:-1]]


class Collector:
    """Single ordered stream of everything the agents send to the master.

    Cost reports are kept per sequence number until ``wait_for_all``
    hands them out. The last STATE_NOTIFY of every MAV is kept in
    ``states``.
    """

    def __init__(self):
        self.__cond = threading.Condition()
        self.__reports: Dict[int, List[CostReport]] = {}
        self.__states: Dict[int, str] = {}
        self.__error: Optional[BaseException] = None

    @property
    def states(self) -> Dict[int, str]:
        with self.__cond:
            return dict(self.__states)

    def deliver(self, msg: Message):
        with self.__cond:
            if isinstance(msg, StateNotify):
                self.__states[msg.mav_id] = msg.state
            elif isinstance(msg, CostReport):
                self.__reports.setdefault(msg.seq, []).append(msg)
            else:
                logger.warning("Ignoring %s sent to the master", msg.kind)
            self.__cond.notify_all()

    def fail(self, error: BaseException):
        with self.__cond:
            if self.__error is None:
                self.__error = error
            self.__cond.notify_all()

    def __wait(self, ready, timeout: float, on_timeout):
        deadline = time.monotonic() + timeout
        while not ready():
            if self.__error is not None:
                raise TransportError(f"Link failure: {self.__error}") from self.__error
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise on_timeout()
            self.__cond.wait(remaining)

    def wait_for_all(
        self, seq: int, n: int, timeout: float, expected: Optional[Sequence[int]] = None
    ) -> List[CostReport]:
        """Blocks until ``n`` MAVs sent a COST_REPORT for ``seq``.

        Parameters
        ----------
        seq : int
            Sequence number of the slot.
        n : int
            Number of distinct reporting MAVs to wait for.
        timeout : float
            Real seconds to wait.
        expected : Sequence[int], optional
            Ids of the MAVs that owe a report, used to name the missing ones.

        Raises
        ------
        BarrierTimeoutError
            If the reports did not arrive in time.
        TransportError
            If a link failed while waiting.

        Returns
        -------
        List[CostReport]
            The reports of ``seq``, sorted by MAV id, in arrival order
            within a MAV.
        """

        def arrived():
            return {r.mav_id for r in self.__reports.get(seq, [])}

        def on_timeout():
            missing = sorted(set(expected or []) - arrived())
            return BarrierTimeoutError(
                f"Only {len(arrived())} of {n} reports for seq {seq} arrived", seq, missing
            )

        with self.__cond:
            self.__wait(lambda: len(arrived()) >= n, timeout, on_timeout)
            reports = self.__reports.pop(seq)
        return sorted(reports, key=lambda r: r.mav_id)

    def wait_for_agents(self, mav_ids: Sequence[int], timeout: float):
        """Blocks until every MAV in ``mav_ids`` has announced itself."""

        def on_timeout():
            missing = sorted(set(mav_ids) - set(self.__states))
            return TransportError(f"Agents {missing} never attached")

        with self.__cond:
            self.__wait(lambda: set(mav_ids) <= set(self.__states), timeout, on_timeout)


class AgentLink:
    """The agent's end of a channel: receive commands, send reports."""

    def send(self, msg: Message):
        raise NotImplementedError

    def receive(self, timeout: Optional[float] = None) -> Optional[Message]:
        """Returns the next message, or None once the master hung up."""
        raise NotImplementedError

    def fail(self, error: BaseException):
        """Reports an error the agent cannot recover from."""

    def close(self):
        pass


class _InProcLink(AgentLink):
    def __init__(self, inbox: "queue.Queue[Optional[Message]]", collector: Collector):
        self.__inbox = inbox
        self.__collector = collector

    def send(self, msg: Message):
        self.__collector.deliver(msg)

    def receive(self, timeout: Optional[float] = None) -> Optional[Message]:
        try:
            return self.__inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportError("Timed out waiting for the master") from None

    def fail(self, error: BaseException):
        self.__collector.fail(error)


class InProcPublisher:
    """Master side of the in-process bus, one FIFO inbox per agent."""

    mode = "inproc"

    def __init__(self, collector: Collector):
        self.__collector = collector
        self.__inboxes: Dict[int, "queue.Queue[Optional[Message]]"] = {}
        self.__lock = threading.Lock()

    def open_link(self, mav_id: int) -> AgentLink:
        with self.__lock:
            if mav_id in self.__inboxes:
                raise TransportError(f"MAV {mav_id} is already attached")
            inbox: "queue.Queue[Optional[Message]]" = queue.Queue()
            self.__inboxes[mav_id] = inbox
        return _InProcLink(inbox, self.__collector)

    def publish(self, msg: Message):
        with self.__lock:
            inbox = self.__inboxes.get(msg.mav_id)
        if inbox is None:
            raise TransportError(f"No link to MAV {msg.mav_id}")
        inbox.put(msg)

    def close(self):
        with self.__lock:
            inboxes, self.__inboxes = list(self.__inboxes.values()), {}
        for inbox in inboxes:
            inbox.put(None)


class _TcpLink(AgentLink):
    def __init__(self, address: Tuple[str, int], timeout: float):
        try:
            self.__sock = socket.create_connection(address, timeout=timeout)
        except OSError as err:
            raise TransportError(f"Cannot connect to {address[0]}:{address[1]}: {err}") from err
        self.__sock.settimeout(None)
        self.__send_lock = threading.Lock()
        self.__decoder = LineDecoder()
        self.__ready: List[Message] = []

    def send(self, msg: Message):
        with self.__send_lock:
            self.__sock.sendall(encode(msg))

    def receive(self, timeout: Optional[float] = None) -> Optional[Message]:
        self.__sock.settimeout(timeout)
        while not self.__ready:
            try:
                chunk = self.__sock.recv(_RECV_SIZE)
            except socket.timeout:
                raise TransportError("Timed out waiting for the master") from None
            except OSError:
                return None
            if not chunk:
                return None
            self.__ready.extend(self.__decoder.feed(chunk))
        return self.__ready.pop(0)

    def close(self):
        try:
            self.__sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.__sock.close()


class TcpPublisher:
    """Master side of TCP mode.

    The master listens, every agent dials in and announces its MAV id
    with a STATE_NOTIFY of sequence number 0. A reader thread per
    connection feeds the collector.

    Parameters
    ----------
    collector : Collector
        Where agent messages go.
    listen : str, optional
        ``HOST:PORT`` to bind. Port 0 picks a free port.
    connect : str, optional
        ``HOST:PORT`` local agents dial. The default is the bound address.
    connect_timeout : float, optional
        Seconds an agent waits for the connection. The default is 5.
    """

    mode = "tcp"

    def __init__(
        self,
        collector: Collector,
        listen: str = DEFAULT_LISTEN,
        connect: Optional[str] = None,
        connect_timeout: float = 5.0,
    ):
        self.__collector = collector
        self.__connect = parse_address(connect) if connect else None
        self.__connect_timeout = connect_timeout
        self.__conns: Dict[int, socket.socket] = {}
        self.__lock = threading.Lock()
        self.__closing = threading.Event()
        self.__threads: List[threading.Thread] = []

        host, port = parse_address(listen)
        try:
            self.__server = socket.create_server((host, port))
        except OSError as err:
            raise TransportError(f"Cannot listen on {listen}: {err}") from err
        self.__server.settimeout(_ACCEPT_POLL_S)
        self.__address = self.__server.getsockname()[:2]

        self.__start(self.__accept_loop, "swarmtune-accept")
        logger.info("Master listening on %s:%d", *self.__address)

    @property
    def address(self) -> Tuple[str, int]:
        return self.__address

    def __start(self, target, name: str, *args):
        thread = threading.Thread(target=target, args=args, name=name, daemon=True)
        self.__threads.append(thread)
        thread.start()

    def __accept_loop(self):
        while not self.__closing.is_set():
            try:
                conn, peer = self.__server.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.settimeout(None)
            logger.debug("Agent connected from %s:%d", *peer[:2])
            self.__start(self.__read_loop, f"swarmtune-read-{peer[1]}", conn)

    def __register(self, conn: socket.socket, hello: Message):
        if not (isinstance(hello, StateNotify) and hello.seq == 0):
            raise TransportError(f"Expected a hello STATE_NOTIFY, got {hello.kind}")
        with self.__lock:
            if hello.mav_id in self.__conns:
                raise TransportError(f"MAV {hello.mav_id} is already attached")
            self.__conns[hello.mav_id] = conn

    def __read_loop(self, conn: socket.socket):
        decoder = LineDecoder()
        registered = False
        try:
            while True:
                try:
                    chunk = conn.recv(_RECV_SIZE)
                except OSError:
                    chunk = b""
                if not chunk:
                    if decoder.pending:
                        raise MalformedLineError("Truncated line at end of stream")
                    break
                for msg in decoder.feed(chunk):
                    if not registered:
                        self.__register(conn, msg)
                        registered = True
                    self.__collector.deliver(msg)
        except (MalformedLineError, UnknownKindError, TransportError) as err:
            logger.error("Dropping agent link: %s", err)
            self.__collector.fail(err)
            conn.close()
            return

        if not self.__closing.is_set():
            self.__collector.fail(TransportError("An agent disconnected mid-experiment"))

    def open_link(self, mav_id: int) -> AgentLink:
        """Dials the master as MAV ``mav_id``."""
        return _TcpLink(self.__connect or self.__address, self.__connect_timeout)

    def publish(self, msg: Message):
        with self.__lock:
            conn = self.__conns.get(msg.mav_id)
        if conn is None:
            raise TransportError(f"No link to MAV {msg.mav_id}")
        try:
            conn.sendall(encode(msg))
        except OSError as err:
            raise TransportError(f"Lost MAV {msg.mav_id}: {err}") from err

    def close(self):
        self.__closing.set()
        with self.__lock:
            conns, self.__conns = list(self.__conns.values()), {}
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        self.__server.close()
        for thread in self.__threads:
            thread.join(timeout=1.0)


Publisher = Union[InProcPublisher, TcpPublisher]


def channel_pair(
    mode: str = "inproc",
    listen: str = DEFAULT_LISTEN,
    connect: Optional[str] = None,
) -> Tuple[Publisher, Collector]:
    """Creates the master's publisher and collector handles.

    Agents attach through ``publisher.open_link(mav_id)``.

    Parameters
    ----------
    mode : str, optional
        "inproc" or "tcp". The default is "inproc".
    listen : str, optional
        ``HOST:PORT`` the master binds in tcp mode.
    connect : str, optional
        ``HOST:PORT`` agents dial in tcp mode.

    Raises
    ------
    ValueError
        If the mode is unknown.
    TransportError
        If the address cannot be bound.

    Returns
    -------
    Tuple[Publisher, Collector]
        Both handles.
    """
    collector = Collector()
    if mode == "inproc":
        return InProcPublisher(collector), collector
    if mode == "tcp":
        return TcpPublisher(collector, listen, connect), collector
    raise ValueError(f"Unknown transport mode {mode!r}")
