"""Engine worker process: one VM behind framed stdio pipes.

Bootstrap arrives as a Hello frame whose payload is a JSON config with
the script source, role, entropy seed, serialized address space and an
optional resources directory. The worker compiles the source itself;
compilation is deterministic, so master and twin always interpret the
same program. After the return Hello, the loop is strict: one event out,
one directive in, until the VM leaves the running state, then Bye.
"""

from __future__ import annotations

import json
import os
import struct
import sys

from .aslr import AddressSpace
from .bytecode import compile_source
from .vm import VmStatus, vm_create
from .wire import (
    DirectiveMsg,
    ByeMsg,
    EventMsg,
    FaultMsg,
    HelloMsg,
    decode,
    encode,
)


def _read_frame(stream) -> bytes | None:
    header = stream.read(4)
    if not header or len(header) < 4:
        return None
    (length,) = struct.unpack("<I", header)
    body = b""
    while len(body) < length:
        chunk = stream.read(length - len(body))
        if not chunk:
            return None
        body += chunk
    return header + body


def _send(stream, msg):
    stream.write(encode(msg))
    stream.flush()


def serve(stdin, stdout) -> int:
    frame = _read_frame(stdin)
    if frame is None:
        return 2
    hello = decode(frame)
    if not isinstance(hello, HelloMsg):
        _send(stdout, FaultMsg("expected hello bootstrap"))
        return 2
    try:
        config = json.loads(hello.payload.decode("utf-8"))
        program = compile_source(config["source"])
        space = AddressSpace.from_dict(config["space"])
        vm = vm_create(
            program,
            space,
            config["seed"],
            resources=config.get("resources"),
            proc_id=os.getpid(),
        )
    except Exception as e:
        _send(stdout, FaultMsg(f"bootstrap failed: {e}"))
        return 2
    _send(stdout, HelloMsg(payload=json.dumps({"role": config["role"]}).encode()))
    try:
        while vm.status is VmStatus.RUNNING:
            ev = vm.run_to_checkpoint()
            _send(stdout, EventMsg.from_event(ev))
            frame = _read_frame(stdin)
            if frame is None:
                return 3  # supervisor went away
            msg = decode(frame)
            if not isinstance(msg, DirectiveMsg):
                _send(stdout, FaultMsg(f"expected directive, got {msg!r}"))
                return 2
            if msg.seq != vm.seq:
                _send(stdout, FaultMsg(f"directive seq {msg.seq} != {vm.seq}"))
                return 2
            vm.apply_directive(msg.directive)
        _send(stdout, ByeMsg(seq=vm.seq))
        return 0
    except Exception as e:
        try:
            _send(stdout, FaultMsg(f"engine error: {e}"))
        except OSError:
            pass
        return 1


def main() -> int:
    return serve(sys.stdin.buffer, sys.stdout.buffer)


if __name__ == "__main__":
    sys.exit(main())
