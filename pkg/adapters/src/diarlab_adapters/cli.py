"""Entry point: serve one scoring task over the stdio worker protocol.

    diarlab-adapter TASK [--weights PATH] [--device cpu] [--batch-size N]

The process reads protocol-v1 JSON lines on stdin and answers on stdout; the
orchestrator is expected to start it with the workspace root as the working
directory (media paths in requests are resolved relative to it).
"""

from __future__ import annotations

import argparse
import sys

from .backends import BACKENDS, load_backend
from .protocol import AdapterSpec, serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="diarlab scorer-protocol adapter")
    parser.add_argument("task", choices=sorted(BACKENDS))
    parser.add_argument("--weights", default=None, help="model weights path (optional)")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=1)
    args = parser.parse_args(argv)
    spec = AdapterSpec(
        task=args.task, weights=args.weights, device=args.device, batch_size=args.batch_size
    )
    serve(spec, load_backend)
    return 0


if __name__ == "__main__":
    sys.exit(main())
