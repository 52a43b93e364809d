import argparse
import logging
import sys

from .models import load_model
from .server import serve


def main(argv=None):
    parser = argparse.ArgumentParser(prog="adapter")
    parser.add_argument("--model", default="linear-echo",
                        help="linear-echo or a torchvision model name")
    parser.add_argument("--port", type=int, default=8787)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        model = load_model(args.model, device=args.device)
    except Exception as exc:
        print(f"failed to load model {args.model!r}: {exc}", file=sys.stderr)
        return 1
    serve(model, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
