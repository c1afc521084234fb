#!/usr/bin/env python3
"""Host a logits function behind a newline-delimited JSON loop on stdio.

The protocol has three request shapes, one JSON object per line:

    {"op": "hello"}                                  -> {"name", "features", "classes"}
    {"op": "logits", "id": int, "batch": [[...]]}    -> {"id", "logits": [[...]]}
    {"op": "shutdown"}                               -> process exits 0

Rules the host relies on: the reply to a logits request carries the request's
id unchanged, every reply is exactly one line and is flushed immediately, a
malformed or unsupported line gets an error reply but never kills the
session, and "hello" must arrive before the first logits request.

This file is deliberately standard-library only and runnable by path, so it
can be copied next to any model framework and edited in place. The shipped
model is a linear-softmax reference loaded from a weights file
(``--demo-linear weights.json``); replace ``build_user_model`` to wrap your
own predictor.
"""

import argparse
import json
import sys


class AdapterSession:
    """A declared model identity plus the batch-logits callable behind it."""

    def __init__(self, model, name, feature_count, class_count):
        self.model = model
        self.name = name
        self.feature_count = int(feature_count)
        self.class_count = int(class_count)


def load_linear(path):
    """Linear-softmax reference: logits = W x + b, weights JSON on disk."""
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    weights = obj["weights"]
    bias = obj["bias"]
    if not weights or len(bias) != len(weights):
        raise ValueError("weights must be K rows with a K-length bias")
    width = len(weights[0])
    if any(len(row) != width for row in weights):
        raise ValueError("weight rows must share one width")
    W = [[float(v) for v in row] for row in weights]
    b = [float(v) for v in bias]

    def model(batch):
        out = []
        for x in batch:
            out.append([sum(w * v for w, v in zip(row, x)) + bk
                        for row, bk in zip(W, b)])
        return out

    return AdapterSession(model, "ref-linear", width, len(b))


def build_user_model():
    """Edit point: return an AdapterSession wrapping your own model.

    The callable receives a list of feature lists and must return one logits
    list per input, in order.
    """
    raise NotImplementedError(
        "no model configured; pass --demo-linear <weights.json> or edit "
        "build_user_model()"
    )


def _validate_batch(batch, width):
    if not isinstance(batch, list):
        raise ValueError("batch must be a list of feature lists")
    for row in batch:
        if not isinstance(row, list) or len(row) != width:
            raise ValueError(f"every batch row must have {width} features")
        for v in row:
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ValueError("batch entries must be numbers")
    return [[float(v) for v in row] for row in batch]


def serve(session, stdin=None, stdout=None):
    """Answer requests line by line until shutdown or end of input."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout

    def reply(obj):
        stdout.write(json.dumps(obj, separators=(",", ":")) + "\n")
        stdout.flush()

    hello_seen = False
    for line in stdin:
        request_id = None
        try:
            request = json.loads(line)
            if isinstance(request, dict) and isinstance(request.get("id"), int):
                request_id = request["id"]
            if not isinstance(request, dict):
                raise ValueError("request must be a JSON object")
            op = request.get("op")
            if op == "hello":
                hello_seen = True
                reply({"name": session.name,
                       "features": session.feature_count,
                       "classes": session.class_count})
            elif op == "logits":
                if not hello_seen:
                    raise ValueError("hello must precede logits requests")
                if request_id is None:
                    raise ValueError("logits request needs an integer id")
                batch = _validate_batch(request.get("batch"),
                                        session.feature_count)
                logits = session.model(batch)
                reply({"id": request_id, "logits": logits})
            elif op == "shutdown":
                return 0
            else:
                raise ValueError(f"unsupported op: {op!r}")
        except Exception as exc:  # noqa: BLE001 - any bad request gets a reply
            err = {"error": str(exc)}
            if request_id is not None:
                err["id"] = request_id
            reply(err)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="serve a model over newline-delimited JSON on stdio")
    parser.add_argument("--demo-linear", metavar="WEIGHTS_JSON",
                        help="host the linear-softmax reference model from a "
                             "weights file")
    args = parser.parse_args(argv)
    if args.demo_linear:
        try:
            session = load_linear(args.demo_linear)
        except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
            parser.error(f"cannot load weights: {exc}")
    else:
        try:
            session = build_user_model()
        except NotImplementedError as exc:
            parser.error(str(exc))
    return serve(session)


if __name__ == "__main__":
    sys.exit(main())
