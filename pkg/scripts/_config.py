"""Turn a dataclass of defaults into command-line overrides."""

import argparse
import dataclasses
import json


def parse(cls, argv=None):
    ap = argparse.ArgumentParser(description=cls.__doc__)
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        if isinstance(default, (list, tuple)):
            ap.add_argument(f"--{f.name.replace('_', '-')}", default=default,
                            type=type(default[0]) if default else float, nargs="+")
        else:
            ap.add_argument(f"--{f.name.replace('_', '-')}", default=default, type=type(default))
    return cls(**vars(ap.parse_args(argv)))


def dump(cfg):
    return json.dumps(dataclasses.asdict(cfg))
