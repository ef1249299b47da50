"""
Experiment configuration: command line flags, an optional key=value file and
per-command defaults.   Flags override the file, the file overrides defaults.
"""

import argparse
import os
import pathlib
from typing import NamedTuple, Optional

import regex as re

from .attention import G_INITS, DWC_MODES
from .bench import VARIANTS
from .gradcheck import TASK_KINDS, LOSS_MODES
from .polarity import FEATURE_KINDS

COMMANDS = ['identity', 'equivalence', 'entropy', 'theorem', 'gradcheck', 'bench', 'train-toy', 'rank']
FORMATS = ['csv', 'json']
OUTDIR_ENV = 'POLAEXP_OUTDIR'

class ExperimentConfig(NamedTuple):
    command: str
    seed: int = 0
    n: int = 16
    d: int = 8
    alpha: float = 3.0
    trials: int = 100
    output: Optional[pathlib.Path] = None
    format: str = 'csv'
    workers: int = 1
    progress: bool = True
    verbose: int = 0
    eps: float = 1e-6
    h: float = 1e-5
    tol: float = 1e-5
    alphas: Optional[tuple] = None
    grid: tuple = (1024, 2048, 4096, 8192)
    reps: int = 5
    variants: tuple = ('softmax', 'pola')
    steps: int = 500
    lr: float = 0.05
    task: str = 'associative-recall'
    g_init: str = 'ones'
    loss: str = 'sum'
    feature_kind: str = 'pola'
    use_dwc: bool = False
    dwc_kernel_size: int = 3
    dwc_mode: str = 'value'
    target_ratio: float = 0.5

# Defaults that differ from the ExperimentConfig ones, per command
COMMAND_DEFAULTS = {
    'identity':    {'trials': 10000, 'd': 64},
    'equivalence': {'trials': 1000, 'n': 64, 'd': 32},
    'entropy':     {'trials': 200, 'n': 49, 'd': 16},
    'theorem':     {'trials': 1000, 'n': 32, 'd': 16},
    'gradcheck':   {'trials': 20, 'n': 6, 'd': 4},
    'bench':       {'d': 32},
    'train-toy':   {'n': 16, 'd': 8},
    'rank':        {'trials': 20, 'n': 49, 'd': 16},
}

DESCRIPTIONS = {
    'identity':    "Check the polarity decomposition of the dot product on random pairs (--d is the largest dimension)",
    'equivalence': "Compare quadratic and linear evaluation order (--n and --d are upper bounds)",
    'entropy':     "Compare row entropies of softmax, ReLU/ELU+1 linear and pola similarity maps",
    'theorem':     "Monte-Carlo check that the power map lowers the entropy of inner product sequences",
    'gradcheck':   "Check the analytic backward pass against central finite differences",
    'bench':       "Time the forward pass over a grid of sequence lengths",
    'train-toy':   "Train exponents and mixing coefficients on a toy task",
    'rank':        "Numerical rank of attention maps, with and without the DWC operator",
}

def _positiveInt(string):
    try:
        value = int(string)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{string!r} is not an integer")
    if value < 1:
        raise argparse.ArgumentTypeError(f"{value} must be at least 1")
    return value

def _count(string):
    try:
        value = int(string)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{string!r} is not an integer")
    if value < 0:
        raise argparse.ArgumentTypeError(f"{value} must not be negative")
    return value

def _seed(string):
    try:
        value = int(string)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{string!r} is not an integer")
    if value < 0 or value >= 2**64:
        raise argparse.ArgumentTypeError(f"Seed {value} is not a 64 bit unsigned value")
    return value

def _positiveFloat(string):
    try:
        value = float(string)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{string!r} is not a number")
    if not value > 0 or value == float('inf'):
        raise argparse.ArgumentTypeError(f"{value} must be positive")
    return value

def _intList(string):
    return tuple(_positiveInt(s.strip()) for s in string.split(',') if s.strip())

def _floatList(string):
    return tuple(_positiveFloat(s.strip()) for s in string.split(',') if s.strip())

def _choiceList(choices):
    def parse(string):
        values = tuple(s.strip() for s in string.split(',') if s.strip())
        for v in values:
            if v not in choices:
                raise argparse.ArgumentTypeError(f"{v!r} is not one of {', '.join(choices)}")
        return values
    return parse

def _choice(choices):
    def parse(string):
        if string not in choices:
            raise argparse.ArgumentTypeError(f"{string!r} is not one of {', '.join(choices)}")
        return string
    return parse

def _bool(string):
    s = string.strip().lower()
    if s in ('1', 'true', 'yes', 'on'):
        return True
    if s in ('0', 'false', 'no', 'off'):
        return False
    raise argparse.ArgumentTypeError(f"{string!r} is not a boolean")

# dest: (type, help).   Booleans use BooleanOptionalAction on the command line.
OPTIONS = {
    'seed':            (_seed, "Master random seed"),
    'n':               (_positiveInt, "Sequence length"),
    'd':               (_positiveInt, "Head dimension"),
    'alpha':           (_positiveFloat, "Exponent scale, exponents lie in (1, 1+alpha)"),
    'alphas':          (_floatList, "Comma separated alpha grid, overrides --alpha"),
    'trials':          (_positiveInt, "Number of random instances"),
    'output':          (pathlib.Path, f"Output file (default directory from ${OUTDIR_ENV})"),
    'format':          (_choice(FORMATS), "Output format"),
    'workers':         (_positiveInt, "Worker processes for Monte-Carlo trials"),
    'eps':             (_positiveFloat, "Denominator floor"),
    'h':               (_positiveFloat, "Finite difference step"),
    'tol':             (_positiveFloat, "Relative error tolerance"),
    'grid':            (_intList, "Comma separated sequence lengths"),
    'reps':            (_positiveInt, "Timed repetitions per point"),
    'variants':        (_choiceList(VARIANTS), "Comma separated attention variants"),
    'steps':           (_positiveInt, "Gradient descent steps"),
    'lr':              (_positiveFloat, "Learning rate"),
    'task':            (_choice(TASK_KINDS), "Toy task"),
    'g_init':          (_choice(G_INITS), "Initialization of the mixing coefficients"),
    'loss':            (_choice(LOSS_MODES), "Summed or mean squared error, sum matches the default learning rate"),
    'feature_kind':    (_choice(FEATURE_KINDS), "Feature map applied to each polar part"),
    'use_dwc':         (_bool, "Add the depthwise convolution on the value path"),
    'dwc_kernel_size': (_positiveInt, "DWC kernel size (odd)"),
    'dwc_mode':        (_choice(DWC_MODES), "Apply DWC to the values, or add it as an output branch"),
    'target_ratio':    (_positiveFloat, "Largest final/initial loss ratio that passes"),
    'progress':        (_bool, "Show a progress bar"),
}

def defaultsFor(command) -> dict:
    values = ExperimentConfig(command)._asdict()
    values.update(COMMAND_DEFAULTS.get(command, {}))
    return values

def _fmtDefault(value):
    if isinstance(value, tuple):
        return ",".join(map(str, value))
    return str(value)

def makeParser():
    parser = argparse.ArgumentParser(prog='polaexp', description="Polarity-aware linear attention experiments")
    subs = parser.add_subparsers(dest='command', metavar='command')
    subs.required = True

    for command in COMMANDS:
        defaults = defaultsFor(command)
        sub = subs.add_parser(command, help=DESCRIPTIONS[command], description=DESCRIPTIONS[command])
        sub.add_argument('--config', '-c', dest='config', type=pathlib.Path, default=None,
                         help="File of key=value lines, flags override it")
        for dest, (typeFn, helpText) in OPTIONS.items():
            flag = '--' + dest.replace('_', '-')
            helpText = f"{helpText} (default: {_fmtDefault(defaults[dest])})"
            if typeFn is _bool:
                sub.add_argument(flag, dest=dest, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS, help=helpText)
            else:
                sub.add_argument(flag, dest=dest, type=typeFn, default=argparse.SUPPRESS, help=helpText)
        sub.add_argument('--verbose', '-v', dest='verbose', action='count', default=argparse.SUPPRESS, help='Increase the verbosity')

    return parser

_LINE = re.compile(r'^\s*(?P<key>[A-Za-z][\w-]*)\s*=\s*(?P<value>.*?)\s*$')

def readConfigFile(path) -> dict:
    """
    Parse key=value lines.   '#' starts a comment, blank lines are skipped.
    Raises ValueError with the line number on anything else.
    """
    values = {}
    with open(path, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, 1):
            line = line.split('#', 1)[0]
            if not line.strip():
                continue
            m = _LINE.match(line)
            if not m:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key = m.group('key').replace('-', '_').lower()
            if key not in OPTIONS and key != 'verbose':
                raise ValueError(f"{path}:{lineno}: unknown key {m.group('key')}")
            raw = m.group('value')
            try:
                values[key] = _count(raw) if key == 'verbose' else OPTIONS[key][0](raw)
            except argparse.ArgumentTypeError as exc:
                raise ValueError(f"{path}:{lineno}: {key}: {exc}")
    return values

def _validate(cfg: ExperimentConfig, error):
    if cfg.command in ('gradcheck', 'bench', 'train-toy', 'rank') and cfg.d % 2:
        error(f"--d must be even for {cfg.command}, got {cfg.d}")
    if cfg.command in ('identity', 'equivalence') and cfg.d < 2:
        error("--d must be at least 2")
    if cfg.command == 'bench' and cfg.workers != 1:
        error("bench always runs serially, --workers must be 1")
    if cfg.use_dwc and cfg.dwc_kernel_size % 2 == 0:
        error(f"--dwc-kernel-size must be odd, got {cfg.dwc_kernel_size}")

def parseConfig(argv=None, env=None) -> ExperimentConfig:
    """
    Build an ExperimentConfig.   Usage errors print a diagnostic and exit with status 2.
    """
    env = os.environ if env is None else env
    parser = makeParser()
    args = vars(parser.parse_args(argv))

    command = args.pop('command')
    configFile = args.pop('config', None)

    values = defaultsFor(command)
    if configFile is not None:
        try:
            values.update(readConfigFile(configFile))
        except (OSError, ValueError) as exc:
            parser.error(str(exc))
    values.update(args)
    values['command'] = command

    fmt = values['format']
    if values['output'] is None:
        outdir = pathlib.Path(env.get(OUTDIR_ENV, '.'))
        values['output'] = outdir / f"{command}.{fmt}"

    cfg = ExperimentConfig(**values)
    _validate(cfg, parser.error)
    return cfg
