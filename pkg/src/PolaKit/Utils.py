#! /usr/bin/env python3
#
# PolaKit: polarity-aware linear attention, verified at desk scale.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted provided that the following conditions are met:
#
#     * Redistributions of source code must retain the above copyright
#       notice, this list of conditions and the following disclaimer.
#     * Redistributions in binary form must reproduce the above copyright
#       notice, this list of conditions and the following disclaimer in the
#       documentation and/or other materials provided with the distribution.
#     * Neither the name of the copyright holder nor the
#       names of its contributors may be used to endorse or promote products
#       derived from this software without specific prior written permission.
#
# THIS SOFTWARE IS PROVIDED BY THE COPYRIGHT HOLDERS AND CONTRIBUTORS "AS IS"
# AND ANY EXPRESS OR IMPLIED WARRANTIES, INCLUDING, BUT NOT LIMITED TO, THE
# IMPLIED WARRANTIES OF MERCHANTABILITY AND FITNESS FOR A PARTICULAR PURPOSE
# ARE DISCLAIMED. IN NO EVENT SHALL THE COPYRIGHT HOLDER OR CONTRIBUTORS BE
# LIABLE FOR ANY DIRECT, INDIRECT, INCIDENTAL, SPECIAL, EXEMPLARY, OR
# CONSEQUENTIAL DAMAGES (INCLUDING, BUT NOT LIMITED TO, PROCUREMENT OF
# SUBSTITUTE GOODS OR SERVICES; LOSS OF USE, DATA, OR PROFITS; OR BUSINESS
# INTERRUPTION) HOWEVER CAUSED AND ON ANY THEORY OF LIABILITY, WHETHER IN
# CONTRACT, STRICT LIABILITY, OR TORT (INCLUDING NEGLIGENCE OR OTHERWISE)
# ARISING IN ANY WAY OUT OF THE USE OF THIS SOFTWARE, EVEN IF ADVISED OF THE
# POSSIBILITY OF SUCH DAMAGE.

import csv
import json
import logging
import math

import colorlog
import numpy as np
import rich.logging
import rich.highlighter

from rich.progress import Progress, TextColumn, SpinnerColumn, BarColumn, TaskProgressColumn, MofNCompleteColumn, TimeRemainingColumn

class PolaError(Exception):
    """ Base class for every error raised by PolaKit """

class ShapeError(PolaError):
    """ Operand shapes don't fit together """

class ParameterError(PolaError):
    """ A parameter is outside its allowed range """

class DomainError(PolaError):
    """ An input or result is outside the domain of the operation """

class PropertyViolation(PolaError):
    """ A verified mathematical property did not hold """

class OracleFailure(PolaError):
    """ The finite difference oracle could not evaluate a coordinate """
    def __init__(self, message, group=None, index=None):
        super().__init__(message)
        self.group = group
        self.index = index

class TrainingDivergence(PolaError):
    """ The training loss stopped being finite """
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step

def initLogging(verbosity) -> logging.Logger:
    handler = rich.logging.RichHandler(show_time=False, show_path=False, highlighter=rich.highlighter.NullHighlighter())

    levels = [logging.WARN, logging.INFO, logging.DEBUG]
    level = levels[min(len(levels)-1, verbosity)]        # capped to number of levels

    log = colorlog.getLogger('polakit')
    log.handlers.clear()
    log.addHandler(handler)
    log.setLevel(level)

    return log

def trialSeed(seed, trial):
    """
    Seed for a single Monte-Carlo trial.   Depends only on the master seed and the
    trial index, so results don't change with the number of workers.
    """
    return np.random.SeedSequence((seed, trial))

def makeProgress():
    return Progress(TextColumn("{task.description}"),
                    SpinnerColumn(),
                    BarColumn(bar_width=60),
                    TaskProgressColumn(),
                    MofNCompleteColumn(),
                    TimeRemainingColumn(),
                    expand=False,
                    transient=True)

def fmtValue(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        # undefined summaries (NaN) are written as empty fields, like None
        return repr(float(value)) if math.isfinite(value) else ""
    if isinstance(value, np.integer):
        return str(int(value))
    if value is None:
        return ""
    return str(value)

class RecordWriter:
    """
    Stream flat records to a file, either as CSV (header row first) or as
    newline delimited JSON objects.
    """
    def __init__(self, stream, fmt, fields):
        self.stream = stream
        self.fmt = fmt
        self.fields = list(fields)
        self.count = 0
        if fmt == 'csv':
            self.writer = csv.writer(stream, lineterminator='\n')
            self.writer.writerow(self.fields)
        elif fmt != 'json':
            raise ParameterError(f"Unknown output format {fmt}")

    def write(self, record):
        if self.fmt == 'csv':
            self.writer.writerow([fmtValue(record.get(f)) for f in self.fields])
        else:
            obj = {f: jsonValue(record.get(f)) for f in self.fields}
            self.stream.write(json.dumps(obj, allow_nan=False) + "\n")
        self.count += 1

def jsonValue(value):
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value
