# reports.py
#
# Instrumental-variable weighting for marginal structural mean models
# Copyright (C) 2026 IvMsmm Team
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program. If not, see <https://www.gnu.org/licenses/>.

import math

import numpy as np
from jinja2 import Environment, StrictUndefined

ESTIMATE_TEMPLATE = """
{{ kind }} estimate ({{ n }} subjects, {{ T }} period{{ "s" if T != 1 }})
{% for row in rows %}
  {{ "%-10s"|format(row.name) }} {{ row.beta|num }}   sandwich SE {{ row.se_sw|num }}  [{{ row.ci_sw[0]|num }}, {{ row.ci_sw[1]|num }}]
{%- if row.ci_bs is not none %}
   bootstrap SE {{ row.se_bs|num }}  [{{ row.ci_bs[0]|num }}, {{ row.ci_bs[1]|num }}]
{%- endif %}

{% endfor %}
{% if B %}
  bootstrap: {{ B }} replicates, {{ failures }} failed
{% endif %}
  confidence level: {{ level|num }}
{% for key, value in diagnostics.items() %}
  {{ key }}: {{ value|num }}
{% endfor %}
  nuisance: {{ nuisance }}
  seed: {{ seed }}
"""

EXPERIMENT_TEMPLATE = """
{{ "%-14s %-6s %-4s %10s %10s %10s %10s %9s %9s"|format("kind", "n", "T", "bias", "mc_sd", "sw_sd", "bs_sd", "sw_cover", "bs_cover") }}
{% for row in rows %}
{{ "%-14s %-6d %-4d"|format(row.kind, row.n, row.T) }} {{ row.bias|num(10) }} {{ row.mc_sd|num(10) }} {{ row.sw_sd|num(10) }} {{ row.bs_sd|num(10) }} {{ row.sw_cover|num(9) }} {{ row.bs_cover|num(9) }}
{% endfor %}
"""

DIAGNOSE_TEMPLATE = """
{% for check in checks %}
[{{ "PASS" if check.passed else "FAIL" }}] {{ check.title }}
{% for line in check.lines %}
    {{ line }}
{% endfor %}
{% endfor %}
{{ passed }} of {{ checks|length }} checks passed (seed {{ seed }})
"""


def _format_number(value, width=0):
    if value is None:
        text = "-"
    elif isinstance(value, (bool, np.bool_)):
        text = "yes" if value else "no"
    elif isinstance(value, (int, float)):
        text = "nan" if isinstance(value, float) and math.isnan(value) else f"{value:.4g}"
    else:
        try:
            text = f"{float(value):.4g}"
        except (TypeError, ValueError):
            text = str(value)
    return text.rjust(width)


environment = Environment(trim_blocks=True, lstrip_blocks=True, undefined=StrictUndefined)
environment.filters["num"] = _format_number


def render(template: str, **context) -> str:
    return environment.from_string(template).render(**context).strip("\n") + "\n"

def render_estimate(report) -> str:
    rows = []
    for i, name in enumerate(report.names):
        rows.append({
            "name": name,
            "beta": float(report.beta[i]),
            "se_sw": float(report.se_sandwich[i]),
            "ci_sw": [float(v) for v in report.ci_sandwich[i]],
            "se_bs": float(report.se_bootstrap[i]),
            "ci_bs": None if report.ci_bootstrap is None else [float(v) for v in report.ci_bootstrap[i]],
        })

    return render(
        ESTIMATE_TEMPLATE, kind=report.kind, n=report.n, T=report.T, rows=rows, B=report.B,
        failures=report.bootstrap_failures, level=report.level, diagnostics=report.diagnostics,
        nuisance=report.nuisance, seed=report.seed,
    )

def render_experiment(frame) -> str:
    return render(EXPERIMENT_TEMPLATE, rows=frame.to_dict("records"))

def render_diagnostics(checks, seed) -> str:
    return render(DIAGNOSE_TEMPLATE, checks=checks, passed=sum(c["passed"] for c in checks), seed=seed)
