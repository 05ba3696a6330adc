"""Plot-script emission: plain gnuplot text referencing the run's CSV files.

The harness writes the script next to the CSVs and never executes it.
"""
from __future__ import annotations

from .experiments import RunReport


def emit_plot_script(report: RunReport) -> str:
    lines = [
        "# gnuplot script emitted by spdelab; run from the report directory",
        f"# experiment: {report.config.name}, seed: {report.config.seed}",
        'set datafile separator ","',
        "set key outside",
    ]
    plotted = False
    for table in report.outcome.tables:
        if not table.rows:
            continue
        if table.name == "carleman_sweep":
            lam_values = sorted({row[1] for row in table.rows})
            lines.append("set logscale x 2")
            lines.append('set xlabel "s"; set ylabel "ratio"')
            terms = ", ".join(
                f"'carleman_sweep.csv' skip 1 using (($2=={fmtg(lam)})?$1:1/0):8 "
                f"with linespoints title 'lambda={fmtg(lam)}'"
                for lam in lam_values
            )
            lines.append(f"plot {terms}")
            lines.append("unset logscale")
            plotted = True
        elif table.name == "rate_pairs":
            lines.append("set logscale xy")
            lines.append('set xlabel "noise level"; set ylabel "error at t0"')
            last_slope = table.rows[-1][3]
            first = table.rows[0]
            lines.append(f"m = {last_slope!r}")
            lines.append(f"c = {first[2]!r} / ({first[0]!r}**m)")
            lines.append(
                "plot 'rate_pairs.csv' skip 1 using 1:3 with points pt 7 "
                "title 'measured', c*x**m with lines title sprintf('slope %.3f', m)"
            )
            lines.append("unset logscale")
            plotted = True
        else:
            lines.append(f'set xlabel "{table.header[0]}"; set ylabel "{table.header[-1]}"')
            lines.append(
                f"plot '{table.name}.csv' skip 1 using 1:{len(table.header)} "
                f"with linespoints title '{table.name}'"
            )
            plotted = True
        lines.append("pause -1")
    if not plotted:
        lines.append("# no tables with rows; nothing to plot")
    return "\n".join(lines) + "\n"


def fmtg(value: float) -> str:
    return f"{float(value):g}"
