"""SVG line charts for sweep tables (needs the optional matplotlib extra)."""

import os


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "budgetab"
    return plt


def _lines(plt, rows, x, y, group, path, xlabel, ylabel, err=None):
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for key in dict.fromkeys(r[group] for r in rows):
        sel = sorted((r for r in rows if r[group] == key), key=lambda r: r[x])
        xs = [r[x] for r in sel]
        ys = [r[y] for r in sel]
        if err:
            ax.errorbar(xs, ys, yerr=[r[err] for r in sel], marker="o", ms=3, capsize=2,
                        label=f"{group}={key}")
        else:
            ax.plot(xs, ys, marker="o", ms=3, label=f"{group}={key}")
    ax.axhline(0.0, color="0.6", lw=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_sweep(rows, name, outdir):
    """Write the charts for sweep ``name``; returns the file paths."""
    plt = _pyplot()
    out = lambda f: os.path.join(outdir, f)
    if name == "fig3":
        return [_lines(plt, rows, "r1", "rel_bias", "design", out("fig3_bias.svg"),
                       "r1 (items per buyer)", "relative bias", "bias_se"),
                _lines(plt, rows, "r1", "rel_stddev", "design", out("fig3_std.svg"),
                       "r1 (items per buyer)", "relative stddev")]
    if name == "fig4":
        return [_lines(plt, rows, "r2", "rel_bias", "design", out("fig4.svg"),
                       "r2 (budget-cost rate)", "relative bias", "bias_se")]
    if name == "fig5":
        return [_lines(plt, rows, "r1", "rel_stddev", "design", out("fig5.svg"),
                       "r1 (items per buyer)", "relative stddev")]
    if name == "fig6":
        return [_lines(plt, rows, "r3", "rel_bias", "r2", out("fig6.svg"),
                       "r3 (consistency rate)", "relative bias", "bias_se")]
    axes = [k for k in ("r1", "r2", "r3") if len({r[k] for r in rows}) > 1] or ["r1"]
    return [_lines(plt, rows, axes[0], "rel_bias", "design", out(f"{name}.svg"),
                   axes[0], "relative bias", "bias_se")]
