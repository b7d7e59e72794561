import numpy as np
import pandas as pd
import statsmodels.api as sm
import plotly.graph_objects as go

SCALING_BAND = (0.5, 2.0)


def perform_scaling_regression(rows):
    """Fit log(latency) = a + b log(pixels) over benchmark rows"""
    if rows is None or len(rows) < 2:
        return None

    pixels = (rows['width'] * rows['height']).to_numpy(dtype=float)
    latencies = rows['mean_ms'].to_numpy(dtype=float)

    X = sm.add_constant(np.log(pixels))
    ols_model = sm.OLS(np.log(latencies), X).fit()
    intercept, exponent = ols_model.params

    return {
        'exponent': float(exponent),
        'intercept': float(intercept),
        'r_squared': float(ols_model.rsquared) if len(rows) > 2 else 1.0,
        'ols_model': ols_model,
        'pixels': pixels,
        'latencies': latencies,
    }


def consecutive_ratios(rows, band=SCALING_BAND):
    """
    Latency ratio vs pixel ratio between consecutive rows. `within_band` is
    True when latency_ratio / pixel_ratio lies inside `band`.
    """
    records = []
    for (_, prev), (_, cur) in zip(rows.iloc[:-1].iterrows(), rows.iloc[1:].iterrows()):
        pixel_ratio = (cur['width'] * cur['height']) / (prev['width'] * prev['height'])
        latency_ratio = cur['mean_ms'] / prev['mean_ms']
        flops_ratio = cur['flops_g'] / prev['flops_g']
        relative = latency_ratio / pixel_ratio
        records.append({
            'from': f"{int(prev['width'])}x{int(prev['height'])}",
            'to': f"{int(cur['width'])}x{int(cur['height'])}",
            'pixel_ratio': pixel_ratio,
            'flops_ratio': flops_ratio,
            'latency_ratio': latency_ratio,
            'within_band': bool(band[0] <= relative <= band[1]),
        })
    return pd.DataFrame(records)


def create_scaling_plot(rows, regression_results=None):
    """Log-log latency vs pixel count with the fitted power law"""
    pixels = (rows['width'] * rows['height']).to_numpy(dtype=float)
    labels = [f"{int(w)}x{int(h)}" for w, h in zip(rows['width'], rows['height'])]

    fig = go.Figure()

    fig.add_trace(go.Scatter(
        x=pixels,
        y=rows['mean_ms'],
        mode='markers+text',
        text=labels,
        textposition='top center',
        name='Mean latency',
        error_y=dict(type='data', symmetric=False,
                     array=rows['p95_ms'] - rows['mean_ms'],
                     arrayminus=np.zeros(len(rows))),
        marker=dict(size=12, color='#3498db')
    ))

    if regression_results:
        px_range = np.logspace(np.log10(pixels.min()), np.log10(pixels.max()), 100)
        fitted = np.exp(regression_results['intercept']) * px_range ** regression_results['exponent']
        fig.add_trace(go.Scatter(
            x=px_range,
            y=fitted,
            mode='lines',
            name=(f"Power law (exponent = {regression_results['exponent']:.2f}, "
                  f"R² = {regression_results['r_squared']:.3f})"),
            line=dict(color='#e74c3c', width=3)
        ))

    fig.update_layout(
        title='Runtime Scaling: Resolution vs. Latency',
        xaxis_title='Pixels per frame',
        yaxis_title='Latency (ms)',
        xaxis_type='log',
        yaxis_type='log',
        template='plotly_white',
        height=500,
        hovermode='closest'
    )

    return fig
