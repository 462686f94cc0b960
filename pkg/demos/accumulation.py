"""
From layer depths to accumulation rates
=======================================

Annual layer tops in rows become depths, depths become water-equivalent
thicknesses through a density profile, and the tracing MAE becomes an
uncertainty on each annual rate.
"""
from snowlayers import data
from snowlayers.accum import fit_density_profile, water_equivalent_rates

# a firn density profile rising with depth (kg/m^3); the linear fit smooths it
samples = [(0.0, 320.0), (1.0, 360.0), (2.5, 400.0), (4.0, 430.0), (6.0, 470.0)]
profile = fit_density_profile(samples, "linear-fit")

_, layers = data.synthesize(data.SynthParams(seed=2, rows=256, cols=64, layer_count=8))
report = water_equivalent_rates(layers, profile, meters_per_row=0.025, mae_pixels=2.2)

print(" depth m   w.e. m   rate m w.e./a   +-")
for lay in report.layers:
    print(f"{lay.depth_m:8.3f} {lay.we_thickness_m:8.4f} {lay.rate_m_we_per_a:14.4f}  {lay.uncertainty_m_we_per_a:.4f}")

# With density 200 kg/m^3 a 2.2-pixel MAE at 2.5 cm per row is 0.011 m w.e./a.
