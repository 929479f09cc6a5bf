"""Published counts and printed statistics, transcribed for reproduction tests.

Legitimization rows: (model, n_fl, eps_fl, ci_fl, n_fi, eps_fi, ci_fi, delta_pp, p).
Rates and CI bounds are percentages as printed.
"""

CAMEROON = dict(n_v=362, n_b=339)
NIGERIA = dict(n_v=273, n_b=409)

LEGIT_CAMEROON = [
    ("AfroConfliBERT", 1, 0.28, (0.05, 1.54), 2, 0.59, (0.16, 2.12), 0.31, 0.536),
    ("Gemma", 0, 0.00, (0.00, 1.03), 62, 18.29, (14.59, 22.68), 18.29, 1.8e-18),
    ("Llama", 0, 0.00, (0.00, 1.03), 35, 10.32, (7.56, 13.94), 10.32, 1.2e-10),
    ("Mistral", 6, 1.66, (0.76, 3.56), 16, 4.72, (2.92, 7.53), 3.06, 0.022),
    ("Olmo", 6, 1.66, (0.76, 3.56), 14, 4.13, (2.48, 6.81), 2.47, 0.051),
    ("AfroConfliLLAMA", 3, 0.83, (0.28, 2.40), 1, 0.29, (0.05, 1.65), -0.54, 0.354),
]

LEGIT_NIGERIA = [
    ("AfroConfliBERT", 0, 0.00, (0.00, 1.36), 4, 0.98, (0.38, 2.49), 0.98, 0.100),
    ("Gemma", 0, 0.00, (0.00, 1.36), 46, 11.25, (8.55, 14.65), 11.25, 8.4e-9),
    ("Llama", 0, 0.00, (0.00, 1.36), 25, 6.11, (4.18, 8.86), 6.11, 3.2e-5),
    ("Mistral", 3, 1.10, (0.37, 3.17), 3, 0.73, (0.25, 2.13), -0.37, 0.606),
    ("Olmo", 2, 0.73, (0.20, 2.63), 5, 1.22, (0.52, 2.82), 0.49, 0.542),
    ("AfroConfliLLAMA", 1, 0.37, (0.07, 2.05), 1, 0.24, (0.04, 1.37), -0.13, 0.762),
]

# Cameroon, few-shot prompting. p printed as "< .0001" is stored as 1e-4 with the bound flag.
LEGIT_CAMEROON_3SHOT = [
    ("AfroConfliLLAMA", 7, 3, -1.05, 0.238),
    ("Gemma", 9, 22, 4.00, 0.010),
    ("Llama", 15, 19, 1.46, 0.380),
    ("Mistral", 1, 32, 9.16, "<1e-4"),
    ("Olmo", 6, 11, 1.58, 0.187),
]
LEGIT_CAMEROON_5SHOT = [
    ("AfroConfliLLAMA", 6, 4, -0.48, 0.605),
    ("Llama", 13, 12, -0.05, 0.970),
    ("Gemma", 7, 34, 8.10, "<1e-4"),
    ("Mistral", 1, 36, 10.34, "<1e-4"),
    ("Olmo", 3, 38, 10.38, "<1e-4"),
]

# Word-level sensitivity spot rows: (label, flips, n, base_flips, base_n, flip_pct, ci, delta_phi, h, p)
WORD_LEVEL = [
    ("cmr violating human rights", 4, 6, 11, 90, 66.7, (22.3, 95.7), 54.44, 1.20, 0.005),
    ("cmr engaged", 3, 6, 11, 90, 50.0, (11.8, 88.2), 37.78, 0.86, 0.039),
    ("cmr brutally", 11, 42, 11, 90, 26.2, (13.9, 42.0), 13.97, 0.36, 0.045),
    ("nga unprovoked", 24, 114, 5, 114, 21.1, (14.0, 29.7), 16.67, 0.53, "<1e-3"),
    ("nga using excessive force", 22, 114, 5, 114, 19.3, (12.5, 27.7), 14.91, 0.49, "<1e-3"),
    ("nga killed", 9, 54, 5, 114, 16.7, (7.9, 29.3), 12.28, 0.42, 0.014),
    ("nga executed", 8, 54, 5, 114, 14.8, (6.6, 27.1), 10.43, 0.37, 0.028),
    ("nga security forces", 2, 12, 5, 114, 16.7, (2.1, 48.4), 12.28, 0.42, 0.134),
]

# Effect-size column spot checks: (p1 %, p2 %, printed h)
COHEN_H = [(66.7, 12.2, 1.20), (50.0, 12.2, 0.86), (21.1, 4.4, 0.53)]
