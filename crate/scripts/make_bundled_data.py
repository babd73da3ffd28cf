#!/usr/bin/env python3
"""Produce the bundled datasets under data/.

cancer.csv is the real Breast Cancer Wisconsin (Diagnostic) data, exported
from scikit-learn's offline copy. adult.csv, diabetes.csv, and arrhythmia.csv
are deterministic synthetic replicas: same schema, row counts, class balance,
and value ranges as the originals (which need a network fetch; see
fetch_real_data.sh). Regenerating with the same seed reproduces identical
files.
"""

import csv
import json
import os

import numpy as np

OUT = os.path.join(os.path.dirname(__file__), "..", "data")
SEED = 20240917


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path} ({len(rows)} rows)")


def write_schema(path, label, features):
    spec = {
        "label": label,
        "features": [
            {"name": n, "kind": k} if k == "numeric" else {"name": n, "kind": "categorical"}
            for n, k in features
        ],
    }
    with open(path, "w") as f:
        json.dump(spec, f, indent=2)
        f.write("\n")
    print(f"wrote {path}")


def fmt(v, decimals):
    if decimals == 0:
        return str(int(round(v)))
    return f"{v:.{decimals}f}"


# ---------------------------------------------------------------- cancer ---

def make_cancer():
    from sklearn.datasets import load_breast_cancer

    data = load_breast_cancer()
    header = [n.replace(" ", "_") for n in data.feature_names] + ["diagnosis"]
    rows = []
    for x, y in zip(data.data, data.target):
        # sklearn: 0 = malignant, 1 = benign
        label = "M" if y == 0 else "B"
        rows.append([repr(float(v)) for v in x] + [label])
    write_csv(os.path.join(OUT, "cancer.csv"), header, rows)
    write_schema(
        os.path.join(OUT, "cancer.schema.json"),
        "diagnosis",
        [(n, "numeric") for n in header[:-1]],
    )


# -------------------------------------------------------------- diabetes ---

def make_diabetes(rng):
    n_neg, n_pos = 500, 268
    rows = []
    for label, n in (("0", n_neg), ("1", n_pos)):
        pos = label == "1"
        preg = rng.poisson(4.6 if pos else 3.2, n).clip(0, 17)
        glucose = rng.normal(140.0 if pos else 110.5, 30.0 if pos else 24.5, n).clip(44, 199)
        bp = rng.normal(70.8 if pos else 68.2, 18.0 if pos else 16.0, n).clip(24, 122)
        skin = rng.normal(22.2 if pos else 19.8, 17.0 if pos else 14.5, n).clip(0, 99)
        insulin_zero = rng.random(n) < (0.45 if pos else 0.50)
        insulin = np.where(
            insulin_zero,
            0.0,
            rng.lognormal(np.log(165.0 if pos else 120.0), 0.55, n),
        ).clip(0, 846)
        bmi = rng.normal(34.8 if pos else 30.6, 6.8 if pos else 7.4, n).clip(18.2, 67.1)
        dpf = rng.lognormal(np.log(0.50 if pos else 0.40), 0.55, n).clip(0.078, 2.42)
        age = (21 + rng.gamma(2.4 if pos else 1.4, 6.5 if pos else 8.0, n)).clip(21, 81)
        for i in range(n):
            rows.append(
                [
                    fmt(preg[i], 0),
                    fmt(glucose[i], 0),
                    fmt(bp[i], 0),
                    fmt(skin[i], 0),
                    fmt(insulin[i], 0),
                    fmt(bmi[i], 1),
                    fmt(dpf[i], 3),
                    fmt(age[i], 0),
                    label,
                ]
            )
    order = rng.permutation(len(rows))
    rows = [rows[i] for i in order]
    header = [
        "Pregnancies",
        "Glucose",
        "BloodPressure",
        "SkinThickness",
        "Insulin",
        "BMI",
        "DiabetesPedigreeFunction",
        "Age",
        "Outcome",
    ]
    write_csv(os.path.join(OUT, "diabetes.csv"), header, rows)
    write_schema(
        os.path.join(OUT, "diabetes.schema.json"),
        "Outcome",
        [(n, "numeric") for n in header[:-1]],
    )


# ----------------------------------------------------------------- adult ---

WORKCLASS = ["Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov",
             "Local-gov", "State-gov", "Without-pay", "Never-worked"]
EDUCATION = ["Bachelors", "Some-college", "11th", "HS-grad", "Prof-school",
             "Assoc-acdm", "Assoc-voc", "9th", "7th-8th", "12th", "Masters",
             "1st-4th", "10th", "Doctorate", "5th-6th", "Preschool"]
MARITAL = ["Married-civ-spouse", "Divorced", "Never-married", "Separated",
           "Widowed", "Married-spouse-absent", "Married-AF-spouse"]
OCCUPATION = ["Tech-support", "Craft-repair", "Other-service", "Sales",
              "Exec-managerial", "Prof-specialty", "Handlers-cleaners",
              "Machine-op-inspct", "Adm-clerical", "Farming-fishing",
              "Transport-moving", "Priv-house-serv", "Protective-serv",
              "Armed-Forces"]
RELATIONSHIP = ["Wife", "Own-child", "Husband", "Not-in-family",
                "Other-relative", "Unmarried"]
RACE = ["White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black"]
SEX = ["Female", "Male"]
COUNTRIES = ["United-States", "Cambodia", "England", "Puerto-Rico", "Canada",
             "Germany", "Outlying-US(Guam-USVI-etc)", "India", "Japan",
             "Greece", "South", "China", "Cuba", "Iran", "Honduras",
             "Philippines", "Italy", "Poland", "Jamaica", "Vietnam", "Mexico",
             "Portugal", "Ireland", "France", "Dominican-Republic", "Laos",
             "Ecuador", "Taiwan", "Haiti", "Columbia", "Hungary", "Guatemala",
             "Nicaragua", "Scotland", "Thailand", "Yugoslavia", "El-Salvador",
             "Trinadad&Tobago", "Peru", "Hong", "Holand-Netherlands"]


def categorical(rng, values, weights, n):
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    idx = rng.choice(len(values), size=n, p=w)
    return [values[i] for i in idx]


def make_adult(rng):
    n_total = 32600
    n_high = int(round(n_total * 0.2408))  # >50K share of the original
    n_low = n_total - n_high
    rows = []
    for label, n in ((" <=50K", n_low), (" >50K", n_high)):
        high = label == " >50K"
        age = rng.normal(44.0 if high else 36.9, 10.5 if high else 14.0, n).clip(17, 90)
        fnlwgt = rng.lognormal(np.log(178000), 0.52, n).clip(12285, 1484705)
        edunum = rng.normal(11.4 if high else 9.6, 2.4 if high else 2.4, n).clip(1, 16)
        gain_zero = rng.random(n) < (0.79 if high else 0.96)
        gain = np.where(gain_zero, 0.0, rng.lognormal(np.log(11000 if high else 3000), 0.8, n))
        gain = gain.clip(0, 99999)
        loss_zero = rng.random(n) < (0.91 if high else 0.97)
        loss = np.where(loss_zero, 0.0, rng.normal(1900 if high else 1650, 350, n))
        loss = loss.clip(0, 4356)
        hours = rng.normal(45.4 if high else 38.8, 11.0 if high else 12.3, n).clip(1, 99)

        wc_weights = [0.63, 0.09, 0.06, 0.04, 0.08, 0.05, 0.003, 0.002] if high else \
                     [0.71, 0.07, 0.02, 0.025, 0.06, 0.04, 0.006, 0.004]
        ed_weights = [0.25, 0.17, 0.01, 0.22, 0.06, 0.04, 0.04, 0.004, 0.006, 0.004,
                      0.13, 0.001, 0.006, 0.04, 0.001, 0.0005] if high else \
                     [0.14, 0.23, 0.04, 0.35, 0.01, 0.03, 0.04, 0.02, 0.022, 0.014,
                      0.04, 0.006, 0.03, 0.007, 0.012, 0.002]
        ma_weights = [0.85, 0.06, 0.05, 0.01, 0.01, 0.01, 0.003] if high else \
                     [0.34, 0.16, 0.41, 0.04, 0.035, 0.013, 0.002]
        oc_weights = [0.035, 0.12, 0.05, 0.13, 0.25, 0.24, 0.01, 0.03, 0.07, 0.015,
                      0.04, 0.0005, 0.028, 0.0005] if high else \
                     [0.03, 0.13, 0.12, 0.11, 0.08, 0.09, 0.05, 0.07, 0.13, 0.035,
                      0.055, 0.006, 0.02, 0.0005]
        re_weights = [0.09, 0.01, 0.75, 0.11, 0.005, 0.035] if high else \
                     [0.03, 0.20, 0.33, 0.28, 0.035, 0.125]
        ra_weights = [0.91, 0.035, 0.005, 0.004, 0.046] if high else \
                     [0.84, 0.03, 0.01, 0.009, 0.111]
        sx_weights = [0.15, 0.85] if high else [0.39, 0.61]
        co_weights = [0.92] + [0.08 / (len(COUNTRIES) - 1)] * (len(COUNTRIES) - 1)

        workclass = categorical(rng, WORKCLASS, wc_weights, n)
        education = categorical(rng, EDUCATION, ed_weights, n)
        marital = categorical(rng, MARITAL, ma_weights, n)
        occupation = categorical(rng, OCCUPATION, oc_weights, n)
        relationship = categorical(rng, RELATIONSHIP, re_weights, n)
        race = categorical(rng, RACE, ra_weights, n)
        sex = categorical(rng, SEX, sx_weights, n)
        country = categorical(rng, COUNTRIES, co_weights, n)

        # Label noise keeps the task at a realistic difficulty.
        flip = rng.random(n) < 0.10
        for i in range(n):
            out_label = label
            if flip[i]:
                out_label = " >50K" if label == " <=50K" else " <=50K"
            rows.append(
                [
                    fmt(age[i], 0),
                    workclass[i],
                    fmt(fnlwgt[i], 0),
                    education[i],
                    fmt(edunum[i], 0),
                    marital[i],
                    occupation[i],
                    relationship[i],
                    race[i],
                    sex[i],
                    fmt(gain[i], 0),
                    fmt(loss[i], 0),
                    fmt(hours[i], 0),
                    country[i],
                    out_label,
                ]
            )
    order = rng.permutation(len(rows))
    rows = [rows[i] for i in order]
    # Missing-value pattern of the original: workclass+occupation unknown
    # together, country unknown independently.
    missing_wc = rng.random(len(rows)) < 0.056
    missing_co = rng.random(len(rows)) < 0.018
    for i in range(len(rows)):
        if missing_wc[i]:
            rows[i][1] = "?"
            rows[i][6] = "?"
        if missing_co[i]:
            rows[i][13] = "?"
    header = ["age", "workclass", "fnlwgt", "education", "education-num",
              "marital-status", "occupation", "relationship", "race", "sex",
              "capital-gain", "capital-loss", "hours-per-week",
              "native-country", "income"]
    write_csv(os.path.join(OUT, "adult.csv"), header, rows)
    kinds = [
        ("age", "numeric"), ("workclass", "categorical"), ("fnlwgt", "numeric"),
        ("education", "categorical"), ("education-num", "numeric"),
        ("marital-status", "categorical"), ("occupation", "categorical"),
        ("relationship", "categorical"), ("race", "categorical"),
        ("sex", "categorical"), ("capital-gain", "numeric"),
        ("capital-loss", "numeric"), ("hours-per-week", "numeric"),
        ("native-country", "categorical"),
    ]
    write_schema(os.path.join(OUT, "adult.schema.json"), "income", kinds)


# ------------------------------------------------------------ arrhythmia ---

ARRHYTHMIA_CLASS_COUNTS = {
    1: 245, 2: 44, 3: 15, 4: 15, 5: 13, 6: 25, 7: 3, 8: 2,
    9: 9, 10: 50, 14: 4, 15: 5, 16: 22,
}


def make_arrhythmia(rng):
    n_features = 279
    n_informative = 30
    class_ids = sorted(ARRHYTHMIA_CLASS_COUNTS)
    # Per-feature base location/scale, wildly heterogeneous like ECG data.
    base_mu = rng.normal(0.0, 1.0, n_features) * rng.choice(
        [0.05, 0.5, 2.0, 10.0, 60.0], size=n_features
    )
    base_sigma = np.abs(rng.normal(0.0, 1.0, n_features)) * np.abs(base_mu * 0.3 + 1.0) + 0.02
    # Class signatures on the informative block.
    signatures = {
        c: rng.normal(0.0, 1.0, n_informative) for c in class_ids
    }
    zero_columns = set(rng.choice(np.arange(40, n_features), size=17, replace=False))

    separation = 1.35
    rows = []
    for c in class_ids:
        n = ARRHYTHMIA_CLASS_COUNTS[c]
        for _ in range(n):
            x = rng.normal(base_mu, base_sigma)
            # Demographics up front: age, sex, height, weight.
            x[0] = np.clip(rng.normal(46.5, 16.5), 1, 88)
            x[1] = float(rng.random() < 0.55)
            x[2] = np.clip(rng.normal(166.2, 11.0), 105, 190)
            x[3] = np.clip(rng.normal(68.2, 16.3), 6, 176)
            block = slice(4, 4 + n_informative)
            x[block] = (
                base_mu[block]
                + separation * signatures[c] * np.abs(base_sigma[block])
                + rng.normal(0.0, base_sigma[block])
            )
            for z in zero_columns:
                x[z] = 0.0
            rows.append([fmt(v, 3) for v in x] + [str(c)])
    order = rng.permutation(len(rows))
    rows = [rows[i] for i in order]
    header = (
        ["age", "sex", "height", "weight"]
        + [f"ch{i}" for i in range(4, n_features)]
        + ["class"]
    )
    write_csv(os.path.join(OUT, "arrhythmia.csv"), header, rows)
    write_schema(
        os.path.join(OUT, "arrhythmia.schema.json"),
        "class",
        [(n, "numeric") for n in header[:-1]],
    )


def main():
    os.makedirs(OUT, exist_ok=True)
    rng = np.random.default_rng(SEED)
    make_cancer()
    make_diabetes(rng)
    make_adult(rng)
    make_arrhythmia(rng)


if __name__ == "__main__":
    main()
