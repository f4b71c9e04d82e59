//! `owl list`: systems, criteria and presets with their parameter
//! schemas, in plain text or JSON.

use serde::Serialize;

use crate::config::CRITERION_NAMES;
use crate::presets::PRESET_NAMES;
use owl::benchmarks::SYSTEM_NAMES;

#[derive(Serialize)]
struct Listing {
    systems: Vec<Entry>,
    criteria: Vec<Entry>,
    presets: Vec<Entry>,
}

#[derive(Serialize)]
struct Entry {
    name: &'static str,
    summary: &'static str,
    parameters: Vec<&'static str>,
}

fn system_entries() -> Vec<Entry> {
    let summaries = [
        "2-D linear map, a=(0.8, 1.3), input variances (1.4, 0.6)",
        "2-D linear map, a=(0.01, 2.0), input variances (2.0, 0.2)",
        "20-D linear map, observation noise 0.05",
        "20-D linear map, observation noise 0.5",
        "2-D cubic map, dominant z2 direction, noise 1e-4",
        "2-D cubic map, comparable directions, noise 1e-4",
    ];
    SYSTEM_NAMES
        .iter()
        .zip(summaries)
        .map(|(name, summary)| Entry {
            name,
            summary,
            parameters: if name.starts_with("linear20d") {
                vec!["system_options.variance_reading (abs-cubed | abs-whole, required)"]
            } else {
                vec!["system_options.init_normalize (bool, default false)"]
            },
        })
        .collect()
}

fn criterion_entries() -> Vec<Entry> {
    let table: [(&str, &str, Vec<&'static str>); 10] = [
        ("mu_c", "mean model error tr[S'^-1 R], minimized, gradient", vec![]),
        ("sigma_c", "variance of the model error, minimized, 2-D grid only", vec![]),
        (
            "mi",
            "direct mutual information (KDE entropy), maximized, 2-D grid only",
            vec!["criterion_params.mc_samples (default budgets.criterion_mc)"],
        ),
        (
            "mi_gauss",
            "Gaussian approximation of the mutual information, maximized, 2-D grid only",
            vec!["criterion_params.mc_samples"],
        ),
        ("q_inf", "output-weighted criterion with (p1, p2) = (0, 1), minimized, gradient", vec![]),
        (
            "q_beta",
            "output-weighted criterion with Gaussian weight fit over beta deviations",
            vec!["criterion_params.beta (required)"],
        ),
        (
            "q",
            "output-weighted criterion with explicit weights",
            vec!["criterion_params.p1 (default 0)", "criterion_params.p2 (default 1)"],
        ),
        (
            "mi_unknown_var",
            "mutual information with inferred noise variance, maximized, 2-D grid only",
            vec!["criterion_params.mc_samples", "noise.mode = inferred"],
        ),
        (
            "mi_unknown_var_gauss",
            "Gaussian-output variant of mi_unknown_var",
            vec!["criterion_params.mc_samples", "noise.mode = inferred"],
        ),
        ("monte_carlo", "baseline: random input draw projected on the feasible set", vec![]),
    ];
    debug_assert_eq!(table.len(), CRITERION_NAMES.len());
    table
        .into_iter()
        .map(|(name, summary, parameters)| Entry { name, summary, parameters })
        .collect()
}

fn preset_entries() -> Vec<Entry> {
    let summaries = [
        "2-D linear cases: mi, mi_gauss, mu_c, q_inf, monte_carlo",
        "20-D linear low/high noise: mu_c, q_inf, monte_carlo",
        "20-D direction statistics: mu_c, q_inf",
        "nonlinear 2-D: mu_c, q_001",
        "Q-weight sweep in 20-D: q_inf, q_beta{2,3}, q_001, q_0001",
        "2-D known vs inferred variance: mu_c, q_inf, mi(_gauss), mi_unknown_var(_gauss), monte_carlo",
    ];
    PRESET_NAMES
        .iter()
        .zip(summaries)
        .map(|(name, summary)| Entry {
            name,
            summary,
            parameters: vec!["--scale (full | desk)", "--seed"],
        })
        .collect()
}

pub fn render(json: bool) -> String {
    let listing = Listing {
        systems: system_entries(),
        criteria: criterion_entries(),
        presets: preset_entries(),
    };
    if json {
        let mut s = serde_json::to_string_pretty(&listing).expect("static data serializes");
        s.push('\n');
        return s;
    }
    let mut out = String::new();
    for (title, entries) in [
        ("systems", &listing.systems),
        ("criteria", &listing.criteria),
        ("presets", &listing.presets),
    ] {
        out.push_str(title);
        out.push('\n');
        for e in entries {
            out.push_str(&format!("  {:<22} {}\n", e.name, e.summary));
            for p in &e.parameters {
                out.push_str(&format!("  {:<22}   param: {}\n", "", p));
            }
        }
        out.push('\n');
    }
    out
}
