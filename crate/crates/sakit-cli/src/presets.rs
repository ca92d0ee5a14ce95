//! Shipped experiment files.

use crate::config::{parse_config, ExperimentConfig};

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub text: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "td_robust",
        description: "TD(0) on a 10-state reward process, averaged iterate at the robust constant step",
        text: "\
# TD(0) with linear features on a random 10-state Markov reward process. Each horizon T runs
# at its own robust constant step; the averaged iterate should approach the projected
# fixed point at the rate 1/sqrt(T).
[problem]
kind = td
states = 10
features = 3
lambda = 0.5
seed = 1

[algorithm]
schedule = robust
T = 100, 300, 1000, 3000, 10000
seeds = 64
master_seed = 0
stopping = average
w0 = 0

[checks]
bound = true
slope_min = -0.65
slope_max = -0.35
",
    },
    Preset {
        name: "spider_quadratic",
        description: "SA-SPIDER on a quadratic finite sum with distinct Hessians at the tuned step",
        text: "\
# SA-SPIDER on a finite sum of 64 quadratics with distinct Hessians. The gradient field has
# no constant noise term, so the tuned step is gamma_max/2 and the averaged error decays
# like 1/T.
[problem]
kind = spider
n = 64
d = 10
mu = 0.1
l = 1
spread = 1
seed = 1
hessians = distinct
k_in = 8
b_vr = 8

[algorithm]
schedule = tuned
T = 1000, 3000, 10000, 30000, 100000
seeds = 8
master_seed = 0

[checks]
bound = true
slope_max = -0.8
",
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

impl Preset {
    pub fn config(&self) -> ExperimentConfig {
        parse_config(self.text).expect("shipped presets parse")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_round_trip() {
        for p in PRESETS {
            let c = p.config();
            assert_eq!(parse_config(&c.serialize()).unwrap(), c, "{}", p.name);
        }
        assert!(find("td_robust").is_some());
        assert!(find("nope").is_none());
    }
}
