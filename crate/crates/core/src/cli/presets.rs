//! Named parameter sets, each bound to one subcommand.

pub struct Preset {
    pub name: &'static str,
    pub command: &'static str,
    pub about: &'static str,
    pub values: &'static [(&'static str, &'static str)],
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "fig1",
        command: "two-firm",
        about: "constant meeting rates: share of A against frictions",
        values: &[("mode", "constant"), ("p_a", "0.5,0.6,0.7,0.8,0.9"), ("r_f", "0:5:101")],
    },
    Preset {
        name: "fig2",
        command: "two-firm",
        about: "proportional meeting rates: share of A against frictions",
        values: &[("mode", "proportional"), ("p_a", "0.5,0.6,0.7,0.8,0.9"), ("r_f", "0:5:101")],
    },
    Preset {
        name: "fig3",
        command: "two-firm",
        about: "affine rates at r_f = 0.7: share of A against p_a",
        values: &[
            ("mode", "affine"),
            ("alpha", "0,0.5,0.85,1"),
            ("r_f", "0.7"),
            ("p_a", "0:1:101"),
        ],
    },
    Preset {
        name: "fig4",
        command: "two-firm",
        about: "affine rates, firm preferred by 10% of agents, against frictions",
        values: &[
            ("mode", "affine"),
            ("alpha", "0,0.5,0.85,1"),
            ("p_a", "0.1"),
            ("r_f", "0:5:101"),
        ],
    },
    Preset {
        name: "fig5",
        command: "continuum",
        about: "constant rates, narrow block preferences, several friction levels",
        values: &[("alpha", "0"), ("ell", "block:0.4,0.6,5"), ("r_f", "0.01,0.1,0.5,1,3")],
    },
    Preset {
        name: "fig6",
        command: "sweep",
        about: "constant rates: share variance against frictions",
        values: &[("alpha", "0"), ("ells", "block:0.4,0.6,5"), ("r_f", "0.05:5:40")],
    },
    Preset {
        name: "fig7a",
        command: "continuum",
        about: "alpha = 0.8, block preferences on [0.25, 0.75]",
        values: &[("alpha", "0.8"), ("ell", "block:0.25,0.75,2"), ("r_f", "0.2,1,3,8")],
    },
    Preset {
        name: "fig7b",
        command: "continuum",
        about: "alpha = 0.99, block preferences on [0.25, 0.75]",
        values: &[("alpha", "0.99"), ("ell", "block:0.25,0.75,2"), ("r_f", "0.2,1,3,8")],
    },
    Preset {
        name: "fig7c",
        command: "continuum",
        about: "alpha = 0.95, asymmetric double-peaked preferences",
        values: &[
            ("alpha", "0.95"),
            ("ell", "double:0.3,0.06,0.6,0.06,0.6"),
            ("r_f", "0.5,1,3,8"),
        ],
    },
    Preset {
        name: "eff-a",
        command: "efficiency",
        about: "efficiency and best responses, Gaussian preferences, r_f = 0.2",
        values: &[("ell", "gaussian:0.5,0.3"), ("r_f", "0.2")],
    },
    Preset {
        name: "eff-b",
        command: "efficiency",
        about: "efficiency and best responses, Gaussian preferences, r_f = 0.5",
        values: &[("ell", "gaussian:0.5,0.3"), ("r_f", "0.5")],
    },
    Preset {
        name: "eff-ut",
        command: "efficiency",
        about: "efficiency next to one agent's utility when the others use the cap",
        values: &[
            ("ell", "gaussian:0.5,0.3"),
            ("r_f", "0.2"),
            ("strategic", "false"),
            ("alpha_tilde", "0.999"),
        ],
    },
    Preset {
        name: "fig8",
        command: "synth-panel",
        about: "synthetic panel at alpha = 0.75 with inflow-share scatter and estimates",
        values: &[("alpha", "0.75"), ("estimate", "true")],
    },
    Preset {
        name: "fig9",
        command: "synth-panel",
        about: "synthetic panel with alpha rising 0.63 to 0.84 and its yearly estimates",
        values: &[
            ("alpha", "0.63:0.84:21"),
            ("years", "21"),
            ("first_year", "1996"),
            ("markets", "20"),
            ("buyers", "10000"),
            ("estimate", "true"),
        ],
    },
    Preset {
        name: "fig10",
        command: "sweep",
        about: "alpha = 0.75, Gaussian preferences of two spreads, low frictions",
        values: &[
            ("alpha", "0.75"),
            ("ells", "gaussian:0.5,0.1;gaussian:0.5,0.2"),
            ("r_f", "0.02:0.3:15"),
        ],
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}
