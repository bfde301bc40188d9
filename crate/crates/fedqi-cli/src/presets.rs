//! Named scenario presets: dataset/model pair plus federation size.
//!
//! `mm*` = MNIST + MLP, `mc*` = CIFAR-10 + MLP; the number is the
//! participant count, with 2-of-5, 5-of-25, and 10-of-100 selection.

use crate::config::ConfigBuilder;

#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub dataset: &'static str,
    pub participants: usize,
    pub select: usize,
    pub description: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "mm5",
        dataset: "mnist",
        participants: 5,
        select: 2,
        description: "MNIST MLP, 2 of 5 participants per round",
    },
    Preset {
        name: "mm25",
        dataset: "mnist",
        participants: 25,
        select: 5,
        description: "MNIST MLP, 5 of 25 participants per round",
    },
    Preset {
        name: "mm100",
        dataset: "mnist",
        participants: 100,
        select: 10,
        description: "MNIST MLP, 10 of 100 participants per round",
    },
    Preset {
        name: "mc5",
        dataset: "cifar10",
        participants: 5,
        select: 2,
        description: "CIFAR-10 MLP, 2 of 5 participants per round",
    },
    Preset {
        name: "mc25",
        dataset: "cifar10",
        participants: 25,
        select: 5,
        description: "CIFAR-10 MLP, 5 of 25 participants per round",
    },
    Preset {
        name: "mc100",
        dataset: "cifar10",
        participants: 100,
        select: 10,
        description: "CIFAR-10 MLP, 10 of 100 participants per round",
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

impl Preset {
    pub fn apply(&self, builder: &mut ConfigBuilder) {
        builder.dataset = Some(self.dataset.into());
        builder.model = Some("mlp".into());
        builder.participants = Some(self.participants.to_string());
        builder.select = Some(self.select.to_string());
        builder.rounds = Some("100".into());
        builder.folds = Some("10".into());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve_to_valid_configs() {
        for preset in PRESETS {
            let mut b = ConfigBuilder::default();
            b.set("preset", preset.name).unwrap();
            let cfg = b.build().unwrap();
            assert_eq!(cfg.participants, preset.participants);
            assert_eq!(cfg.select_count, preset.select);
            assert_eq!(cfg.rounds, 100);
            assert_eq!(cfg.folds, 10);
        }
    }

    #[test]
    fn unknown_preset_is_an_error() {
        let mut b = ConfigBuilder::default();
        assert!(b.set("preset", "zz9").is_err());
    }
}
