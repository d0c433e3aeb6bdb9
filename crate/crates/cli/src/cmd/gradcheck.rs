use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use dsrefine::train::gradcheck::{gradcheck, Component, GradcheckShape};
use serde::Serialize;

/// Any block above this relative error fails the run.
pub const FAIL_THRESHOLD: f64 = 1e-4;

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentArg {
    All,
    EnhanceMlp,
    EnhanceRecurrent,
    Dsrnet,
    Loss,
    EndToEnd,
}

impl ComponentArg {
    fn components(self) -> Vec<Component> {
        match self {
            ComponentArg::All => Component::ALL.to_vec(),
            ComponentArg::EnhanceMlp => vec![Component::EnhanceMlp],
            ComponentArg::EnhanceRecurrent => vec![Component::EnhanceRecurrent],
            ComponentArg::Dsrnet => vec![Component::Dsrnet],
            ComponentArg::Loss => vec![Component::Loss],
            ComponentArg::EndToEnd => vec![Component::EndToEnd],
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = ComponentArg::All)]
    pub component: ComponentArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: &GradcheckArgs) -> Result<()> {
    let mut failed = 0;
    for c in args.component.components() {
        let report = gradcheck(c, GradcheckShape::for_component(c), args.seed)?;
        for b in &report.blocks {
            let ok = b.max_rel_err <= FAIL_THRESHOLD;
            failed += usize::from(!ok);
            println!(
                "{:<18} {:<24} {:>10.3e} {}",
                c.name(),
                b.name,
                b.max_rel_err,
                if ok { "ok" } else { "FAIL" }
            );
        }
    }
    if failed > 0 {
        bail!("{failed} parameter blocks exceed relative error {FAIL_THRESHOLD:e}");
    }
    Ok(())
}
