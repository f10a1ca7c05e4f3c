use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimators::{EstimatorKind, EstimatorSettings, LatentKind};
use crate::oracle::{audit_estimator, AuditOptions, EnumerationTestbed, EstimatorAudit, TestbedCost};

/// Bit count and seed of the largest Bernoulli table testbed.
pub const TABLE_BITS: usize = 8;
pub const TABLE_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Unbiased,
    Biased,
}

#[derive(Debug, Clone)]
pub struct AuditCase {
    pub label: String,
    pub settings: EstimatorSettings,
    pub testbed: EnumerationTestbed,
    pub expect: Expectation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub label: String,
    pub expect: Expectation,
    pub passed: bool,
    pub audit: EstimatorAudit,
}

// Variance normalization rescales the mean gradient whenever the running
// signal deviation exceeds one, so the unbiasedness audits run without it.
fn unbiased_family() -> Vec<(&'static str, EstimatorSettings)> {
    vec![
        ("sf", EstimatorSettings::new(EstimatorKind::Sf)),
        ("sf_baseline", EstimatorSettings::new(EstimatorKind::Sf).with_centering(true)),
        ("nvil", EstimatorSettings::new(EstimatorKind::Nvil)),
        ("muprop", EstimatorSettings::new(EstimatorKind::Muprop)),
    ]
    .into_iter()
    .map(|(name, s)| (name, s.with_normalization(false)))
    .collect()
}

pub fn constant_testbed() -> Result<EnumerationTestbed> {
    EnumerationTestbed::new(
        "cat3_constant",
        LatentKind::Categorical { k: 3 },
        vec![0.1, 0.5, -0.2],
        TestbedCost::Constant { value: 4.0 },
    )
}

/// The unbiasedness and bias cases of the estimator audit.
pub fn standard_audit_cases() -> Result<Vec<AuditCase>> {
    let testbeds = vec![
        EnumerationTestbed::categorical_linear(),
        EnumerationTestbed::categorical_quadratic(),
        EnumerationTestbed::bernoulli_table(TABLE_BITS, TABLE_SEED)?,
    ];
    let mut cases = Vec::new();
    for tb in &testbeds {
        for (name, s) in unbiased_family() {
            cases.push(AuditCase {
                label: format!("{name}@{}", tb.id),
                settings: s,
                testbed: tb.clone(),
                expect: Expectation::Unbiased,
            });
        }
    }
    cases.push(AuditCase {
        label: "sf@cat3_constant".into(),
        settings: EstimatorSettings::new(EstimatorKind::Sf).with_normalization(false),
        testbed: constant_testbed()?,
        expect: Expectation::Unbiased,
    });
    cases.push(AuditCase {
        label: "darn@bern1_cubic".into(),
        settings: EstimatorSettings::new(EstimatorKind::Darn),
        testbed: EnumerationTestbed::bernoulli_cubic(),
        expect: Expectation::Biased,
    });
    Ok(cases)
}

pub fn run_audit_case(case: &AuditCase, trials: usize, seed: u64) -> Result<AuditOutcome> {
    let audit = audit_estimator(&case.settings, &case.testbed, &AuditOptions::new(trials, seed))?;
    let passed = match case.expect {
        Expectation::Unbiased => audit.unbiased(),
        Expectation::Biased => audit.biased(),
    };
    Ok(AuditOutcome {
        label: case.label.clone(),
        expect: case.expect,
        passed,
        audit,
    })
}

pub fn run_audit_suite(trials: usize, seed: u64) -> Result<Vec<AuditOutcome>> {
    standard_audit_cases()?
        .iter()
        .map(|c| run_audit_case(c, trials, seed))
        .collect()
}

/// Paired Gumbel-Softmax (τ = 1) and plain score-function audits on the
/// `k = 3` linear testbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComparison {
    pub gs: EstimatorAudit,
    pub sf: EstimatorAudit,
}

impl VarianceComparison {
    pub fn gs_lower(&self) -> bool {
        self.gs.total_variance() < self.sf.total_variance()
    }
}

pub fn variance_comparison(trials: usize, seed: u64) -> Result<VarianceComparison> {
    let tb = EnumerationTestbed::categorical_linear();
    let opts = AuditOptions::new(trials, seed);
    Ok(VarianceComparison {
        gs: audit_estimator(&EstimatorSettings::new(EstimatorKind::Gs).with_tau(1.0), &tb, &opts)?,
        sf: audit_estimator(&EstimatorSettings::new(EstimatorKind::Sf).with_normalization(false), &tb, &opts)?,
    })
}
