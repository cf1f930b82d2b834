//! Runs every acceptance criterion once and prints one PASS/FAIL line each.
//! Exits non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use isoseg::energy::EnergyTerms;
use isoseg::experiments::{
    occlusion_experiment, sweep_k, tracking_experiment, OcclusionConfig, OcclusionReport, SequenceKind,
    SweepConfig, SweepRow, TrackingConfig, TrackingRun,
};
use isoseg::methods::Method;

use common::*;

fn descent(exp1: &OcclusionReport, sweep: &[SweepRow], tracking: &[TrackingRun]) -> Check {
    let mut traces: Vec<&[EnergyTerms]> = Vec::new();
    traces.extend(exp1.runs.iter().map(|r| r.result.trace.as_slice()));
    traces.extend(sweep.iter().map(|r| r.trace.as_slice()));
    for run in tracking {
        traces.extend(run.traces.iter().filter(|t| !t.is_empty()).map(Vec::as_slice));
    }
    let bad = traces.iter().filter(|t| !is_descending(t)).count();
    Check::new(bad == 0, format!("{} of {} traces non-increasing", traces.len() - bad, traces.len()))
}

fn occlusion(report: &OcclusionReport) -> Check {
    let d = |m| report.run(m).dice;
    let e = |m| report.run(m).result.final_energy();
    let pass = d(Method::ESAd) >= 0.85
        && d(Method::ESAc) >= 0.85
        && d(Method::Cv) < d(Method::ESAd)
        && d(Method::CvS) < d(Method::ESAd)
        && e(Method::ESAd) <= e(Method::ESAc) + 1e-6;
    Check::new(
        pass,
        format!(
            "dice esad {:.4} esac {:.4} cvs {:.4} cv {:.4}; energy esad {:.1} esac {:.1}",
            d(Method::ESAd),
            d(Method::ESAc),
            d(Method::CvS),
            d(Method::Cv),
            e(Method::ESAd),
            e(Method::ESAc)
        ),
    )
}

fn sweep(rows: &[SweepRow]) -> Check {
    let row = |k, m| rows.iter().find(|r| r.k == k && r.method == m).expect("swept");
    let decreasing = |m| {
        let mut ks: Vec<usize> = rows.iter().filter(|r| r.method == m).map(|r| r.k).collect();
        ks.sort();
        ks.windows(2).all(|p| row(p[1], m).relative_energy < row(p[0], m).relative_energy)
    };
    let cvs = (row(3, Method::CvS).seg_error, row(30, Method::CvS).seg_error);
    let esa = (row(3, Method::ESAd).seg_error, row(30, Method::ESAd).seg_error);
    let pass = cvs.1 > cvs.0 && esa.1 <= esa.0 && decreasing(Method::CvS) && decreasing(Method::ESAd);
    Check::new(
        pass,
        format!(
            "seg_error K=3 -> 30: cvs {} -> {}, esa {} -> {}; relative energy decreasing cvs {} esa {}",
            cvs.0,
            cvs.1,
            esa.0,
            esa.1,
            decreasing(Method::CvS),
            decreasing(Method::ESAd)
        ),
    )
}

fn tracking(runs: &[TrackingRun]) -> Check {
    let mean = |m| runs.iter().find(|r| r.method == m).expect("tracked").mean_dice();
    let (esac, cvs) = (mean(Method::ESAc), mean(Method::CvS));
    Check::new(esac >= cvs + 0.05, format!("mean dice esac {esac:.4} cvs {cvs:.4}"))
}

fn all(checks: Vec<Check>) -> Check {
    let pass = checks.iter().all(|c| c.pass);
    let detail = checks.into_iter().map(|c| c.detail).collect::<Vec<_>>().join("; ");
    Check::new(pass, detail)
}

fn main() -> ExitCode {
    let start = Instant::now();
    let exp1 = occlusion_experiment(&OcclusionConfig::default()).expect("occlusion experiment runs");
    let rows = sweep_k(&SweepConfig::default()).expect("sweep runs");
    let runs = tracking_experiment(&TrackingConfig::new(SequenceKind::LowContrast), &[Method::CvS, Method::ESAc])
        .expect("tracking runs");

    let results = [
        ("1 gradient consistency", check_gradients(50)),
        ("2 descent", descent(&exp1, &rows, &runs)),
        ("3 occlusion experiment", occlusion(&exp1)),
        ("4 shape-mode sweep", sweep(&rows)),
        ("5 photo-geometric invariance", check_invariance()),
        ("6 oracle equivalences", all(vec![check_sdf_oracle(), check_profile_oracle(), check_disc_integrals()])),
        ("7 pca", check_pca()),
        ("8 tracking", tracking(&runs)),
    ];
    let mut failed = 0;
    for (name, check) in &results {
        let tag = if check.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {}", check.detail);
        failed += usize::from(!check.pass);
    }
    println!(
        "{} of {} criteria passed in {:.0} s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
