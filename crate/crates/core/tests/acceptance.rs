//! One pass/fail line per acceptance criterion. Configurations come from `configs/`.

use std::path::PathBuf;
use std::time::Instant;

use tdscope::greens::Background;
use tdscope::harness::{emit_outputs, run_study, Check, ExperimentConfig, Status, StudyOutcome};
use tdscope::materials::{iso_contrast, Contrast, SymTensor3};
use tdscope::polarization::{mz_ball_iso, mz_ellipsoid, mz_general};
use tdscope::vie::{operator_norm, solve_density, NormOperator, VieSystem};
use tdscope::voxel::{voxelize, Shape};
use tdscope::{CVec3, Complex64, Mat3, Vec3};

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn timed(cfg: &ExperimentConfig) -> (StudyOutcome, f64) {
    let t = Instant::now();
    let out = run_study(cfg).unwrap_or_else(|e| panic!("{} study: {e}", cfg.study.name()));
    (out, t.elapsed().as_secs_f64())
}

fn check<'a>(out: &'a StudyOutcome, name: &str) -> &'a Check {
    out.report
        .checks
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("no check named {name}"))
}

fn passed(out: &StudyOutcome, names: &[&str]) -> bool {
    names.iter().all(|n| check(out, n).status == Status::Pass)
}

struct Ledger(Vec<(usize, bool)>);

impl Ledger {
    fn record(&mut self, id: usize, ok: bool, detail: String) {
        println!("criterion {id:>2}: {} | {detail}", if ok { "PASS" } else { "FAIL" });
        self.0.push((id, ok));
    }
}

fn sign_criterion(l: &mut Ledger) {
    let (pos, t_pos) = timed(&config("sign_iso.toml"));
    let (neg, t_neg) = timed(&config("sign_iso_flipped.toml"));
    let pred = |o: &StudyOutcome| o.report.results["predicted_sign"].as_f64().unwrap();
    let all_neg = pos.map.as_ref().unwrap().values.iter().all(|&v| v < 0.0);
    let all_pos = neg.map.as_ref().unwrap().values.iter().all(|&v| v > 0.0);
    let cert = check(&pos, "certificate").value;
    let ok = pos.report.status == Status::Pass
        && neg.report.status == Status::Pass
        && cert < 1.0
        && all_neg
        && all_pos
        && pred(&pos) == -1.0
        && pred(&neg) == 1.0
        && pos.map.as_ref().unwrap().len() == 729
        && t_pos < 300.0;
    l.record(
        1,
        ok,
        format!("certificate {cert:.4} < 1, T < 0 on 729/729 ({all_neg}), flipped T > 0 ({all_pos}), {t_pos:.0} s and {t_neg:.0} s"),
    );
}

fn decay_criteria(l: &mut Ledger) {
    let (mid, t_mid) = timed(&config("decay.toml"));
    let (pair, t_pair) = timed(&config("decay_alpha_pair.toml"));
    let slope = check(&mid, "slope_alpha_0.5").value;
    let spread = check(&pair, "alpha_spread").value;
    let ok = passed(&mid, &["slope_alpha_0.5"]) && passed(&pair, &["alpha_spread"]) && t_mid + t_pair < 600.0;
    l.record(
        2,
        ok,
        format!("slope(α=0.5) {slope:.3} in [-2.3, -1.7], |slope(0.3) - slope(0.7)| {spread:.3} <= 0.2, {:.0} s", t_mid + t_pair),
    );
    let (stat, _) = timed(&config("decay_static.toml"));
    let s = check(&stat, "slope_alpha_0.5").value;
    l.record(3, stat.report.status == Status::Pass, format!("static slope {s:.2e} in [-0.3, 0.3]"));
}

fn oracle_criteria(l: &mut Ledger) -> StudyOutcome {
    let (o, _) = timed(&config("oracles.toml"));
    let names = ["g_imag", "l_series", "l_origin", "g_from_l", "farfield", "asymptotic"];
    let detail = names
        .iter()
        .map(|n| format!("{n} {:.1e}", check(&o, n).value))
        .collect::<Vec<_>>()
        .join(", ");
    l.record(4, passed(&o, &names), detail);
    let e = ["e_conj", "e_unimodular"];
    l.record(
        5,
        passed(&o, &e),
        format!("E identity {:.1e} <= 1e-6, unimodularity {:.1e} <= 1e-12", check(&o, e[0]).value, check(&o, e[1]).value),
    );
    o
}

fn static_physics(l: &mut Ledger) {
    let bg = Background::isotropic(1.0, 0.0).unwrap();
    let grid = voxelize(&Shape::ball(Vec3::zeros(), 0.5), 1.0 / 20.0).unwrap();
    let sys = VieSystem::assemble(&grid, &bg).unwrap();
    let c: Contrast = iso_contrast(1.0, 2.0).unwrap().into();
    let e = vec![CVec3::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)); sys.len()];
    let h = solve_density(&sys, &c, &e).unwrap();
    let factor = h.iter().map(|v| v[0].re).sum::<f64>() / h.len() as f64;
    let w = sys.apply_gradw(&e);
    let action = w.iter().map(|v| v[0].re).sum::<f64>() / w.len() as f64;
    let r0 = operator_norm(&sys, &NormOperator::R, 1).unwrap().value;
    let ok = (factor - 0.75).abs() < 0.02 * 0.75 && (action + 1.0 / 3.0).abs() < 0.02 / 3.0 && (0.9..=1.05).contains(&r0);
    l.record(
        6,
        ok,
        format!("interior factor {factor:.4} (0.75), self-action {action:.4} (-1/3), ||R_0|| {r0:.4} in [0.9, 1.05]"),
    );
}

fn polarization(l: &mut Ledger) {
    let ball = mz_ball_iso(1.0, 1.0).unwrap();
    let sphere = mz_ellipsoid(&SymTensor3::iso(1.0), &SymTensor3::iso(2.0), &Vec3::repeat(1.0)).unwrap();
    let closed = (ball.m - sphere.m).amax();
    let exact = ball.m == Mat3::identity() * std::f64::consts::PI;
    let grid = voxelize(&Shape::ball(Vec3::zeros(), 1.0), 0.125).unwrap();
    let general = mz_general(&SymTensor3::iso(1.0), &SymTensor3::iso(2.0), &grid).unwrap();
    let gen = (general.m - ball.m).amax() / ball.m.amax();
    l.record(
        7,
        closed < 1e-12 && exact && gen < 0.02,
        format!("ball vs sphere {closed:.1e}, M_z = pi*I exactly ({exact}), voxel quadrature {:.2}%", 100.0 * gen),
    );
}

fn finite_delta(l: &mut Ledger) {
    let (o, t) = timed(&config("finite_delta.toml"));
    let r = check(&o, "ratio_smallest_delta").value;
    let ok = o.report.status == Status::Pass && t < 900.0;
    l.record(9, ok, format!("|ratio - 1| = {r:.2e} at the smallest δ, monotone ({}), {t:.0} s", check(&o, "monotone_improvement").status == Status::Pass));
}

fn born(l: &mut Ledger) {
    let (o, _) = timed(&config("born.toml"));
    let names: Vec<String> = o.report.checks.iter().map(|c| format!("{} {:.3}", c.name, c.value)).collect();
    l.record(10, o.report.status == Status::Pass, names.join(", "));
}

fn determinism(l: &mut Ledger) {
    let mut sign = config("sign_iso.toml");
    sign.scatterer.h = 0.125;
    sign.sampling.n = 5;
    let mut same = true;
    for cfg in [sign, config("oracles.toml"), config("decay_static.toml")] {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            emit_outputs(&run_study(&cfg).unwrap(), d.path(), None).unwrap();
        }
        let mut names: Vec<_> = std::fs::read_dir(dirs[0].path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for n in names {
            let a = std::fs::read(dirs[0].path().join(&n)).unwrap();
            let b = std::fs::read(dirs[1].path().join(&n)).unwrap();
            same &= a == b;
        }
    }
    l.record(11, same, "sign, oracle and decay outputs byte-identical across two runs".into());
}

#[test]
fn acceptance_criteria() {
    let mut l = Ledger(Vec::new());
    sign_criterion(&mut l);
    decay_criteria(&mut l);
    let oracles = oracle_criteria(&mut l);
    static_physics(&mut l);
    polarization(&mut l);
    let rec = check(&oracles, "reciprocity");
    l.record(
        8,
        rec.status == Status::Pass,
        format!("{} pairs, relative mismatch {:.1e} < 1e-3", oracles.report.results["reciprocity_pairs"], rec.value),
    );
    finite_delta(&mut l);
    born(&mut l);
    determinism(&mut l);
    let failed: Vec<usize> = l.0.iter().filter(|(_, ok)| !ok).map(|(id, _)| *id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
