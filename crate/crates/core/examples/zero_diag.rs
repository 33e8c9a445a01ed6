use fd2d_core::dataset::io::read_file;
use fd2d_core::models::checkpoint;
use fd2d_core::models::train::{predict_all, PreparedData};
use fd2d_core::models::{AnyModel, ModelSpec};
use fd2d_core::rate::{evaluate, Allocation};
use std::path::Path;

fn main() {
    let ds = read_file::<f64>(Path::new("/tmp/fd2d_smoke/test.fdds")).unwrap();
    let ckpt = checkpoint::read_file::<f64>(Path::new("/tmp/fd2d_smoke/sp.fdck")).unwrap();
    let spec = ModelSpec {
        n_pairs: ckpt.config.n_pairs,
        n_channels: ckpt.config.n_channels,
        n_levels: ckpt.config.n_levels(),
        hp: ckpt.hp.clone(),
    };
    let model = AnyModel::new(ckpt.kind, spec);
    let data = PreparedData::from_samples(&ds.samples, &ckpt.stats, ds.config.n_channels, ds.config.n_levels());
    let preds = predict_all(&model, &ckpt.store, &data, 1024).unwrap();
    let mut zero_pred = 0;
    let mut zero_true_ch = 0; // label channels + predicted powers
    let mut zero_true_pw = 0; // predicted channels + label powers
    let mut pw_over = 0usize;
    let mut pw_under = 0usize;
    let n = ds.samples.len();
    for (s, p) in ds.samples.iter().zip(&preds) {
        let feas = |a: &Allocation| evaluate(&s.csi, a, &ds.config).feasible;
        if !feas(p) { zero_pred += 1; }
        let lab = s.allocation();
        let mixed_ch = Allocation { channel: lab.channel.clone(), power_level: p.power_level.clone() };
        if !feas(&mixed_ch) { zero_true_ch += 1; }
        let mixed_pw = Allocation { channel: p.channel.clone(), power_level: lab.power_level.clone() };
        if !feas(&mixed_pw) { zero_true_pw += 1; }
        for (pp, lp) in p.power_level.iter().zip(&lab.power_level) {
            if pp > lp { pw_over += 1; }
            if pp < lp { pw_under += 1; }
        }
    }
    println!("samples {n}");
    println!("infeasible(pred ch, pred pw)  = {:.3}", zero_pred as f64 / n as f64);
    println!("infeasible(true ch, pred pw)  = {:.3}", zero_true_ch as f64 / n as f64);
    println!("infeasible(pred ch, true pw)  = {:.3}", zero_true_pw as f64 / n as f64);
    println!("power overshoot rate {:.3}, undershoot {:.3}", pw_over as f64 / (4 * n) as f64, pw_under as f64 / (4 * n) as f64);
}
