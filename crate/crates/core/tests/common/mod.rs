#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stadnet::model::{KeypointFrame, Point2, Slot, VideoSample, POINTS_PER_FRAME};

pub type Pt = Option<(f64, f64)>;

/// Straightforward whole-video reference for the skeleton filter. Works on a
/// dense `[frame][point]` grid; window repairs are written back into the grid
/// so later windows see them, exactly like a ring buffer of owned frames.
pub fn reference_filter(frames: &[Vec<Pt>], window: usize, rbar: u32, sigma: f64) -> Vec<Vec<Pt>> {
    let n = frames.len();
    let points = frames.first().map_or(0, |f| f.len());
    let mut grid = frames.to_vec();
    let mut r = vec![0u32; points];

    let c = (window - 1) / 2;
    let mut kernel: Vec<f64> = (0..window)
        .map(|j| {
            let d = j as f64 - c as f64;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= total;
    }

    let mut out = Vec::new();
    for t in 0..n {
        let start = (t + 1).saturating_sub(window);
        for i in 0..points {
            if t == start {
                r[i] = 0;
                continue;
            }
            let before = start..t;
            let all_present = before.clone().all(|s| grid[s][i].is_some());
            let all_missing = before.clone().all(|s| grid[s][i].is_none());
            match grid[t][i] {
                None if all_present => {
                    r[i] += 1;
                    if r[i] <= rbar {
                        grid[t][i] = grid[t - 1][i];
                    } else {
                        for s in before {
                            grid[s][i] = None;
                        }
                        r[i] = 0;
                    }
                }
                None => r[i] = 0,
                Some(p) => {
                    r[i] = 0;
                    if all_missing {
                        for s in before {
                            grid[s][i] = Some(p);
                        }
                    }
                }
            }
        }
        if t + 1 >= window {
            let mid = start + c;
            let mut frame = grid[mid].clone();
            for i in 0..points {
                let Some((cx, cy)) = grid[mid][i] else { continue };
                let (mut sx, mut sy, mut den) = (0.0, 0.0, 0.0);
                for (j, w) in kernel.iter().enumerate() {
                    if let Some((x, y)) = grid[start + j][i] {
                        sx += w * (x - cx);
                        sy += w * (y - cy);
                        den += w;
                    }
                }
                frame[i] = Some((cx + sx / den, cy + sy / den));
            }
            out.push(frame);
        }
    }
    out
}

pub fn to_grid(sample: &VideoSample) -> Vec<Vec<Pt>> {
    sample
        .frames
        .iter()
        .map(|f| (0..POINTS_PER_FRAME).map(|i| f.point(i).map(|p| (p.x, p.y))).collect())
        .collect()
}

pub fn from_slot(s: Slot) -> Pt {
    s.map(|p| (p.x, p.y))
}

/// Random walk of every point with independent dropout and occasional long
/// gaps so the replacement budget is exhausted in some cases.
pub fn random_video(rng: &mut ChaCha8Rng, len: usize, dropout: f64) -> VideoSample {
    let mut pos: Vec<(f64, f64)> = (0..POINTS_PER_FRAME)
        .map(|_| (rng.random_range(0.0..1440.0), rng.random_range(0.0..1080.0)))
        .collect();
    let mut gap = vec![0usize; POINTS_PER_FRAME];
    let frames = (0..len)
        .map(|k| {
            let mut f = KeypointFrame::empty(k as u64, 30.0);
            for i in 0..POINTS_PER_FRAME {
                pos[i].0 += rng.random_range(-6.0..6.0);
                pos[i].1 += rng.random_range(-6.0..6.0);
                if gap[i] == 0 && rng.random_bool(0.02) {
                    gap[i] = rng.random_range(1..20);
                }
                let missing = if gap[i] > 0 {
                    gap[i] -= 1;
                    true
                } else {
                    rng.random_bool(dropout)
                };
                if !missing {
                    *f.point_mut(i) = Some(Point2::new(pos[i].0, pos[i].1));
                }
            }
            f
        })
        .collect();
    VideoSample::new(format!("rand-{len}"), None, frames).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One random (net, input) gradient check of a small rectifier regressor.
pub fn mlp_draw(seed: u64) -> stadnet::nn::GradCheckReport {
    use stadnet::nn::{Activation, Mlp};
    let mut r = rng(seed);
    let depth = r.random_range(1..5);
    let mut sizes = vec![r.random_range(1..8)];
    for _ in 0..depth {
        sizes.push(r.random_range(1..8));
    }
    sizes.push(1);
    let mlp = Mlp::new(&sizes, Activation::Relu, Activation::Identity, &mut r);
    let x: Vec<f64> = (0..sizes[0]).map(|_| r.random_range(-2.0..2.0)).collect();
    let d = r.random_range(-1.0..1.0);
    stadnet::depth::gradient_check(&mlp, &x, d)
}

/// One random (net, input) gradient check of an LSTM through time, with a
/// random linear read-out of every hidden state as the loss.
pub fn lstm_draw(seed: u64) -> stadnet::nn::GradCheckReport {
    use stadnet::lstm::Lstm;
    let mut r = rng(seed);
    let (inputs, hidden, steps) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..8));
    let l = Lstm::init(inputs, hidden, &mut r);
    let xs: Vec<Vec<f64>> = (0..steps).map(|_| (0..inputs).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let readout: Vec<Vec<f64>> = (0..steps).map(|_| (0..hidden).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let loss = |m: &Lstm| {
        m.forward(&xs)
            .iter()
            .zip(&readout)
            .map(|(s, w)| s.h.iter().zip(w).map(|(h, w)| h * w).sum::<f64>())
            .sum::<f64>()
    };
    let trace = l.forward(&xs);
    let mut g = Lstm::zeros(inputs, hidden);
    l.backward(&trace, &readout, &mut g, false);
    stadnet::nn::check_gradients(&l, &g, 1e-5, loss, |_, _| false)
}

/// Neck-vector inputs from the synthetic generator with targets that are an
/// exact linear map of the standardized inputs (mean 1, std 0.2).
pub fn linear_depth_pairs(n: usize, seed: u64) -> stadnet::depth::DepthDataset {
    use stadnet::depth::{DepthDataset, DepthTarget};
    use stadnet::sequence::StandardizationStats;
    let src = stadnet::synth::generate_depth_pairs(DepthTarget::Neck, n, seed, Default::default()).unwrap();
    let dim = DepthTarget::Neck.input_dim();
    let stats = StandardizationStats::fit(src.inputs.iter().map(|x| x.as_slice()), dim).unwrap();
    let mut r = rng(seed ^ 0xa5a5);
    let w: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let raw: Vec<f64> = src
        .inputs
        .iter()
        .map(|x| {
            let mut z = x.clone();
            stats.apply(&mut z).unwrap();
            w.iter().zip(&z).map(|(a, b)| a * b).sum()
        })
        .collect();
    let m = raw.iter().sum::<f64>() / n as f64;
    let sd = (raw.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
    let mut out = DepthDataset::new(DepthTarget::Neck);
    for (x, l) in src.inputs.into_iter().zip(raw) {
        out.push(x, 1.0 + 0.2 * (l - m) / sd);
    }
    out
}

/// Mean squared error of a 1-nearest-neighbour regressor on standardized inputs.
pub fn nearest_neighbour_mse(train: &stadnet::depth::DepthDataset, test: &stadnet::depth::DepthDataset) -> f64 {
    use stadnet::sequence::StandardizationStats;
    let dim = train.inputs[0].len();
    let stats = StandardizationStats::fit(train.inputs.iter().map(|x| x.as_slice()), dim).unwrap();
    let z = |x: &Vec<f64>| {
        let mut v = x.clone();
        stats.apply(&mut v).unwrap();
        v
    };
    let zt: Vec<Vec<f64>> = train.inputs.iter().map(z).collect();
    let mut se = 0.0;
    for (x, d) in test.inputs.iter().zip(&test.depths) {
        let q = z(x);
        let mut best = (f64::INFINITY, 0.0);
        for (p, pd) in zt.iter().zip(&train.depths) {
            let dist: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.0 {
                best = (dist, *pd);
            }
        }
        se += (best.1 - d) * (best.1 - d);
    }
    se / test.len() as f64
}

pub const SMALL_CONFIG: &str = r#"
[synth]
classes = 3
per_class = 8
depth_pairs = 300
seed = 21

[depth]
epochs = 4

[gesture]
phase_epochs = [2, 2, 2, 3]
patience = 3

[prepare]
split = "0.5/0.25/0.25"
"#;

pub fn stadnet_cmd(jobs: usize) -> std::process::Command {
    let mut c = std::process::Command::new(env!("CARGO_BIN_EXE_stadnet"));
    c.arg("--jobs").arg(jobs.to_string());
    c.env("RUST_LOG", "warn");
    c
}

fn run_ok(mut c: std::process::Command) -> String {
    let out = c.output().expect("spawn stadnet");
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        c.get_args().collect::<Vec<_>>(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs every stage from synthetic generation to evaluation under `dir`.
/// Returns the stdout of the eval stage.
pub fn run_cli_pipeline(dir: &std::path::Path, config: &str, jobs: usize) -> String {
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, config).unwrap();
    let p = |name: &str| dir.join(name);
    let step = |args: &[&std::ffi::OsStr]| {
        let mut c = stadnet_cmd(jobs);
        c.arg("--config").arg(&cfg).args(args);
        run_ok(c)
    };
    let os = |s: &str| std::ffi::OsString::from(s);
    let call = |v: Vec<std::ffi::OsString>| {
        let refs: Vec<&std::ffi::OsStr> = v.iter().map(|s| s.as_os_str()).collect();
        step(&refs)
    };
    call(vec![os("synth-gen"), os("--out"), p("synth").into()]);
    call(vec![os("filter"), os("--in"), p("synth/stream.jsonl").into(), os("--out"), p("filtered.jsonl").into()]);
    for which in ["neck", "left", "right"] {
        call(vec![
            os("train-depth"),
            os("--which"),
            os(which),
            os("--data"),
            p(&format!("synth/depth_{which}.stadnet")).into(),
            os("--out"),
            p(&format!("depth_{which}.json")).into(),
            os("--data-parallel"),
        ]);
    }
    call(vec![
        os("featurize"),
        os("--in"),
        p("filtered.jsonl").into(),
        os("--out"),
        p("features").into(),
        os("--depth-neck"),
        p("depth_neck.json").into(),
        os("--depth-left"),
        p("depth_left.json").into(),
        os("--depth-right"),
        p("depth_right.json").into(),
    ]);
    call(vec![os("prepare"), os("--in"), p("features").into(), os("--out"), p("dataset.stadnet").into()]);
    call(vec![os("train"), os("--data"), p("dataset.stadnet").into(), os("--out"), p("model.json").into()]);
    call(vec![
        os("eval"),
        os("--model"),
        p("model.json").into(),
        os("--data"),
        p("dataset.stadnet").into(),
        os("--confusion"),
        p("confusion.csv").into(),
        os("--metrics"),
        p("metrics.json").into(),
    ])
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(root: &std::path::Path, d: &std::path::Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
