//! `nck functionals` on an atomic fixture against a committed golden file. The
//! golden values come from the brute-force sums below, which share no code with
//! the library: kernels written out from their definitions, the x₃ integral by a
//! cosine-mapped composite Simpson rule.

use std::path::PathBuf;
use std::process::Command;

use serde_json::{json, Value};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

const PHIS: [f64; 2] = [2.0, 1.5];

fn atoms() -> Vec<(f64, f64)> {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(fixture("atomic.json")).unwrap()).unwrap();
    assert_eq!(doc["atom0"].as_f64().unwrap(), 0.0);
    doc["atoms"].as_array().unwrap().iter().map(|p| (p[0].as_f64().unwrap(), p[1].as_f64().unwrap())).collect()
}

fn w_kernel(x1: f64, x2: f64, x3: f64) -> f64 {
    let x4 = (x1 + x2 - x3).max(0.0);
    if x1 <= 0.0 || x2 <= 0.0 || x3 <= 0.0 || x4 <= 0.0 {
        return 0.0;
    }
    let m = [x1, x2, x3, x4].into_iter().fold(f64::INFINITY, f64::min);
    m.sqrt() / (x1 * x2 * x3).sqrt()
}

fn simpson_cos<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    // x = a + (b-a)(1-cos πθ)/2 flattens square-root behaviour at both ends.
    let g = |th: f64| {
        let x = a + 0.5 * (b - a) * (1.0 - (std::f64::consts::PI * th).cos());
        f(x) * 0.5 * (b - a) * std::f64::consts::PI * (std::f64::consts::PI * th).sin()
    };
    let h = 1.0 / n as f64;
    let mut s = g(0.0) + g(1.0);
    for i in 1..n {
        s += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn oracle(a: f64) -> Value {
    let phi = |x: f64| x.powf(a);
    let int_phi = |x: f64| x.powf(a + 1.0) / (a + 1.0);
    let g = atoms();
    let mut q2 = 0.0;
    for &(x, wx) in &g {
        for &(y, wy) in &g {
            let lam = phi(x + y) + phi((x - y).abs()) - 2.0 * phi(x.max(y));
            q2 += lam / (x * y).sqrt() * wx * wy;
        }
    }
    let q1: f64 = g.iter().map(|&(x, w)| (x * (phi(0.0) + phi(x)) - 2.0 * int_phi(x)) / x.sqrt() * w).sum();
    let q1t: f64 = g.iter().map(|&(x, w)| (x * phi(x) - 2.0 * int_phi(x)) / x.sqrt() * w).sum();
    let half: f64 = g.iter().map(|&(x, w)| x.sqrt() * w).sum();

    let dphi = |x1: f64, x2: f64, x3: f64| phi((x1 + x2 - x3).max(0.0)) + phi(x3) - phi(x2) - phi(x1);
    let mut cubic = 0.0;
    for &(x1, w1) in &g {
        for &(x2, w2) in &g {
            for &(x3, w3) in &g {
                cubic += w1 * w2 * w3 * w_kernel(x1, x2, x3) * dphi(x1, x2, x3);
            }
        }
    }
    let mut quadratic = 0.0;
    for &(x1, w1) in &g {
        for &(x2, w2) in &g {
            let top = x1 + x2;
            let mut br = vec![0.0, x1, x2, (x1 - x2).abs(), 0.5 * top, top];
            br.sort_by(f64::total_cmp);
            br.dedup_by(|p, q| (*p - *q).abs() < 1e-14);
            let f = |x3: f64| x3.sqrt() * w_kernel(x1, x2, x3) * dphi(x1, x2, x3);
            let v: f64 = br.windows(2).map(|s| simpson_cos(f, s[0], s[1], 20_000)).sum();
            quadratic += 0.5 * w1 * w2 * v;
        }
    }
    json!({
        "q3": q2 - q1,
        "q3_tilde": q2 - q1t,
        "half_moment": half,
        "q4": cubic + quadratic,
        "q4_cubic": cubic,
        "q4_quadratic": quadratic,
    })
}

fn oracle_doc() -> Value {
    let mut m = serde_json::Map::new();
    for a in PHIS {
        m.insert(format!("pow:{a}"), oracle(a));
    }
    json!({ "fixture": "atomic.json", "values": m })
}

fn golden() -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture("atomic_golden.json")).unwrap()).unwrap()
}

fn close(a: f64, b: f64, rtol: f64, scale: f64) -> bool {
    (a - b).abs() <= rtol * scale.max(1.0)
}

/// Rewrites the golden file. Run with `cargo test -p nck-cli --test functionals_golden -- --ignored`.
#[test]
#[ignore]
fn regenerate_golden() {
    let text = serde_json::to_string_pretty(&oracle_doc()).unwrap() + "\n";
    std::fs::write(fixture("atomic_golden.json"), text).unwrap();
}

#[test]
fn golden_file_is_the_oracle_output() {
    let (o, g) = (oracle_doc(), golden());
    for a in PHIS {
        let k = format!("pow:{a}");
        for f in ["q3", "q3_tilde", "half_moment", "q4", "q4_cubic", "q4_quadratic"] {
            let (x, y) = (o["values"][&k][f].as_f64().unwrap(), g["values"][&k][f].as_f64().unwrap());
            assert!(close(x, y, 1e-13, y.abs()), "{k}.{f}: oracle {x} vs golden {y}");
        }
    }
}

#[test]
fn cli_output_matches_golden() {
    let out = Command::new(env!("CARGO_BIN_EXE_nck"))
        .args(["functionals", "--measure"])
        .arg(fixture("atomic.json"))
        .args(["--phi", "pow:2", "--phi", "pow:1.5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let docs: Vec<Value> = serde_json::from_slice(&out.stdout).unwrap();
    let g = golden();
    for (doc, a) in docs.iter().zip(PHIS) {
        let want = &g["values"][format!("pow:{a}")];
        let v = |d: &Value, p: &str| d.pointer(p).and_then(Value::as_f64).unwrap();
        let q3_scale = v(doc, "/q3_quadratic").abs() + v(doc, "/q3_linear").abs();
        assert!(close(v(doc, "/q3"), v(want, "/q3"), 1e-12, q3_scale));
        assert!(close(v(doc, "/q3_tilde"), v(want, "/q3_tilde"), 1e-12, q3_scale));
        assert!(close(v(doc, "/half_moment"), v(want, "/half_moment"), 1e-14, 1.0));
        assert!(v(doc, "/identity_residual").abs() <= 1e-12 * q3_scale.max(1.0));
        // The cubic part is an exact sum on both sides; the quadratic part is
        // limited by the oracle's Simpson rule.
        let scale = v(doc, "/q4_full/scale");
        assert!(close(v(doc, "/q4_full/cubic"), v(want, "/q4_cubic"), 1e-12, scale));
        assert!(
            close(v(doc, "/q4_full/value"), v(want, "/q4"), 1e-8, scale),
            "{} vs {}",
            v(doc, "/q4_full/value"),
            v(want, "/q4")
        );
        assert_eq!(v(doc, "/q4_full/value"), v(doc, "/q4_script/value"));
    }
}
