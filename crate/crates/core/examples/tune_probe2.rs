use flatcircle::*;
use flatcircle::num::float;
use std::time::Instant;

fn template(prec: u32, l1: f64, l2: f64, x3: f64, x4: f64, s: f64) -> MapX {
    MapX::new(
        float(prec, -1.0), float(prec, 0.1),
        float(prec, x3), float(prec, x4), float(prec, s),
        float(prec, l1), float(prec, l2),
        Diffeo::identity(prec), Diffeo::identity(prec), Diffeo::identity(prec),
    ).unwrap()
}

fn main() {
    // (3,3) bounded regime at 256 bits, depth 13
    let prec = 256;
    let pol = PrecisionPolicy::new(prec).unwrap();
    let f = template(prec, 3.0, 3.0, 0.4, 0.6, 0.5);
    let t0 = Instant::now();
    match tune_to_fibonacci(&f, TuneParameter::X2, (float(prec, 1e-4), float(prec, 0.3999)), 13, &pol) {
        Ok(rep) => {
            println!("(3,3) depth 13: iters={} [{:?}]", rep.iterations, t0.elapsed());
            let tr = iterate(&rep.map, &IterateOptions::fast(13), &pol);
            for rec in &tr.levels {
                let wmax = rec.w.iter().map(|y| y.to_f64().abs()).fold(0.0, f64::max);
                println!("  n={} alpha={:.6} |w|={:.4} S1={:.5}", rec.level, rec.alpha.to_f64(), wmax, rec.s_coords[0].to_f64());
            }
        }
        Err(e) => println!("(3,3): ERROR {e}"),
    }

    // (1,2) degenerate regime, large flat interval, 512 bits, depth 14
    let prec = 512;
    let pol = PrecisionPolicy::new(prec).unwrap();
    let f = template(prec, 1.0, 2.0, 0.03, 0.97, 0.4);
    let t0 = Instant::now();
    match tune_to_fibonacci(&f, TuneParameter::X2, (float(prec, 1e-8), float(prec, 0.0299)), 14, &pol) {
        Ok(rep) => {
            println!("(1,2) depth 14: iters={} [{:?}]", rep.iterations, t0.elapsed());
            let tr = iterate(&rep.map, &IterateOptions::fast(14), &pol);
            for rec in &tr.levels {
                let wmax = rec.w.iter().map(|y| y.to_f64().abs()).fold(0.0, f64::max);
                let lnl = rec.alpha.clone().ln().to_f64();
                println!("  n={} ln(alpha)={:.4} |w|={:.4} S1={:.6e}", rec.level, lnl, wmax, rec.s_coords[0].to_f64());
            }
        }
        Err(e) => println!("(1,2): ERROR {e}"),
    }
}
