use flatcircle::*;
use flatcircle::num::float;
use rug::Float;
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
    let prec = 256;
    let pol = PrecisionPolicy::new(prec).unwrap();
    let f = template(prec, 2.0, 2.0, 0.35, 0.65, 0.5);
    for depth in [4usize, 8, 12] {
        let t0 = Instant::now();
        let r = tune_to_fibonacci(&f, TuneParameter::X2,
            (float(prec, 1e-4), float(prec, 0.3499)), depth, &pol);
        match r {
            Ok(rep) => {
                let tr = iterate(&rep.map, &IterateOptions::fast(depth + 1), &pol);
                println!("(2,2) depth {depth}: param={} iters={} achieved={} extra={} [{:?}]",
                    rep.parameter.to_string_radix(10, Some(30)), rep.iterations, rep.achieved_depth,
                    tr.depth(), t0.elapsed());
                if depth == 12 {
                    for rec in tr.levels.iter() {
                        println!("  n={} alpha={} S1={} dag={}", rec.level,
                          rec.alpha.to_f64(), rec.s_coords[0].to_f64(), rec.dag_depth);
                    }
                }
            }
            Err(e) => println!("(2,2) depth {depth}: ERROR {e}"),
        }
    }
}
