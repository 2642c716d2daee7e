//! Prints where the shipped calibration stands against the bench targets:
//! retard anchors, throttle parity, per-grade operating points and level-ground factors.

use scooterbench_core::config::Config;
use scooterbench_core::harness::{road_vs_dyno, Bench, LoadModel};
use scooterbench_core::powertrain::Strategy;
use scooterbench_core::Result;

fn report(cfg: &Config) -> Result<()> {
    let bench = Bench::new(cfg.clone())?;
    let pt = &bench.powertrain;
    println!("retard law knots: {:?}", bench.law.knots().collect::<Vec<_>>());
    let load = |g: f64, v: f64| bench.plant(LoadModel::Road, g).load_force(v);
    println!(
        "closed-throttle force at 48.7: {:.2} N, downhill surplus at -8 %: {:.2} N",
        pt.force(0.0, 48.7, 0.0),
        -load(-0.08, 48.7)
    );
    println!("WOT force at 48.7: {:.2} N, +2 % load {:.2} N", pt.force(100.0, 48.7, 0.0), load(0.02, 48.7));
    for r in road_vs_dyno(cfg)? {
        println!("steady throttle {:>4} km/h: road {:.2} dyno {:.2}", r.speed, r.road, r.dyno);
    }
    let mut level = Vec::new();
    for &g in &[-0.08, -0.05, 0.0, 0.01, 0.015, 0.02] {
        for s in [Strategy::Or, Strategy::Vc] {
            let p = bench.run_point(g, s, 1)?;
            let settle30 = p
                .telemetry
                .iter()
                .rposition(|r| (r.v - 48.7).abs() > 0.1)
                .map(|i| p.telemetry[i].t)
                .unwrap_or(0.0);
            println!(
                "{g:+.3} {s}: v {:.3} thr {:.2} off {:.2} duty {:.2} flow {:.3} kg/h exhT {:.1} cylT {:.1} combT {:.1} lam {:.4} pmax {:.2} imep {:.3} last>0.1 at {:.2}s settled {:?}",
                p.mean_velocity,
                p.mean_throttle,
                p.engine.ignition_offset,
                p.engine.injector_duty,
                p.flags.efm_reading,
                p.engine.exhaust_temp,
                p.engine.cylinder_temp,
                p.engine.combustion_temp,
                p.engine.lambda,
                p.engine.max_avg_pressure,
                p.engine.imep,
                settle30,
                p.flags.settled_at
            );
            println!("      tail {:?}", p.tailpipe);
            println!("      raw  {:?}", p.engine_out);
            if g == 0.0 {
                level.push(p);
            }
        }
    }
    let (or, vc) = (&level[0], &level[1]);
    println!("pressure ratio {:.3} delta imep {:.3}", vc.engine.max_avg_pressure / or.engine.max_avg_pressure, vc.engine.imep - or.engine.imep);
    println!("duty improvement {:.2} %", (or.engine.injector_duty / vc.engine.injector_duty - 1.0) * 100.0);
    for (q, f) in scooterbench_core::emissions::improvement_factors(&or.record, &vc.record) {
        println!("factor {:?}: {:.3}", q, f);
    }
    println!("gas T or {:.1} vc {:.1}", or.record.exhaust_temp, vc.record.exhaust_temp);
    println!("per km or {:?}\n       vc {:?}", or.record.per_km, vc.record.per_km);
    Ok(())
}

fn main() -> Result<()> {
    let cfg = Config::default();
    report(&cfg)
}
