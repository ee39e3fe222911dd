use criterion::{criterion_group, criterion_main, Criterion};

use lvseg::bundle::{read_bundle, write_bundle, StudyBundle};
use lvseg::phantom::{generate, Phantom, PhantomSpec};
use lvseg::pipeline::{run_into, RunState, Stage};
use lvseg::register::{define_roi, pattern_intensity, register_translation, PatternIntensityParams};
use lvseg::{PipelineConfig, Vec2};

fn phantom() -> Phantom {
    generate(&PhantomSpec { seed: 7, ..PhantomSpec::default() }).unwrap()
}

fn bundle(ph: &Phantom) -> StudyBundle {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(ph, dir.path()).unwrap();
    read_bundle(dir.path()).unwrap()
}

fn registration(c: &mut Criterion) {
    let ph = phantom();
    let k = ph.cine_sa.len() / 2;
    let (cine, lge) = (&ph.cine_sa[k], &ph.lge_sa[k]);
    let epi: Vec<Vec2> = ph.truth_cine.sa[k].epi.iter().map(|q| cine.world_to_image(q)).collect();
    let roi = define_roi(&epi, cine.width(), cine.height()).unwrap();
    let p = PatternIntensityParams::default();
    let fixed = cine.pixels.window(roi.u0 as i64, roi.v0 as i64, roi.width, roi.height).unwrap();
    let moving = lge.pixels.window(roi.u0 as i64, roi.v0 as i64, roi.width, roi.height).unwrap();
    c.bench_function("pattern_intensity", |b| b.iter(|| pattern_intensity(&fixed, &moving, &p).unwrap()));
    c.bench_function("register_translation_r10", |b| {
        b.iter(|| register_translation(cine, lge, &roi, 10, &p).unwrap())
    });
}

fn stages(c: &mut Criterion) {
    let bundle = bundle(&phantom());
    let config = PipelineConfig::default();
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    for (name, until) in [("through_detect", Stage::Detect), ("through_deform", Stage::Deform)] {
        g.bench_function(name, |b| {
            b.iter(|| {
                let mut state = RunState::new(&bundle, &config);
                run_into(&bundle, &config, until, &mut state).unwrap();
                state
            })
        });
    }
    g.finish();
}

criterion_group!(benches, registration, stages);
criterion_main!(benches);
