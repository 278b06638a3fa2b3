use criterion::{black_box, criterion_group, criterion_main, Criterion};
use groundloop::planner::{make_plan, parse_command};
use groundloop::world::relation_holds;
use groundloop::SpatialRelation;
use groundloop_bench::busiest_scene;

const RELATIONS: [SpatialRelation; 7] = [
    SpatialRelation::LeftOf,
    SpatialRelation::RightOf,
    SpatialRelation::Above,
    SpatialRelation::Below,
    SpatialRelation::Inside,
    SpatialRelation::Contains,
    SpatialRelation::Overlaps,
];

fn relations(c: &mut Criterion) {
    let scene = busiest_scene(20);
    let ids = scene.visible_ids();
    c.bench_function("relation_matrix", |b| {
        b.iter(|| {
            let mut n = 0usize;
            for a in &ids {
                for o in ids.iter().filter(|o| *o != a) {
                    for rel in RELATIONS {
                        n += relation_holds(rel, a, o, &scene, 0.02).unwrap() as usize;
                    }
                }
            }
            black_box(n)
        })
    });
}

fn grammar(c: &mut Criterion) {
    let commands = [
        "point to the red ball",
        "count the cups then describe it",
        "what is left of the blue box that is above the green cup",
        "move the lamp to right of the chair and is it below the shelf",
    ];
    c.bench_function("parse_and_plan", |b| {
        b.iter(|| {
            for cmd in commands {
                black_box(make_plan(&parse_command(black_box(cmd))));
            }
        })
    });
}

criterion_group!(benches, relations, grammar);
criterion_main!(benches);
