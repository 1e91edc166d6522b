use criterion::{black_box, criterion_group, criterion_main, Criterion};
use truncheck_core::bitvec::{Assignment, BvExpr, CmpOp, VarId};
use truncheck_core::isa::parse_program;
use truncheck_core::solver::{solve, InputSlot, JobId, SolverConfig, SolverJob};
use truncheck_core::{analyze, run_program, AnalyzeOptions, EngineConfig};

const CALL_HEAVY: &str = "\
    mov rbp, rsp
    read_i32 DWORD PTR [rbp-16]
    mov eax, DWORD PTR [rbp-16]
    movsx edx, al
    mov eax, DWORD PTR [rbp-16]
    cwde
    push edx
    push eax
    call trim_pair
    exit

trim_pair:
    push rbp
    mov rbp, rsp
    mov edx, DWORD PTR [rbp+16]
    mov ecx, DWORD PTR [rbp+20]
    mov WORD PTR [rbp-12], dx
    mov edx, ecx
    mov BYTE PTR [rbp-16], dl
    print WORD PTR [rbp-12]
    print BYTE PTR [rbp-16]
    pop rbp
    ret
";

fn bench_parse(c: &mut Criterion) {
    c.bench_function("parse call-heavy program", |b| {
        b.iter(|| parse_program(black_box(CALL_HEAVY)).unwrap())
    });
}

fn bench_run(c: &mut Criterion) {
    let program = parse_program(CALL_HEAVY).unwrap();
    let seed = [100u8, 0, 0, 0];
    let config = EngineConfig::default();
    c.bench_function("concolic run", |b| {
        b.iter(|| run_program(black_box(&program), black_box(&seed), &config).unwrap())
    });
}

fn bench_analyze(c: &mut Criterion) {
    let program = parse_program(CALL_HEAVY).unwrap();
    let seed = [100u8, 0, 0, 0];
    let opts = AnalyzeOptions::default();
    c.bench_function("analyze with solving", |b| {
        b.iter(|| analyze(black_box(&program), black_box(&seed), &opts).unwrap())
    });
}

fn bench_solver(c: &mut Criterion) {
    // a constraint satisfied only near the top of the 16-bit range, so
    // the enumerator sweeps most of its space before answering
    let v = BvExpr::var(VarId(0), "v", 16).unwrap();
    let limit = BvExpr::constant(0xFF00, 16).unwrap();
    let job = SolverJob {
        id: JobId(0),
        constraints: vec![BvExpr::cmp(CmpOp::Ugt, &v, &limit).unwrap()],
        layout: vec![InputSlot {
            var: VarId(0),
            width: 16,
            read_index: 0,
            byte_offset: 0,
        }],
    };
    let config = SolverConfig::default();
    c.bench_function("enumerate 16-bit constraint", |b| {
        b.iter(|| solve(black_box(&job), &config).unwrap())
    });
}

fn bench_eval(c: &mut Criterion) {
    let v = BvExpr::var(VarId(0), "v", 32).unwrap();
    let sum = BvExpr::bin(
        truncheck_core::bitvec::BinOp::Add,
        &v,
        &BvExpr::constant(0x1234, 32).unwrap(),
    )
    .unwrap();
    let shifted = BvExpr::extract(31, 16, &sum).unwrap();
    let pred = BvExpr::cmp(CmpOp::Ne, &shifted, &BvExpr::constant(0, 16).unwrap()).unwrap();
    let mut a = Assignment::new();
    a.set(VarId(0), 0xFFFF_0000);
    c.bench_function("evaluate truncation predicate", |b| {
        b.iter(|| pred.eval(black_box(&a)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_parse,
    bench_run,
    bench_analyze,
    bench_solver,
    bench_eval
);
criterion_main!(benches);
