//! Micro-benchmark of matvec kernel variants (manual).
use std::hint::black_box;
use std::time::Instant;

fn dot_a(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    for (x, y) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let rem = a.len() / 4 * 4;
    let mut tail = 0.0;
    for i in rem..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn dot_b(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    for (x, y) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let rem = a.len() / 8 * 8;
    let mut tail = 0.0;
    for i in rem..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Four rows at once, sharing the x loads.
fn matvec4(w: &[f64], x: &[f64], out: &mut [f64], d: usize) {
    let mut o = 0;
    while o + 4 <= d {
        let r0 = &w[o * d..(o + 1) * d];
        let r1 = &w[(o + 1) * d..(o + 2) * d];
        let r2 = &w[(o + 2) * d..(o + 3) * d];
        let r3 = &w[(o + 3) * d..(o + 4) * d];
        let mut a0 = 0.0;
        let mut a1 = 0.0;
        let mut a2 = 0.0;
        let mut a3 = 0.0;
        for j in 0..d {
            let xj = x[j];
            a0 += r0[j] * xj;
            a1 += r1[j] * xj;
            a2 += r2[j] * xj;
            a3 += r3[j] * xj;
        }
        out[o] = a0;
        out[o + 1] = a1;
        out[o + 2] = a2;
        out[o + 3] = a3;
        o += 4;
    }
    while o < d {
        out[o] = dot_a(&w[o * d..(o + 1) * d], x);
        o += 1;
    }
}

fn main() {
    let d = 64usize;
    let w: Vec<f64> = (0..d * d).map(|i| (i as f64 * 0.37).sin()).collect();
    let x: Vec<f64> = (0..d).map(|i| (i as f64 * 0.21).cos()).collect();
    let mut out = vec![0.0; d];
    let reps = 24320 * 3 * 6;

    let t = Instant::now();
    for _ in 0..reps {
        for o in 0..d {
            out[o] = dot_a(&w[o * d..(o + 1) * d], black_box(&x));
        }
        black_box(&mut out);
    }
    println!(
        "dot_a (chunks4): {:?} ({:.2} GFLOP/s)",
        t.elapsed(),
        (reps * d * d * 2) as f64 / t.elapsed().as_secs_f64() / 1e9
    );

    let t = Instant::now();
    for _ in 0..reps {
        for o in 0..d {
            out[o] = dot_b(&w[o * d..(o + 1) * d], black_box(&x));
        }
        black_box(&mut out);
    }
    println!(
        "dot_b (chunks8): {:?} ({:.2} GFLOP/s)",
        t.elapsed(),
        (reps * d * d * 2) as f64 / t.elapsed().as_secs_f64() / 1e9
    );

    let t = Instant::now();
    for _ in 0..reps {
        matvec4(&w, black_box(&x), &mut out, d);
        black_box(&mut out);
    }
    println!(
        "matvec4 (row-blocked): {:?} ({:.2} GFLOP/s)",
        t.elapsed(),
        (reps * d * d * 2) as f64 / t.elapsed().as_secs_f64() / 1e9
    );
}
